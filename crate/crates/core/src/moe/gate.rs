use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, LinearVars};

/// Raw routing scores `a` and their row softmax `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateScores {
    pub logits: Tensor,
    pub probs: Tensor,
}

impl GateScores {
    pub fn from_logits(logits: Tensor) -> Self {
        let probs = softmax_rows(&logits);
        Self { logits, probs }
    }

    pub fn n_tokens(&self) -> usize {
        self.logits.rows()
    }

    pub fn n_experts(&self) -> usize {
        self.logits.cols()
    }
}

/// Two linear layers `d -> d/2 -> E` with no activation in between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct GateVars {
    pub hidden: LinearVars,
    pub out: LinearVars,
}

impl GateParams {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, n_experts: usize, rng: &mut R) -> Self {
        let mid = (input_dim / 2).max(1);
        Self {
            hidden: Linear::init(input_dim, mid, rng),
            out: Linear::init(mid, n_experts, rng),
        }
    }

    pub fn zeros(input_dim: usize, n_experts: usize) -> Self {
        let mid = (input_dim / 2).max(1);
        Self {
            hidden: Linear::zeros(input_dim, mid),
            out: Linear::zeros(mid, n_experts),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn n_experts(&self) -> usize {
        self.out.outputs()
    }

    pub fn bind(&self, g: &mut Graph, order: &mut Vec<Var>) -> GateVars {
        GateVars {
            hidden: self.hidden.bind(g, order),
            out: self.out.bind(g, order),
        }
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> GateVars {
        GateVars {
            hidden: self.hidden.bind_frozen(g),
            out: self.out.bind_frozen(g),
        }
    }
}

impl GateVars {
    /// Gate logits for `x`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, x)?;
        self.out.forward(g, h)
    }
}

/// Plain gate evaluation.
pub fn gate_forward(x: &Tensor, params: &GateParams) -> Result<GateScores> {
    if x.cols() != params.input_dim() {
        return Err(Error::dim(
            "gate_forward",
            x.shape(),
            (params.input_dim(), params.hidden.outputs()),
        ));
    }
    let logits = params.out.apply(&params.hidden.apply(x)?)?;
    Ok(GateScores::from_logits(logits))
}
