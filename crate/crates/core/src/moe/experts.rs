use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dispatch::RoutingPlan;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, LinearVars};

pub const DEFAULT_HIDDEN: usize = 256;
pub const N_CLASSES: usize = 3;

/// `linear(d -> h)`, ReLU, `linear(h -> 3)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub input: Linear,
    pub output: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct ExpertVars {
    pub input: LinearVars,
    pub output: LinearVars,
}

impl Expert {
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            input: Linear::init(dim, hidden, rng),
            output: Linear::init(hidden, N_CLASSES, rng),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.input.apply(x)?.map(|v| v.max(0.0));
        self.output.apply(&h)
    }
}

impl ExpertVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.input.forward(g, x)?;
        let h = g.relu(h);
        self.output.forward(g, h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertStack {
    pub experts: Vec<Expert>,
}

impl ExpertStack {
    pub fn init<R: Rng + ?Sized>(n_experts: usize, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            experts: (0..n_experts).map(|_| Expert::init(dim, hidden, rng)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.experts.first().map_or(0, |e| e.input.inputs())
    }

    pub fn bind(&self, g: &mut Graph, order: &mut Vec<Var>) -> Vec<ExpertVars> {
        self.experts
            .iter()
            .map(|e| ExpertVars {
                input: e.input.bind(g, order),
                output: e.output.bind(g, order),
            })
            .collect()
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<ExpertVars> {
        self.experts
            .iter()
            .map(|e| ExpertVars {
                input: e.input.bind_frozen(g),
                output: e.output.bind_frozen(g),
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim("expert_forward", x.shape(), (self.input_dim(), DEFAULT_HIDDEN)));
        }
        Ok(())
    }

    /// Every expert on every token.
    pub fn forward_dense(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        self.experts.iter().map(|e| e.apply(x)).collect()
    }

    /// Each expert only on the tokens the plan sends it, scattered back to
    /// `B x 3` with zero rows elsewhere.
    pub fn forward_sparse(&self, x: &Tensor, plan: &RoutingPlan) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        self.experts
            .iter()
            .enumerate()
            .map(|(e, expert)| {
                let tokens = plan.tokens_for(e);
                let mut full = Tensor::zeros(x.rows(), N_CLASSES);
                if tokens.is_empty() {
                    return Ok(full);
                }
                let rows: Vec<Vec<f64>> = tokens.iter().map(|&i| x.row_slice(i).to_vec()).collect();
                let out = expert.apply(&Tensor::from_rows(&rows)?)?;
                for (k, &i) in tokens.iter().enumerate() {
                    full.row_slice_mut(i).copy_from_slice(out.row_slice(k));
                }
                Ok(full)
            })
            .collect()
    }
}
