//! Linear layers and named parameter lists shared by every model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;

/// Standard deviation of the normal weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Rounds to the nearest `f32`, the precision parameters are stored at.
pub fn snap_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = f64::from(*v as f32);
    }
}

/// `x · W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut weight = Tensor::randn(inputs, outputs, INIT_STD, rng);
        snap_f32(&mut weight);
        Self {
            weight,
            bias: Tensor::zeros(1, outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(inputs, outputs),
            bias: Tensor::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    /// Registers both tensors as trainable leaves, in `(weight, bias)` order.
    pub fn bind(&self, g: &mut Graph, order: &mut Vec<Var>) -> LinearVars {
        let weight = g.param(self.weight.clone());
        let bias = g.param(self.bias.clone());
        order.extend([weight, bias]);
        LinearVars { weight, bias }
    }

    /// Registers both tensors as constants.
    pub fn bind_frozen(&self, g: &mut Graph) -> LinearVars {
        LinearVars {
            weight: g.constant(self.weight.clone()),
            bias: g.constant(self.bias.clone()),
        }
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    /// Plain evaluation without recording.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = x.matmul(&self.weight)?;
        let b = self.bias.data();
        for r in 0..out.rows() {
            for (o, bv) in out.row_slice_mut(r).iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(out)
    }
}

impl LinearVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = g.matmul(x, self.weight)?;
        g.add_row(h, self.bias)
    }
}

/// Anything holding trainable tensors in a fixed order.
pub trait Parameterized {
    /// `(name, tensor)` pairs in binding order.
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn push_linear<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, l: &'a Linear) {
    out.push((format!("{prefix}.weight"), &l.weight));
    out.push((format!("{prefix}.bias"), &l.bias));
}

impl Parameterized for Linear {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        push_linear(&mut v, "linear", self);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        Linear::tensors_mut(self).into_iter().collect()
    }
}

/// Collects gradients for `vars` (zeros where none reached a leaf).
pub fn collect_grads(g: &Graph, vars: &[Var]) -> Vec<Tensor> {
    vars.iter()
        .map(|v| {
            g.grad(*v).cloned().unwrap_or_else(|| {
                let (r, c) = g.value(*v).shape();
                Tensor::zeros(r, c)
            })
        })
        .collect()
}
