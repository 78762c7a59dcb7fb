use serde::{Deserialize, Serialize};

use crate::autodiff::{clamp_prob, CustomOp, Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.011822;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_aux: f64,
    pub lambda_mse: f64,
    pub enable_aux: bool,
    pub enable_mse: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_aux: DEFAULT_LAMBDA,
            lambda_mse: DEFAULT_LAMBDA,
            enable_aux: true,
            enable_mse: true,
        }
    }
}

impl LossWeights {
    pub fn disabled() -> Self {
        Self {
            enable_aux: false,
            enable_mse: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_aux >= 0.0 && self.lambda_mse >= 0.0) {
            return Err(Error::Usage("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mean categorical cross-entropy with probabilities clamped to `[1e-12, 1]`.
pub fn cce(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    if probs.shape() != targets.shape() {
        return Err(Error::dim("cce", probs.shape(), targets.shape()));
    }
    if probs.rows() == 0 {
        return Err(Error::Usage("cce of an empty batch".into()));
    }
    let s: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .filter(|(_, &y)| y != 0.0)
        .map(|(&p, &y)| y * clamp_prob(p).ln())
        .sum();
    Ok(-s / probs.rows() as f64)
}

fn moments(u: &[f64]) -> (f64, f64) {
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    let var = u.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Squared coefficient of variation with population variance.
pub fn cov2(u: &[f64]) -> Result<f64> {
    if u.is_empty() || u.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Degenerate("cov2 needs a nonempty nonnegative vector".into()));
    }
    let (mean, var) = moments(u);
    if mean <= 0.0 {
        return Err(Error::Degenerate("cov2 of a zero-mean vector".into()));
    }
    Ok(var / (mean * mean))
}

pub fn aux_importance(u: &[f64], lambda: f64) -> Result<f64> {
    Ok(lambda * cov2(u)?)
}

pub fn mse_uniform(u: &[f64], lambda: f64) -> f64 {
    let e = u.len() as f64;
    lambda * u.iter().map(|v| (v - 1.0 / e).powi(2)).sum::<f64>() / e
}

/// `ce + aux + mse` with disabled terms left out. The components already
/// carry their weights.
pub fn total_loss(ce: f64, aux: f64, mse: f64, weights: &LossWeights) -> f64 {
    let mut t = ce;
    if weights.enable_aux {
        t += aux;
    }
    if weights.enable_mse {
        t += mse;
    }
    t
}

struct AuxOp {
    lambda: f64,
}

impl CustomOp for AuxOp {
    fn name(&self) -> &'static str {
        "aux_importance"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let u = inputs[0].data();
        let e = u.len() as f64;
        let (mean, var) = moments(u);
        let scale = grad.item() * self.lambda;
        let g = u
            .iter()
            .map(|v| scale * (2.0 * (v - mean) / (e * mean * mean) - 2.0 * var / (e * mean.powi(3))))
            .collect();
        vec![Some(Tensor::new(inputs[0].rows(), inputs[0].cols(), g).expect("same shape"))]
    }
}

struct MseOp {
    lambda: f64,
}

impl CustomOp for MseOp {
    fn name(&self) -> &'static str {
        "mse_uniform"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let u = inputs[0].data();
        let e = u.len() as f64;
        let scale = grad.item() * self.lambda * 2.0 / e;
        let g = u.iter().map(|v| scale * (v - 1.0 / e)).collect();
        vec![Some(Tensor::new(inputs[0].rows(), inputs[0].cols(), g).expect("same shape"))]
    }
}

/// Recorded [`aux_importance`] of a `1 x E` utilization row.
pub fn aux_importance_var(g: &mut Graph, u: Var, lambda: f64) -> Result<Var> {
    let value = aux_importance(g.value(u).data(), lambda)?;
    Ok(g.custom(&[u], Tensor::scalar(value), Box::new(AuxOp { lambda })))
}

/// Recorded [`mse_uniform`] of a `1 x E` utilization row.
pub fn mse_uniform_var(g: &mut Graph, u: Var, lambda: f64) -> Var {
    let value = mse_uniform(g.value(u).data(), lambda);
    g.custom(&[u], Tensor::scalar(value), Box::new(MseOp { lambda }))
}
