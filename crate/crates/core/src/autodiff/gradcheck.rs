//! Central finite-difference check of analytic gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative errors below this denominator are measured absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    /// Number of scalar parameters compared.
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the gradients produced by [`Graph::backward`] against central
/// differences `(f(θ+ε) - f(θ-ε)) / 2ε` for every entry of every parameter.
///
/// `build` receives a fresh graph and one trainable [`Var`] per entry of
/// `params` and must return a scalar loss.
pub fn grad_check<F>(build: F, params: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;
    let analytic = analytic_grads(&build, params)?;
    grad_check_against(&build, params, &analytic, eps, tol)
}

/// Same as [`grad_check`] but with caller-supplied analytic gradients.
pub fn grad_check_against<F>(
    build: F,
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;
    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for p in 0..params.len() {
        for k in 0..params[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + eps;
            let plus = eval(&build, &work)?;
            work[p].data_mut()[k] = orig - eps;
            let minus = eval(&build, &work)?;
            work[p].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            max_rel_err = max_rel_err.max(relative_error(analytic[p].data()[k], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        pass: max_rel_err <= tol,
        checked,
    })
}

/// Runs `build` once and returns the gradient of every parameter.
pub fn analytic_grads<F>(build: &F, params: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(v, t)| {
            g.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect())
}

fn eval<F>(build: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.constant(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    Ok(g.value(loss).item())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Usage(format!("finite-difference step {eps} not in (0, 1e-2]")));
    }
    Ok(())
}
