//! Exp-score weighted combination of expert outputs.
//!
//! Token `i` combines every participant `p` of the routing plan with weight
//! `m_p * exp(a_{i,e_p})`: Top-K experts with `m = 1`, the IR expert with
//! `m = K - |R_i|`, a fill-in expert with `m = 1`. Weights are computed
//! after subtracting the row maximum `c_i` over participants.
//!
//! The backward pass treats the denominator `D_i` as a constant, so
//! `d o_i / d a_{i,e_p} = w_p E_p(x_i) / D_i`. Expert outputs get their exact
//! gradient `w_p / D_i`.

use super::dispatch::RoutingPlan;
use crate::autodiff::{CustomOp, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Shift and value of one token's normalizer, `D_i = sum_p m_p exp(a - c)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Denominator {
    pub shift: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug)]
struct Term {
    token: usize,
    expert: usize,
    /// Position of the expert output among the op's inputs (after logits).
    input: usize,
    /// Row of the token inside that expert output.
    row: usize,
    multiplicity: f64,
}

fn participant_terms(plan: &RoutingPlan, rows_of: &dyn Fn(usize, usize) -> Option<(usize, usize)>) -> Vec<Term> {
    let mut terms = Vec::new();
    for i in 0..plan.n_tokens {
        for p in plan.participants(i) {
            let (input, row) = rows_of(p.expert, i).expect("participant has a slot");
            terms.push(Term {
                token: i,
                expert: p.expert,
                input,
                row,
                multiplicity: p.multiplicity,
            });
        }
    }
    terms
}

fn denominators(terms: &[Term], logits: &Tensor) -> Vec<Denominator> {
    let n = logits.rows();
    let mut shift = vec![f64::NEG_INFINITY; n];
    for t in terms {
        shift[t.token] = shift[t.token].max(logits.get(t.token, t.expert));
    }
    let mut value = vec![0.0; n];
    for t in terms {
        value[t.token] += t.multiplicity * (logits.get(t.token, t.expert) - shift[t.token]).exp();
    }
    shift
        .into_iter()
        .zip(value)
        .map(|(s, v)| Denominator {
            shift: if s.is_finite() { s } else { 0.0 },
            value: v,
        })
        .collect()
}

fn weight(t: &Term, logits: &Tensor, d: &Denominator) -> f64 {
    t.multiplicity * (logits.get(t.token, t.expert) - d.shift).exp()
}

fn combine_terms(terms: &[Term], logits: &Tensor, outputs: &[&Tensor], dens: &[Denominator]) -> Tensor {
    let classes = outputs.first().map_or(0, |o| o.cols());
    let mut out = Tensor::zeros(logits.rows(), classes);
    for t in terms {
        let d = &dens[t.token];
        if d.value <= 0.0 {
            continue;
        }
        let w = weight(t, logits, d) / d.value;
        let src = outputs[t.input].row_slice(t.row);
        for (o, v) in out.row_slice_mut(t.token).iter_mut().zip(src) {
            *o += w * v;
        }
    }
    out
}

/// Plain combination. `expert_outputs[e]` is `B x C`; rows of tokens the
/// expert does not serve are ignored. Tokens with no participant get zeros.
pub fn combine(plan: &RoutingPlan, logits: &Tensor, expert_outputs: &[Tensor]) -> Result<Tensor> {
    if expert_outputs.len() != plan.n_experts || logits.shape() != (plan.n_tokens, plan.n_experts) {
        return Err(Error::dim(
            "combine",
            logits.shape(),
            (plan.n_tokens, plan.n_experts),
        ));
    }
    let terms = participant_terms(plan, &|e, i| Some((e, i)));
    let dens = denominators(&terms, logits);
    let refs: Vec<&Tensor> = expert_outputs.iter().collect();
    Ok(combine_terms(&terms, logits, &refs, &dens))
}

/// Normalized combine weights of one token as `(expert, weight)` pairs in
/// participant order.
pub fn combine_weights(plan: &RoutingPlan, logits: &Tensor, token: usize) -> Vec<(usize, f64)> {
    let parts = plan.participants(token);
    let Some(c) = parts.iter().map(|p| logits.get(token, p.expert)).reduce(f64::max) else {
        return Vec::new();
    };
    let raw: Vec<f64> = parts
        .iter()
        .map(|p| p.multiplicity * (logits.get(token, p.expert) - c).exp())
        .collect();
    let d: f64 = raw.iter().sum();
    parts.iter().zip(raw).map(|(p, w)| (p.expert, w / d)).collect()
}

struct CombineOp {
    terms: Vec<Term>,
    dens: Vec<Denominator>,
}

impl CustomOp for CombineOp {
    fn name(&self) -> &'static str {
        "moe_combine"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let logits = inputs[0];
        let outputs = &inputs[1..];
        let mut g_logits = Tensor::zeros(logits.rows(), logits.cols());
        let mut g_out: Vec<Tensor> = outputs.iter().map(|o| Tensor::zeros(o.rows(), o.cols())).collect();
        for t in &self.terms {
            let d = &self.dens[t.token];
            if d.value <= 0.0 {
                continue;
            }
            let w = weight(t, logits, d) / d.value;
            let g_row = grad.row_slice(t.token);
            let e_row = outputs[t.input].row_slice(t.row);
            let dot: f64 = g_row.iter().zip(e_row).map(|(a, b)| a * b).sum();
            let cur = g_logits.get(t.token, t.expert);
            g_logits.set(t.token, t.expert, cur + w * dot);
            for (o, gv) in g_out[t.input].row_slice_mut(t.row).iter_mut().zip(g_row) {
                *o += w * gv;
            }
        }
        std::iter::once(Some(g_logits)).chain(g_out.into_iter().map(Some)).collect()
    }
}

/// Records the combination in `g`.
///
/// `expert_outputs[k] = (expert, output)` holds the compact output of an
/// expert over `plan.tokens_for(expert)`, in that order. With `frozen`
/// given, those shifts and denominators are used instead of the ones implied
/// by the current logits, which turns the straight-through rule into the
/// exact derivative of the recorded function.
pub fn combine_in_graph(
    g: &mut Graph,
    plan: &RoutingPlan,
    logits: Var,
    expert_outputs: &[(usize, Var)],
    frozen: Option<&[Denominator]>,
) -> Result<(Var, Vec<Denominator>)> {
    let lv = g.value(logits);
    if lv.shape() != (plan.n_tokens, plan.n_experts) {
        return Err(Error::dim("combine", lv.shape(), (plan.n_tokens, plan.n_experts)));
    }
    let token_lists: Vec<Vec<usize>> = (0..plan.n_experts).map(|e| plan.tokens_for(e)).collect();
    let rows_of = |e: usize, i: usize| {
        let input = expert_outputs.iter().position(|(x, _)| *x == e)?;
        let row = token_lists[e].iter().position(|&t| t == i)?;
        Some((input, row))
    };
    let terms = participant_terms(plan, &rows_of);
    let dens = match frozen {
        Some(d) if d.len() == plan.n_tokens => d.to_vec(),
        Some(d) => {
            return Err(Error::Usage(format!(
                "{} frozen denominators for {} tokens",
                d.len(),
                plan.n_tokens
            )))
        }
        None => denominators(&terms, lv),
    };
    let outs: Vec<&Tensor> = expert_outputs.iter().map(|(_, v)| g.value(*v)).collect();
    let value = combine_terms(&terms, lv, &outs, &dens);
    let mut inputs = vec![logits];
    inputs.extend(expert_outputs.iter().map(|(_, v)| *v));
    let var = g.custom(&inputs, value, Box::new(CombineOp { terms, dens: dens.clone() }));
    Ok((var, dens))
}
