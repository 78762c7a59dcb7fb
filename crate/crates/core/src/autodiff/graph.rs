//! Tape of recorded operations and the reverse sweep over it.
//!
//! Nodes are appended in evaluation order, so insertion order is a
//! topological order and the backward pass is a single reverse scan.

use std::fmt;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities inside the log of the cross-entropy ops.
pub const PROB_CLAMP: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Relu,
    Sigmoid,
}

/// Backward rule for an operation defined outside this module.
///
/// `backward` returns one entry per input; `None` means no gradient flows
/// to that input.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Scale(Var, f64),
    Sum(Var),
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    CrossEntropy(Var, Var),
    BinaryCrossEntropy(Var, Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax_rows",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::MeanRows(_) => "mean_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::BinaryCrossEntropy(..) => "binary_cross_entropy",
            Op::Custom(_, op) => op.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ConcatCols(a, b)
            | Op::CrossEntropy(a, b)
            | Op::BinaryCrossEntropy(a, b) => vec![*a, *b],
            Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::MeanRows(a)
            | Op::GatherRows(a, _) => vec![*a],
            Op::Custom(inputs, _) => inputs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Recording of a forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.nodes.iter().map(|n| (n.op.name(), n.value.shape())))
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient populated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(op.inputs().iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn elementwise(&mut self, kind: Elementwise, operands: &[Var]) -> Result<Var> {
        let arity = match kind {
            Elementwise::Add | Elementwise::Mul => 2,
            Elementwise::Relu | Elementwise::Sigmoid => 1,
        };
        if operands.len() != arity {
            return Err(Error::Usage(format!(
                "{kind:?} takes {arity} operand(s), got {}",
                operands.len()
            )));
        }
        match kind {
            Elementwise::Add => self.add(operands[0], operands[1]),
            Elementwise::Mul => self.mul(operands[0], operands[1]),
            Elementwise::Relu => Ok(self.relu(operands[0])),
            Elementwise::Sigmoid => Ok(self.sigmoid(operands[0])),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= v;
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds a `1 x n` row to every row of an `m x n` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.value(a).shape(), self.value(row).shape());
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(Error::dim("add_row", sa, sr));
        }
        let mut out = self.value(a).clone();
        let bias = self.value(row).data().to_vec();
        for r in 0..sa.0 {
            for (o, b) in out.row_slice_mut(r).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let rg = self.any_grad(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Softmax(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    /// Column means: `m x n -> 1 x n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(Error::Degenerate("mean over zero rows".into()));
        }
        let mut out = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / t.rows() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a), rg))
    }

    /// Selects rows by index (indices may repeat).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let cols = t.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= t.rows() {
                return Err(Error::Usage(format!(
                    "gather_rows index {i} out of range for {} rows",
                    t.rows()
                )));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(indices.len(), cols, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(Error::dim("concat_cols", ta.shape(), tb.shape()));
        }
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row_slice(r));
            data.extend_from_slice(tb.row_slice(r));
        }
        let out = Tensor::new(ta.rows(), ta.cols() + tb.cols(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Mean categorical cross-entropy `-(1/N) Σ y ln p` with `p` clamped to
    /// `[PROB_CLAMP, 1]`. `targets` receives no gradient.
    pub fn cross_entropy(&mut self, probs: Var, targets: Var) -> Result<Var> {
        self.same_shape("cross_entropy", probs, targets)?;
        let (p, y) = (self.value(probs), self.value(targets));
        let n = p.rows().max(1) as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(y.data())
            .filter(|(_, &yv)| yv != 0.0)
            .map(|(&pv, &yv)| yv * clamp_prob(pv).ln())
            .sum();
        let rg = self.any_grad(&[probs]);
        Ok(self.push(Tensor::scalar(-total / n), Op::CrossEntropy(probs, targets), rg))
    }

    /// Binary cross-entropy summed over columns and averaged over rows.
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: Var) -> Result<Var> {
        self.same_shape("binary_cross_entropy", probs, targets)?;
        let (p, y) = (self.value(probs), self.value(targets));
        let n = p.rows().max(1) as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(y.data())
            .map(|(&pv, &yv)| yv * clamp_prob(pv).ln() + (1.0 - yv) * clamp_prob(1.0 - pv).ln())
            .sum();
        let rg = self.any_grad(&[probs]);
        Ok(self.push(
            Tensor::scalar(-total / n),
            Op::BinaryCrossEntropy(probs, targets),
            rg,
        ))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.any_grad(inputs);
        self.push(output, Op::Custom(inputs.to_vec(), op), rg)
    }

    /// Reverse sweep from a scalar loss. Populates the gradient of every
    /// node that requires one and is reachable from `loss`; gradients from
    /// multiple paths are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            for (input, contribution) in self.local_grads(id, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }

    fn local_grads(&self, id: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut res = Vec::with_capacity(2);
                if needs(a) {
                    res.push((*a, g.matmul_bt(val(b)).expect("shapes checked in forward")));
                }
                if needs(b) {
                    res.push((*b, val(a).matmul_at(g).expect("shapes checked in forward")));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let ga = zip_map(g, val(b), |gv, bv| gv * bv);
                let gb = zip_map(g, val(a), |gv, av| gv * av);
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddRow(a, row) => {
                let mut gr = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (acc, v) in gr.iter_mut().zip(g.row_slice(r)) {
                        *acc += v;
                    }
                }
                vec![(*a, g.clone()), (*row, Tensor::row(gr))]
            }
            // Gradient at exactly 0 is 0.
            Op::Relu(a) => vec![(*a, zip_map(g, val(a), |gv, x| if x > 0.0 { gv } else { 0.0 }))],
            Op::Sigmoid(a) => vec![(*a, zip_map(g, out, |gv, s| gv * s * (1.0 - s)))],
            Op::Softmax(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (s, gr) = (out.row_slice(r), g.row_slice(r));
                    let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &sv), &gv) in ga.row_slice_mut(r).iter_mut().zip(s).zip(gr) {
                        *o = sv * (gv - dot);
                    }
                }
                vec![(*a, ga)]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|v| v * c))],
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                vec![(*a, Tensor::filled(r, c, g.item()))]
            }
            Op::MeanRows(a) => {
                let (r, c) = val(a).shape();
                let inv = 1.0 / r as f64;
                let mut ga = Tensor::zeros(r, c);
                for i in 0..r {
                    for (o, v) in ga.row_slice_mut(i).iter_mut().zip(g.data()) {
                        *o = v * inv;
                    }
                }
                vec![(*a, ga)]
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = val(a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (o, v) in ga.row_slice_mut(i).iter_mut().zip(g.row_slice(k)) {
                        *o += v;
                    }
                }
                vec![(*a, ga)]
            }
            Op::ConcatCols(a, b) => {
                let ca = val(a).cols();
                let cb = val(b).cols();
                let mut ga = Tensor::zeros(g.rows(), ca);
                let mut gb = Tensor::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    let row = g.row_slice(r);
                    ga.row_slice_mut(r).copy_from_slice(&row[..ca]);
                    gb.row_slice_mut(r).copy_from_slice(&row[ca..]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::CrossEntropy(p, y) => {
                let (pv, yv) = (val(p), val(y));
                let n = pv.rows().max(1) as f64;
                let scale = g.item() / n;
                let gp = zip_map(pv, yv, |pi, yi| {
                    if yi == 0.0 || pi < PROB_CLAMP {
                        0.0
                    } else {
                        -scale * yi / pi
                    }
                });
                vec![(*p, gp)]
            }
            Op::BinaryCrossEntropy(p, y) => {
                let (pv, yv) = (val(p), val(y));
                let n = pv.rows().max(1) as f64;
                let scale = g.item() / n;
                let gp = zip_map(pv, yv, |pi, yi| {
                    let pos = if pi < PROB_CLAMP { 0.0 } else { yi / pi };
                    let neg = if 1.0 - pi < PROB_CLAMP {
                        0.0
                    } else {
                        (1.0 - yi) / (1.0 - pi)
                    };
                    -scale * (pos - neg)
                });
                vec![(*p, gp)]
            }
            Op::Custom(inputs, op) => {
                let in_vals: Vec<&Tensor> = inputs.iter().map(val).collect();
                op.backward(&in_vals, out, g)
                    .into_iter()
                    .zip(inputs)
                    .filter_map(|(gi, v)| gi.map(|t| (*v, t)))
                    .collect()
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows() {
        softmax_in_place(out.row_slice_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_values() {
        let mut g = Graph::new();
        let a = g.constant(t(2, 2, &[1., 2., 3., 4.]));
        let b = g.constant(t(2, 1, &[1., 1.]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3., 7.]);
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(t(2, 3, &[1., -2., 3.5, 0., 4., 9.]));
        let i = g.constant(Tensor::identity(3));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c), g.value(a));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("2x3") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn matmul_grad_is_row_broadcast_of_column_sums() {
        let mut g = Graph::new();
        let a = g.param(t(2, 2, &[0.3, -1.2, 2.0, 0.5]));
        let b = g.constant(t(2, 3, &[1., 2., 3., 4., 5., 6.]));
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        // Row sums of B: [6, 15] broadcast across rows of A.
        assert_eq!(g.grad(a).unwrap().data(), &[6., 15., 6., 15.]);
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut g = Graph::new();
        let x = g.constant(t(1, 3, &[-1.0, 2.5, 0.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 2.5, 0.0]);
        let z = g.constant(t(1, 2, &[0.0, 3f64.ln()]));
        let s = g.elementwise(Elementwise::Sigmoid, &[z]).unwrap();
        assert_eq!(g.value(s).get(0, 0), 0.5);
        assert!((g.value(s).get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn elementwise_arity_and_shape_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(1, 2));
        let b = g.constant(Tensor::zeros(2, 1));
        assert!(g.elementwise(Elementwise::Add, &[a]).is_err());
        assert!(matches!(
            g.elementwise(Elementwise::Mul, &[a, b]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn softmax_closed_forms() {
        let mut g = Graph::new();
        let x = g.constant(t(2, 2, &[0.0, 2f64.ln(), 5.0, 5.0]));
        let s = g.softmax_rows(x);
        let v = g.value(s);
        assert!((v.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((v.get(0, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(v.row_slice(1), &[0.5, 0.5]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.param(t(2, 2, &[1., -2., 3., 0.5]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn backward_through_relu() {
        let mut g = Graph::new();
        let x = g.param(t(1, 3, &[-1.0, 2.0, 0.0]));
        let r = g.relu(x);
        let s = g.sum(r);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(2, 1));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn two_paths_accumulate() {
        let mut g = Graph::new();
        let x = g.param(t(1, 2, &[1.5, -0.5]));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let s = g.sum(z);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0, 0.0]);
    }

    #[test]
    fn constants_get_no_grad() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let c = g.constant(Tensor::scalar(3.0));
        let y = g.mul(x, c).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 3.0);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn cross_entropy_uniform_is_ln3() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::filled(4, 3, 1.0 / 3.0));
        let y = g.constant(t(4, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1., 1., 0., 0.]));
        let l = g.cross_entropy(p, y).unwrap();
        assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-12);
    }
}
