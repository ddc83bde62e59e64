use std::fmt::Write as _;
use std::sync::Arc;

use super::KernelError;
use crate::sparse::{EntrySource, SparsePattern};
use crate::tensor::Tensor;

/// Floor added inside `log` by the cross-entropy and log ops.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    RowSoftmax(Var),
    RowNormalize(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    ExpandEdges(Var, Arc<Vec<EntrySource>>),
    ReduceSum(Var),
    Spmm { pattern: Arc<SparsePattern>, values: Var, dense: Var },
    DegreeSum { pattern: Arc<SparsePattern>, values: Var },
    Rsqrt(Var),
    EdgeScale { pattern: Arc<SparsePattern>, values: Var, row: Var, col: Var },
    CrossEntropy { pred: Var, targets: Arc<Tensor>, subset: Arc<Vec<usize>> },
    SoftmaxCrossEntropy { logits: Var, targets: Arc<Tensor>, subset: Arc<Vec<usize>> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Hadamard(..) => "hadamard",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Relu(..) => "relu",
            Op::RowSoftmax(..) => "row_softmax",
            Op::RowNormalize(..) => "row_normalize",
            Op::GatherRows(..) => "gather_rows",
            Op::ExpandEdges(..) => "expand_edges",
            Op::ReduceSum(..) => "reduce_sum",
            Op::Spmm { .. } => "spmm",
            Op::DegreeSum { .. } => "degree_sum",
            Op::Rsqrt(..) => "rsqrt",
            Op::EdgeScale { .. } => "edge_scale",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Hadamard(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Relu(a)
            | Op::RowSoftmax(a)
            | Op::RowNormalize(a)
            | Op::GatherRows(a, _)
            | Op::ExpandEdges(a, _)
            | Op::ReduceSum(a)
            | Op::Rsqrt(a) => vec![a],
            Op::Spmm { values, dense, .. } => vec![values, dense],
            Op::DegreeSum { values, .. } => vec![values],
            Op::EdgeScale { values, row, col, .. } => vec![values, row, col],
            Op::CrossEntropy { pred, .. } => vec![pred],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
    needs_grad: bool,
}

/// Records primitive ops and replays them in reverse to produce gradients.
///
/// Single-threaded; build one tape per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the output does not depend on `v`.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn try_get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> KernelError {
    KernelError::Shape(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn check_subset(subset: &[usize], rows: usize) -> Result<(), KernelError> {
    if subset.is_empty() {
        return Err(KernelError::EmptySubset);
    }
    if let Some(&index) = subset.iter().find(|&&i| i >= rows) {
        return Err(KernelError::Index { index, len: rows });
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, trainable, needs_grad: trainable });
        Var(self.nodes.len() - 1)
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, KernelError> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(KernelError::NonFinite { op: op.name() });
        }
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, trainable: false, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x.shape(), y.shape()));
        }
        let mut value = x.clone();
        value.add_assign(y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("sub", x.shape(), y.shape()));
        }
        let mut value = x.clone();
        for (o, v) in value.data_mut().iter_mut().zip(y.data()) {
            *o -= v;
        }
        self.push(value, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, KernelError> {
        let value = self.value(a).map(|v| v * s);
        self.push(value, Op::Scale(a, s))
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("hadamard", x.shape(), y.shape()));
        }
        let mut value = x.clone();
        for (o, v) in value.data_mut().iter_mut().zip(y.data()) {
            *o *= v;
        }
        self.push(value, Op::Hadamard(a, b))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, KernelError> {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    /// Natural log; inputs must be positive.
    pub fn log(&mut self, a: Var) -> Result<Var, KernelError> {
        let x = self.value(a);
        if let Some((index, &value)) = x.data().iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(KernelError::NonPositive { op: "log", index, value });
        }
        let value = x.map(f64::ln);
        self.push(value, Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, KernelError> {
        // `f64::max` would silently turn NaN into 0; keep it visible downstream.
        let value = self.value(a).map(|v| if v > 0.0 || v.is_nan() { v } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var, KernelError> {
        let x = self.value(a);
        let mut value = x.clone();
        for r in 0..x.rows() {
            let row = value.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(value, Op::RowSoftmax(a))
    }

    /// Divides each row by its sum. Rows whose sum is at most [`LOG_EPS`]
    /// become uniform and pass no gradient.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var, KernelError> {
        let x = self.value(a);
        let c = x.cols();
        let mut value = x.clone();
        for r in 0..x.rows() {
            let row = value.row_mut(r);
            let s: f64 = row.iter().sum();
            if s > LOG_EPS {
                row.iter_mut().for_each(|v| *v /= s);
            } else {
                row.iter_mut().for_each(|v| *v = 1.0 / c as f64);
            }
        }
        self.push(value, Op::RowNormalize(a))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, KernelError> {
        let x = self.value(a);
        let mut value = Tensor::zeros(indices.len(), x.cols());
        for (k, &i) in indices.iter().enumerate() {
            if i >= x.rows() {
                return Err(KernelError::Index { index: i, len: x.rows() });
            }
            value.row_mut(k).copy_from_slice(x.row(i));
        }
        self.push(value, Op::GatherRows(a, Arc::new(indices.to_vec())))
    }

    /// Maps an `m × 1` column of undirected edge weights onto the stored
    /// entries of a pattern; self-loop entries are the constant 1.
    pub fn expand_edges(&mut self, weights: Var, sources: &Arc<Vec<EntrySource>>) -> Result<Var, KernelError> {
        let w = self.value(weights);
        if w.cols() != 1 {
            return Err(shape_err("expand_edges", w.shape(), (w.rows(), 1)));
        }
        let mut out = Vec::with_capacity(sources.len());
        for s in sources.iter() {
            out.push(match *s {
                EntrySource::Edge(e) => {
                    if e >= w.rows() {
                        return Err(KernelError::Index { index: e, len: w.rows() });
                    }
                    w.data()[e]
                }
                EntrySource::SelfLoop => 1.0,
            });
        }
        self.push(Tensor::column(out), Op::ExpandEdges(weights, Arc::clone(sources)))
    }

    pub fn reduce_sum(&mut self, a: Var) -> Result<Var, KernelError> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::ReduceSum(a))
    }

    fn check_values(&self, pattern: &SparsePattern, values: Var, op: &str) -> Result<(), KernelError> {
        let v = self.value(values);
        if v.shape() != (pattern.nnz(), 1) {
            return Err(shape_err(op, v.shape(), (pattern.nnz(), 1)));
        }
        Ok(())
    }

    /// Sparse × dense product.
    pub fn spmm(&mut self, pattern: &Arc<SparsePattern>, values: Var, dense: Var) -> Result<Var, KernelError> {
        self.check_values(pattern, values, "spmm")?;
        let x = self.value(dense);
        if x.rows() != pattern.n() {
            return Err(shape_err("spmm", (pattern.n(), pattern.n()), x.shape()));
        }
        let v = self.value(values).data();
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for k in 0..pattern.nnz() {
            let (r, c) = (pattern.rows()[k], pattern.cols()[k]);
            let vk = v[k];
            let src = x.row(c);
            for (o, &s) in out.row_mut(r).iter_mut().zip(src) {
                *o += vk * s;
            }
        }
        self.push(out, Op::Spmm { pattern: Arc::clone(pattern), values, dense })
    }

    /// Row sums of a sparse matrix as an `n × 1` column.
    pub fn degree_sum(&mut self, pattern: &Arc<SparsePattern>, values: Var) -> Result<Var, KernelError> {
        self.check_values(pattern, values, "degree_sum")?;
        let v = self.value(values).data();
        let mut d = vec![0.0; pattern.n()];
        for (k, &r) in pattern.rows().iter().enumerate() {
            d[r] += v[k];
        }
        self.push(Tensor::column(d), Op::DegreeSum { pattern: Arc::clone(pattern), values })
    }

    /// Elementwise `x^{-1/2}`; every entry must be positive.
    pub fn rsqrt(&mut self, a: Var) -> Result<Var, KernelError> {
        let x = self.value(a);
        if let Some((index, &value)) = x.data().iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(KernelError::NonPositive { op: "rsqrt", index, value });
        }
        let value = x.map(|v| 1.0 / v.sqrt());
        self.push(value, Op::Rsqrt(a))
    }

    /// Scales stored entry `(r, c)` by `row[r] · col[c]`.
    pub fn edge_scale(
        &mut self,
        pattern: &Arc<SparsePattern>,
        values: Var,
        row: Var,
        col: Var,
    ) -> Result<Var, KernelError> {
        self.check_values(pattern, values, "edge_scale")?;
        for f in [row, col] {
            if self.shape(f) != (pattern.n(), 1) {
                return Err(shape_err("edge_scale", self.shape(f), (pattern.n(), 1)));
            }
        }
        let (v, a, b) = (self.value(values).data(), self.value(row).data(), self.value(col).data());
        let out: Vec<f64> = (0..pattern.nnz())
            .map(|k| v[k] * a[pattern.rows()[k]] * b[pattern.cols()[k]])
            .collect();
        self.push(Tensor::column(out), Op::EdgeScale { pattern: Arc::clone(pattern), values, row, col })
    }

    /// Mean over `subset` rows of `−Σ_c target(c) · ln(pred(c) + ε)`.
    pub fn cross_entropy(&mut self, pred: Var, targets: &Arc<Tensor>, subset: &Arc<Vec<usize>>) -> Result<Var, KernelError> {
        let p = self.value(pred);
        if p.shape() != targets.shape() {
            return Err(shape_err("cross_entropy", p.shape(), targets.shape()));
        }
        check_subset(subset, p.rows())?;
        let mut total = 0.0;
        for &i in subset.iter() {
            for (pc, tc) in p.row(i).iter().zip(targets.row(i)) {
                if *tc != 0.0 {
                    total -= tc * (pc + LOG_EPS).ln();
                }
            }
        }
        let value = Tensor::scalar(total / subset.len() as f64);
        self.push(value, Op::CrossEntropy { pred, targets: Arc::clone(targets), subset: Arc::clone(subset) })
    }

    /// Softmax followed by cross-entropy, fused with a log-sum-exp for stability.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &Arc<Tensor>,
        subset: &Arc<Vec<usize>>,
    ) -> Result<Var, KernelError> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(shape_err("softmax_cross_entropy", z.shape(), targets.shape()));
        }
        check_subset(subset, z.rows())?;
        let mut total = 0.0;
        for &i in subset.iter() {
            let row = z.row(i);
            let lse = log_sum_exp(row);
            for (zc, tc) in row.iter().zip(targets.row(i)) {
                total += tc * (lse - zc);
            }
        }
        let value = Tensor::scalar(total / subset.len() as f64);
        self.push(value, Op::SoftmaxCrossEntropy { logits, targets: Arc::clone(targets), subset: Arc::clone(subset) })
    }

    /// Replays the tape backwards from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients, KernelError> {
        let (r, c) = self.shape(output);
        if (r, c) != (1, 1) {
            return Err(KernelError::NotScalar(r, c));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.wants(a) {
                    let da = g.matmul(&self.value(b).transpose()).expect("shapes checked in forward");
                    accumulate(&mut grads[a.0], da);
                }
                if self.wants(b) {
                    let db = self.value(a).transpose().matmul(g).expect("shapes checked in forward");
                    accumulate(&mut grads[b.0], db);
                }
            }
            &Op::Add(a, b) => {
                for p in [a, b] {
                    if self.wants(p) {
                        accumulate(&mut grads[p.0], g.clone());
                    }
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(b) {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                }
            }
            &Op::Scale(a, s) => {
                if self.wants(a) {
                    accumulate(&mut grads[a.0], g.map(|v| v * s));
                }
            }
            &Op::Hadamard(a, b) => {
                for (p, q) in [(a, b), (b, a)] {
                    if self.wants(p) {
                        let mut d = g.clone();
                        for (o, v) in d.data_mut().iter_mut().zip(self.value(q).data()) {
                            *o *= v;
                        }
                        accumulate(&mut grads[p.0], d);
                    }
                }
            }
            &Op::Exp(a) => {
                if self.wants(a) {
                    let mut d = g.clone();
                    for (o, v) in d.data_mut().iter_mut().zip(y.data()) {
                        *o *= v;
                    }
                    accumulate(&mut grads[a.0], d);
                }
            }
            &Op::Log(a) => {
                if self.wants(a) {
                    let mut d = g.clone();
                    for (o, x) in d.data_mut().iter_mut().zip(self.value(a).data()) {
                        *o /= x;
                    }
                    accumulate(&mut grads[a.0], d);
                }
            }
            &Op::Relu(a) => {
                if self.wants(a) {
                    let mut d = g.clone();
                    for (o, x) in d.data_mut().iter_mut().zip(self.value(a).data()) {
                        if *x <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
            }
            &Op::RowSoftmax(a) => {
                if self.wants(a) {
                    let mut d = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
            }
            &Op::RowNormalize(a) => {
                if self.wants(a) {
                    let x = self.value(a);
                    let mut d = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let s: f64 = x.row(r).iter().sum();
                        if s <= LOG_EPS {
                            continue;
                        }
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                            *o = (gr[c] - dot) / s;
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
            }
            Op::GatherRows(a, indices) => {
                let a = *a;
                if self.wants(a) {
                    let (rows, cols) = self.shape(a);
                    let mut d = Tensor::zeros(rows, cols);
                    for (k, &i) in indices.iter().enumerate() {
                        for (o, v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[a.0], d);
                }
            }
            Op::ExpandEdges(w, sources) => {
                let w = *w;
                if self.wants(w) {
                    let mut d = Tensor::zeros(self.shape(w).0, 1);
                    for (k, s) in sources.iter().enumerate() {
                        if let EntrySource::Edge(e) = *s {
                            d.data_mut()[e] += g.data()[k];
                        }
                    }
                    accumulate(&mut grads[w.0], d);
                }
            }
            &Op::ReduceSum(a) => {
                if self.wants(a) {
                    let (r, c) = self.shape(a);
                    accumulate(&mut grads[a.0], Tensor::filled(r, c, g.item()));
                }
            }
            Op::Spmm { pattern, values, dense } => {
                let (values, dense) = (*values, *dense);
                let x = self.value(dense);
                let v = self.value(values).data();
                if self.wants(values) {
                    let mut dv = Tensor::zeros(pattern.nnz(), 1);
                    for k in 0..pattern.nnz() {
                        let (r, c) = (pattern.rows()[k], pattern.cols()[k]);
                        dv.data_mut()[k] = g.row(r).iter().zip(x.row(c)).map(|(p, q)| p * q).sum();
                    }
                    accumulate(&mut grads[values.0], dv);
                }
                if self.wants(dense) {
                    let mut dx = Tensor::zeros(x.rows(), x.cols());
                    for k in 0..pattern.nnz() {
                        let (r, c) = (pattern.rows()[k], pattern.cols()[k]);
                        let vk = v[k];
                        let src = g.row(r);
                        for (o, &s) in dx.row_mut(c).iter_mut().zip(src) {
                            *o += vk * s;
                        }
                    }
                    accumulate(&mut grads[dense.0], dx);
                }
            }
            Op::DegreeSum { pattern, values } => {
                let values = *values;
                if self.wants(values) {
                    let dv: Vec<f64> = pattern.rows().iter().map(|&r| g.data()[r]).collect();
                    accumulate(&mut grads[values.0], Tensor::column(dv));
                }
            }
            &Op::Rsqrt(a) => {
                if self.wants(a) {
                    let mut d = g.clone();
                    for (o, yv) in d.data_mut().iter_mut().zip(y.data()) {
                        *o *= -0.5 * yv * yv * yv;
                    }
                    accumulate(&mut grads[a.0], d);
                }
            }
            Op::EdgeScale { pattern, values, row, col } => {
                let (values, row, col) = (*values, *row, *col);
                let v = self.value(values).data();
                let a = self.value(row).data();
                let b = self.value(col).data();
                let (rows, cols) = (pattern.rows(), pattern.cols());
                if self.wants(values) {
                    let dv: Vec<f64> = (0..pattern.nnz()).map(|k| g.data()[k] * a[rows[k]] * b[cols[k]]).collect();
                    accumulate(&mut grads[values.0], Tensor::column(dv));
                }
                if self.wants(row) {
                    let mut da = vec![0.0; pattern.n()];
                    for k in 0..pattern.nnz() {
                        da[rows[k]] += g.data()[k] * v[k] * b[cols[k]];
                    }
                    accumulate(&mut grads[row.0], Tensor::column(da));
                }
                if self.wants(col) {
                    let mut db = vec![0.0; pattern.n()];
                    for k in 0..pattern.nnz() {
                        db[cols[k]] += g.data()[k] * v[k] * a[rows[k]];
                    }
                    accumulate(&mut grads[col.0], Tensor::column(db));
                }
            }
            Op::CrossEntropy { pred, targets, subset } => {
                let pred = *pred;
                if self.wants(pred) {
                    let p = self.value(pred);
                    let scale = g.item() / subset.len() as f64;
                    let mut d = Tensor::zeros(p.rows(), p.cols());
                    for &i in subset.iter() {
                        let pr = p.row(i).to_vec();
                        for (c, o) in d.row_mut(i).iter_mut().enumerate() {
                            *o -= scale * targets.get(i, c) / (pr[c] + LOG_EPS);
                        }
                    }
                    accumulate(&mut grads[pred.0], d);
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, subset } => {
                let logits = *logits;
                if self.wants(logits) {
                    let z = self.value(logits);
                    let scale = g.item() / subset.len() as f64;
                    let mut d = Tensor::zeros(z.rows(), z.cols());
                    for &i in subset.iter() {
                        let row = z.row(i);
                        let lse = log_sum_exp(row);
                        let mass: f64 = targets.row(i).iter().sum();
                        for c in 0..z.cols() {
                            let soft = (row[c] - lse).exp();
                            d.row_mut(i)[c] += scale * (soft * mass - targets.get(i, c));
                        }
                    }
                    accumulate(&mut grads[logits.0], d);
                }
            }
        }
    }

    /// Text listing of the recorded ops, one per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let parents: Vec<String> = n.op.parents().iter().map(|p| format!("%{}", p.0)).collect();
            let (r, c) = n.value.shape();
            let _ = write!(out, "%{i} = {}({}) : {r}x{c}", n.op.name(), parents.join(", "));
            if n.trainable {
                out.push_str(" [param]");
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
