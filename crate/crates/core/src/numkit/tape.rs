//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records a forward pass as a list of nodes built from a fixed set
//! of primitives. [`Tape::backward`] walks the list in reverse and accumulates
//! gradients into the grad buffers of a [`ParamStore`]. Parameter values are
//! borrowed from the store rather than copied onto the tape, so a forward pass
//! through a large embedding-like weight costs only the rows it touches.

use std::collections::HashMap;

use super::matrix::{clamp_prob, sigmoid_scalar, softmax_in_place, Matrix, PROB_EPS};
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices with matching gradient buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    ids: Vec<String>,
    lookup: HashMap<String, ParamId>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, id: impl Into<String>, value: Matrix) -> ParamId {
        let id = id.into();
        assert!(!self.lookup.contains_key(&id), "duplicate param id {id}");
        let pid = ParamId(self.values.len());
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.lookup.insert(id.clone(), pid);
        self.ids.push(id);
        pid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn find(&self, id: &str) -> Option<ParamId> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, p: ParamId) -> &str {
        &self.ids[p.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = (ParamId, &str)> {
        self.ids.iter().enumerate().map(|(i, s)| (ParamId(i), s.as_str()))
    }

    pub fn value(&self, p: ParamId) -> &Matrix {
        &self.values[p.0]
    }

    pub fn value_mut(&mut self, p: ParamId) -> &mut Matrix {
        &mut self.values[p.0]
    }

    pub fn grad(&self, p: ParamId) -> &Matrix {
        &self.grads[p.0]
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn grads(&self) -> &[Matrix] {
        &self.grads
    }

    /// Borrow values immutably and gradients mutably at the same time.
    pub fn split_mut(&mut self) -> (&[Matrix], &mut [Matrix]) {
        (&self.values, &mut self.grads)
    }

    pub(crate) fn parts_mut(&mut self) -> (&[String], &mut [Matrix], &[Matrix]) {
        (&self.ids, &mut self.values, &self.grads)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Matrix::sq_norm).sum::<f64>().sqrt()
    }

    /// Rescale all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let k = max_norm / norm;
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|v| *v *= k);
            }
        }
        norm
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Sparse row vector: (column index, value) pairs. Used as a constant left
/// operand of a matmul, typically a one-hot or mixed one-hot/dense input.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRow {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn new(dim: usize) -> Self {
        SparseRow {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, index: usize, value: f64) {
        debug_assert!(index < self.dim);
        if value != 0.0 {
            self.entries.push((index, value));
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] += v;
        }
        out
    }
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    SparseMatMul(SparseRow, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize),
    MaxRows(NodeId, Vec<usize>),
    Sum(Vec<NodeId>),
    Bce(NodeId, Vec<f64>),
    SoftmaxCe(NodeId, usize, Vec<f64>),
    SqErr(NodeId, Vec<f64>),
}

struct Node {
    op: Op,
    // None for params; their values live in the store.
    value: Option<Matrix>,
    needs_grad: bool,
}

pub struct Tape<'a> {
    params: &'a [Matrix],
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a [Matrix]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, n: NodeId) -> &Matrix {
        let node = &self.nodes[n.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => &self.params[p.0],
            (_, Some(v)) => v,
            (_, None) => unreachable!("non-param node without value"),
        }
    }

    pub fn scalar(&self, n: NodeId) -> f64 {
        self.value(n).data()[0]
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, n: NodeId) -> bool {
        self.nodes[n.0].needs_grad
    }

    pub fn constant(&mut self, m: Matrix) -> NodeId {
        self.push(Op::Constant, m, false)
    }

    pub fn param(&mut self, p: ParamId) -> NodeId {
        self.nodes.push(Node {
            op: Op::Param(p),
            value: None,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul(a, b), out, ng))
    }

    /// `x · W` for a constant sparse row `x`.
    pub fn sparse_matmul(&mut self, x: SparseRow, w: NodeId) -> Result<NodeId> {
        let wv = self.value(w);
        if x.dim != wv.rows() {
            return Err(Error::Dimension {
                op: "sparse_matmul",
                left: (1, x.dim),
                right: wv.shape(),
            });
        }
        let mut out = vec![0.0; wv.cols()];
        for &(i, v) in &x.entries {
            for (o, &wij) in out.iter_mut().zip(wv.row(i)) {
                *o += v * wij;
            }
        }
        let ng = self.ng(w);
        Ok(self.push(Op::SparseMatMul(x, w), Matrix::row_vector(out), ng))
    }

    /// Elementwise sum. `b` may be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Add(a, b), out, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Dimension {
                op: "mul",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Matrix::new(av.rows(), av.cols(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Mul(a, b), out, ng))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid_scalar);
        let ng = self.ng(a);
        self.push(Op::Sigmoid(a), out, ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(Op::Tanh(a), out, ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|v| v.max(0.0));
        let ng = self.ng(a);
        self.push(Op::Relu(a), out, ng)
    }

    /// Concatenate along columns; all parts need the same row count.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::Dimension {
                    op: "concat",
                    left: (rows, cols),
                    right: v.shape(),
                });
            }
            cols += v.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let v = self.value(p);
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
                off += v.cols();
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Op::Concat(parts.to_vec()), out, ng))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.value(a);
        if start + len > av.cols() || len == 0 {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: av.shape(),
                right: (start, len),
            });
        }
        let mut out = Matrix::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(Op::SliceCols(a, start), out, ng))
    }

    /// Column-wise maximum over rows (max-over-time pooling). First maximum wins ties.
    pub fn max_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(Error::InvalidArgument("max_rows of an empty matrix".into()));
        }
        let mut arg = vec![0; av.cols()];
        let mut out = av.row(0).to_vec();
        for r in 1..av.rows() {
            for (c, &v) in av.row(r).iter().enumerate() {
                if v > out[c] {
                    out[c] = v;
                    arg[c] = r;
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Op::MaxRows(a, arg), Matrix::row_vector(out), ng))
    }

    /// Sum of same-shape nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("sum of nothing".into()))?;
        let mut out = self.value(*first).clone();
        for &p in &parts[1..] {
            let v = self.value(p);
            if v.shape() != out.shape() {
                return Err(Error::Dimension {
                    op: "sum",
                    left: out.shape(),
                    right: v.shape(),
                });
            }
            for (o, x) in out.data_mut().iter_mut().zip(v.data()) {
                *o += x;
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Op::Sum(parts.to_vec()), out, ng))
    }

    /// Summed binary cross-entropy of probabilities `pred` against 0/1 targets,
    /// with predictions clamped into [ε, 1−ε].
    pub fn bce(&mut self, pred: NodeId, targets: &[f64]) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.len() != targets.len() {
            return Err(Error::Dimension {
                op: "bce",
                left: pv.shape(),
                right: (1, targets.len()),
            });
        }
        let loss: f64 = pv
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| super::matrix::bce(p, t))
            .sum();
        let ng = self.ng(pred);
        Ok(self.push(Op::Bce(pred, targets.to_vec()), Matrix::scalar(loss), ng))
    }

    /// Cross-entropy of `softmax(logits)` (a single row) against a class index.
    pub fn softmax_ce(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rows() != 1 || target >= lv.cols() {
            return Err(Error::Dimension {
                op: "softmax_ce",
                left: lv.shape(),
                right: (1, target),
            });
        }
        let mut probs = lv.data().to_vec();
        softmax_in_place(&mut probs);
        let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
        let ng = self.ng(logits);
        Ok(self.push(
            Op::SoftmaxCe(logits, target, probs),
            Matrix::scalar(loss),
            ng,
        ))
    }

    /// Sum of squared errors against constant targets.
    pub fn sq_err(&mut self, pred: NodeId, targets: &[f64]) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.len() != targets.len() {
            return Err(Error::Dimension {
                op: "sq_err",
                left: pv.shape(),
                right: (1, targets.len()),
            });
        }
        let loss = pv
            .data()
            .iter()
            .zip(targets)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let ng = self.ng(pred);
        Ok(self.push(Op::SqErr(pred, targets.to_vec()), Matrix::scalar(loss), ng))
    }

    fn shape(&self, n: NodeId) -> (usize, usize) {
        self.value(n).shape()
    }

    /// Reverse pass from a scalar `loss`, adding d(loss)/d(param) into `param_grads`.
    pub fn backward(&self, loss: NodeId, param_grads: &mut [Matrix]) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called on a node that was never recorded".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if param_grads.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} grad buffers for {} params",
                param_grads.len(),
                self.params.len()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = Acc {
                tape: self,
                grads: &mut grads,
                pgrads: param_grads,
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    for (d, s) in acc.pgrads[p.0].data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc.with(*a, |ga| {
                        // ga[i,k] += sum_j g[i,j] * b[k,j]
                        for r in 0..g.rows() {
                            let grow = g.row(r);
                            for k in 0..bv.rows() {
                                let s: f64 = grow.iter().zip(bv.row(k)).map(|(x, y)| x * y).sum();
                                ga.data_mut()[r * bv.rows() + k] += s;
                            }
                        }
                    });
                    acc.with(*b, |gb| {
                        // gb[k,j] += sum_i a[i,k] * g[i,j]
                        let n = g.cols();
                        for r in 0..av.rows() {
                            let grow = g.row(r);
                            for (k, &a_rk) in av.row(r).iter().enumerate() {
                                if a_rk == 0.0 {
                                    continue;
                                }
                                let dst = &mut gb.data_mut()[k * n..(k + 1) * n];
                                for (d, &gv) in dst.iter_mut().zip(grow) {
                                    *d += a_rk * gv;
                                }
                            }
                        }
                    });
                }
                Op::SparseMatMul(x, w) => {
                    acc.with(*w, |gw| {
                        let n = g.cols();
                        for &(r, v) in &x.entries {
                            let dst = &mut gw.data_mut()[r * n..(r + 1) * n];
                            for (d, &gv) in dst.iter_mut().zip(g.data()) {
                                *d += v * gv;
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc.with(*a, |ga| add_into(ga, &g));
                    let bshape = self.shape(*b);
                    acc.with(*b, |gb| {
                        if bshape == g.shape() {
                            add_into(gb, &g);
                        } else {
                            for r in 0..g.rows() {
                                for (d, s) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                    *d += s;
                                }
                            }
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc.with(*a, |ga| {
                        for ((d, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *d += gv * y;
                        }
                    });
                    acc.with(*b, |gb| {
                        for ((d, gv), x) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *d += gv * x;
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("computed");
                    acc.with(*a, |ga| {
                        for ((d, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                            *d += gv * y * (1.0 - y);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("computed");
                    acc.with(*a, |ga| {
                        for ((d, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                            *d += gv * (1.0 - y * y);
                        }
                    });
                }
                Op::Relu(a) => {
                    let y = node.value.as_ref().expect("computed");
                    acc.with(*a, |ga| {
                        for ((d, gv), y) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                            if *y > 0.0 {
                                *d += gv;
                            }
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.shape(p).1;
                        acc.with(p, |gp| {
                            for r in 0..g.rows() {
                                for (d, s) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + cols]) {
                                    *d += s;
                                }
                            }
                        });
                        off += cols;
                    }
                }
                Op::SliceCols(a, start) => {
                    let start = *start;
                    acc.with(*a, |ga| {
                        for r in 0..g.rows() {
                            let dst = &mut ga.row_mut(r)[start..start + g.cols()];
                            for (d, s) in dst.iter_mut().zip(g.row(r)) {
                                *d += s;
                            }
                        }
                    });
                }
                Op::MaxRows(a, arg) => {
                    acc.with(*a, |ga| {
                        for (c, &r) in arg.iter().enumerate() {
                            let v = ga.get(r, c) + g.data()[c];
                            ga.set(r, c, v);
                        }
                    });
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc.with(p, |gp| add_into(gp, &g));
                    }
                }
                Op::Bce(pred, targets) => {
                    let pv = self.value(*pred);
                    let up = g.data()[0];
                    acc.with(*pred, |gp| {
                        for ((d, &p), &t) in gp.data_mut().iter_mut().zip(pv.data()).zip(targets) {
                            // clamp has zero slope outside [eps, 1-eps]
                            if p > PROB_EPS && p < 1.0 - PROB_EPS {
                                let q = clamp_prob(p);
                                *d += up * (q - t) / (q * (1.0 - q));
                            }
                        }
                    });
                }
                Op::SoftmaxCe(logits, target, probs) => {
                    let up = g.data()[0];
                    let target = *target;
                    acc.with(*logits, |gl| {
                        for (k, (d, p)) in gl.data_mut().iter_mut().zip(probs).enumerate() {
                            let onehot = if k == target { 1.0 } else { 0.0 };
                            *d += up * (p - onehot);
                        }
                    });
                }
                Op::SqErr(pred, targets) => {
                    let pv = self.value(*pred);
                    let up = g.data()[0];
                    acc.with(*pred, |gp| {
                        for ((d, &p), &t) in gp.data_mut().iter_mut().zip(pv.data()).zip(targets) {
                            *d += up * 2.0 * (p - t);
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

struct Acc<'t, 'a, 'g> {
    tape: &'t Tape<'a>,
    grads: &'g mut [Option<Matrix>],
    pgrads: &'g mut [Matrix],
}

impl Acc<'_, '_, '_> {
    /// Run `f` on the gradient buffer of node `n`, skipping constants. Param
    /// nodes write straight into the store's buffers.
    fn with(&mut self, n: NodeId, f: impl FnOnce(&mut Matrix)) {
        let node = &self.tape.nodes[n.0];
        if !node.needs_grad {
            return;
        }
        match node.op {
            Op::Param(p) => f(&mut self.pgrads[p.0]),
            _ => {
                let (r, c) = self.tape.shape(n);
                let g = self.grads[n.0].get_or_insert_with(|| Matrix::zeros(r, c));
                f(g)
            }
        }
    }
}

fn add_into(dst: &mut Matrix, src: &Matrix) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}
