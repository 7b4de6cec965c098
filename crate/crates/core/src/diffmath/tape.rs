//! Reverse-mode expression tape.
//!
//! Every primitive pushes one node holding its forward value and the data its
//! backward rule needs. `backward` walks the nodes in exact reverse
//! construction order and accumulates gradients additively.

use crate::diffmath::sparse::CsrMatrix;
use crate::diffmath::tensor::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    SparseApply(&'a CsrMatrix, Var),
    Add(Var, Var),
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    RowSoftmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    AttentionPool {
        seq: Var,
        weights: Var,
        offsets: Vec<usize>,
        alphas: Vec<f64>,
    },
    Sum(Var),
}

impl Op<'_> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "dense-matmul",
            Op::MatMulNT(..) => "dense-matmul-nt",
            Op::SparseApply(..) => "sparse-apply",
            Op::Add(..) => "add",
            Op::AddRowBroadcast(..) => "add-row-broadcast",
            Op::Scale(..) => "scale",
            Op::ConcatRows(..) => "concat-rows",
            Op::ConcatCols(..) => "concat-cols",
            Op::SliceRows(..) => "slice-rows",
            Op::GatherRows(..) => "row-gather",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky-relu",
            Op::RowSoftmax(..) => "row-softmax",
            Op::CrossEntropy { .. } => "cross-entropy-with-logits",
            Op::AttentionPool { .. } => "attention-weighted-sum",
            Op::Sum(..) => "sum",
        }
    }
}

struct Node<'a> {
    value: Tensor,
    op: Op<'a>,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of one scalar with respect to every node on a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the differentiated output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` is disconnected.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor, op: Op<'a>) -> Result<Var> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name(), node: id });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(id))
    }

    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(shape_err("dense-matmul-nt", av, bv));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(av.data(), bv.data(), &mut out, m, k, n);
        let out = Tensor::matrix(m, n, out)?;
        self.push(out, Op::MatMulNT(a, b))
    }

    pub fn sparse_apply(&mut self, a: &'a CsrMatrix, x: Var) -> Result<Var> {
        let out = a.apply(self.value(x))?;
        self.push(out, Op::SparseApply(a, x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let mut out = av.clone();
        out.axpy(1.0, bv);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row_broadcast(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.len() != xv.cols() {
            return Err(shape_err("add-row-broadcast", xv, rv));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, r) in out.row_mut(i).iter_mut().zip(rv.data()) {
                *o += r;
            }
        }
        self.push(out, Op::AddRowBroadcast(x, row))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        let cols = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(shape_err("concat-rows", first, pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        let rows = first.rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(shape_err("concat-cols", first, pv));
            }
            cols += pv.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(rows, cols, data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice-rows",
                left: xv.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let c = xv.cols();
        let out = Tensor::matrix(len, c, xv.data()[start * c..(start + len) * c].to_vec())?;
        self.push(out, Op::SliceRows(x, start))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= xv.rows()) {
            return Err(Error::ShapeMismatch {
                op: "row-gather",
                left: xv.shape().to_vec(),
                right: vec![bad],
            });
        }
        let c = xv.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(xv.row(r));
        }
        let out = Tensor::matrix(rows.len(), c, data)?;
        self.push(out, Op::GatherRows(x, rows.to_vec()))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope))
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = xv.clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i));
        }
        self.push(out, Op::RowSoftmax(x))
    }

    /// Mean cross-entropy of row-wise softmax(logits) against integer targets.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() || targets.iter().any(|&t| t >= lv.cols()) {
            return Err(Error::ShapeMismatch {
                op: "cross-entropy-with-logits",
                left: lv.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut probs = lv.clone();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = probs.row_mut(i);
            total += log_sum_exp(row) - row[t];
            softmax_in_place(row);
        }
        let out = Tensor::scalar(total / targets.len() as f64);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Segment-wise attention pooling.
    ///
    /// `seq` holds the stacked position vectors of every segment; segment `b`
    /// spans rows `offsets[b]..offsets[b + 1]`. Each row gets the logit
    /// `row · weights`, logits are softmax-normalized within the segment, and
    /// the output row `b` is the weighted sum of that segment's rows.
    pub fn attention_pool(&mut self, seq: Var, weights: Var, offsets: &[usize]) -> Result<Var> {
        let (sv, wv) = (self.value(seq), self.value(weights));
        if wv.len() != sv.cols() {
            return Err(shape_err("attention-weighted-sum", sv, wv));
        }
        if offsets.first() != Some(&0)
            || offsets.last() != Some(&sv.rows())
            || offsets.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidArgument(
                "attention segments must be non-empty and cover the sequence".into(),
            ));
        }
        let alphas = attention_weights(sv, wv.data(), offsets);
        let m = sv.cols();
        let segments = offsets.len() - 1;
        let mut out = Tensor::zeros(&[segments, m]);
        for b in 0..segments {
            let out_row = out.row_mut(b);
            for i in offsets[b]..offsets[b + 1] {
                let a = alphas[i];
                for (o, &s) in out_row.iter_mut().zip(sv.row(i)) {
                    *o += a * s;
                }
            }
        }
        self.push(
            out,
            Op::AttentionPool {
                seq,
                weights,
                offsets: offsets.to_vec(),
                alphas,
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_value = self.value(output);
        if out_value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar output, got shape {:?}",
                out_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Tensor::filled(out_value.shape(), 1.0));

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.backprop_node(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<'a>, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                self.accumulate(grads, *a, |ga| matmul_nt_acc(g.data(), bv.data(), ga.data_mut(), m, n, k));
                self.accumulate(grads, *b, |gb| matmul_tn_acc(av.data(), g.data(), gb.data_mut(), m, k, n));
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                self.accumulate(grads, *a, |ga| matmul_acc(g.data(), bv.data(), ga.data_mut(), m, n, k));
                self.accumulate(grads, *b, |gb| matmul_tn_acc(g.data(), av.data(), gb.data_mut(), m, n, k));
            }
            Op::SparseApply(a, x) => {
                let back = a.apply_transpose(g)?;
                self.accumulate(grads, *x, |gx| gx.axpy(1.0, &back));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| ga.axpy(1.0, g));
                self.accumulate(grads, *b, |gb| gb.axpy(1.0, g));
            }
            Op::AddRowBroadcast(x, row) => {
                self.accumulate(grads, *x, |gx| gx.axpy(1.0, g));
                self.accumulate(grads, *row, |gr| {
                    for i in 0..g.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, |gx| gx.axpy(*s, g)),
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let slice = &g.data()[start * c..(start + rows) * c];
                    self.accumulate(grads, p, |gp| add_slice(gp.data_mut(), slice));
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    self.accumulate(grads, p, |gp| {
                        for i in 0..g.rows() {
                            add_slice(gp.row_mut(i), &g.row(i)[offset..offset + pc]);
                        }
                    });
                    offset += pc;
                }
            }
            Op::SliceRows(x, start) => {
                let c = g.cols();
                self.accumulate(grads, *x, |gx| {
                    add_slice(&mut gx.data_mut()[start * c..start * c + g.len()], g.data())
                });
            }
            Op::GatherRows(x, rows) => {
                self.accumulate(grads, *x, |gx| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_slice(gx.row_mut(r), g.row(i));
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                self.accumulate(grads, *x, |gx| {
                    for ((o, &gv), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, |gx| {
                    for ((o, &gv), &v) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        if v > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, |gx| {
                    for ((o, &gv), &v) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        *o += if v > 0.0 { gv } else { slope * gv };
                    }
                });
            }
            Op::RowSoftmax(x) => {
                let y = &node.value;
                self.accumulate(grads, *x, |gx| {
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let inner = dot(yr, gr);
                        for ((o, &yv), &gv) in gx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                            *o += yv * (gv - inner);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let scale = g.item() / targets.len() as f64;
                self.accumulate(grads, *logits, |gl| {
                    gl.axpy(scale, probs);
                    for (i, &t) in targets.iter().enumerate() {
                        gl.row_mut(i)[t] -= scale;
                    }
                });
            }
            Op::AttentionPool {
                seq,
                weights,
                offsets,
                alphas,
            } => {
                let (sv, wv) = (self.value(*seq), self.value(*weights));
                let z = &node.value;
                let m = sv.cols();
                // d logit_i for every sequence row
                let mut dlogit = vec![0.0; sv.rows()];
                for b in 0..offsets.len() - 1 {
                    let gb = g.row(b);
                    let zg = dot(z.row(b), gb);
                    for i in offsets[b]..offsets[b + 1] {
                        dlogit[i] = alphas[i] * (dot(sv.row(i), gb) - zg);
                    }
                }
                self.accumulate(grads, *seq, |gs| {
                    for b in 0..offsets.len() - 1 {
                        let gb = g.row(b);
                        for i in offsets[b]..offsets[b + 1] {
                            let row = gs.row_mut(i);
                            for j in 0..m {
                                row[j] += alphas[i] * gb[j] + dlogit[i] * wv.data()[j];
                            }
                        }
                    }
                });
                self.accumulate(grads, *weights, |gw| {
                    for (i, &dl) in dlogit.iter().enumerate() {
                        for (o, &s) in gw.data_mut().iter_mut().zip(sv.row(i)) {
                            *o += dl * s;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, *x, |gx| {
                    for o in gx.data_mut() {
                        *o += gv;
                    }
                });
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
        f(slot);
    }
}

fn add_slice(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Per-row attention weights of a segmented sequence (softmax within each segment).
pub fn attention_weights(seq: &Tensor, weights: &[f64], offsets: &[usize]) -> Vec<f64> {
    let mut alphas: Vec<f64> = (0..seq.rows()).map(|i| dot(seq.row(i), weights)).collect();
    for w in offsets.windows(2) {
        softmax_in_place(&mut alphas[w[0]..w[1]]);
    }
    alphas
}
