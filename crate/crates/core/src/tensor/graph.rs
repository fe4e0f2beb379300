//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records each primitive operation as it executes. Nodes are
//! appended in execution order, so reverse index order is already a valid
//! reverse topological order for backpropagation. Gradients accumulate in a
//! fixed left-to-right order, keeping results bit-reproducible.

use super::optim::ParamStore;
use super::{matmul, matmul_a_bt_acc, matmul_at_b_acc, Tensor};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    /// Loss evaluated to NaN or infinity; training should halt.
    #[error("non-finite loss: {value}")]
    NonFiniteLoss { value: f64 },
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Constant input; never receives a gradient.
    Input,
    /// Named parameter leaf.
    Param(String),
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Matrix plus a 1xN row vector broadcast over rows.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    SliceRows(NodeId, usize, usize),
    Transpose(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    /// Sum over rows of -log softmax(logits)[row, target[row]].
    CrossEntropySum(NodeId, Vec<u32>),
    /// Mean over all elements of (pred - target)^2 against a constant target.
    MseMean(NodeId, Tensor),
    /// Mean binary cross-entropy of column-vector logits against constant
    /// targets in [0,1].
    BceWithLogitsMean(NodeId, Vec<f64>),
    /// Rows of a table selected by index; duplicate ids accumulate on backward.
    GatherRows(NodeId, Vec<u32>),
    /// Same-padded 1-D convolution over time. Input is T x Cin, the kernel is
    /// (width*Cin) x Cout, output is T x Cout.
    Conv1dSame {
        input: NodeId,
        kernel: NodeId,
        width: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    /// True when a parameter is reachable through this node's inputs.
    needs_grad: bool,
}

/// Records a forward computation and differentiates it.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input, false)
    }

    /// Registers a parameter leaf by name; the tensor value is copied in.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> NodeId {
        let p = store.get(name);
        self.push(p.value.clone(), Op::Param(name.to_string()), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Matmul(a, b), needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
        let mut v = ta.clone();
        v.add_assign(tb);
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), needs)
    }

    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> NodeId {
        let (tm, tr) = (self.value(m), self.value(row));
        assert_eq!(tr.rows(), 1, "add_row expects a 1xN row");
        assert_eq!(tm.cols(), tr.cols(), "add_row width mismatch");
        let mut v = tm.clone();
        for r in 0..v.rows() {
            let base = r * v.cols();
            for c in 0..v.cols() {
                v.data_mut()[base + c] += tr.data()[c];
            }
        }
        let needs = self.needs(m) || self.needs(row);
        self.push(v, Op::AddRow(m, row), needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let v = Tensor::from_vec(ta.rows(), ta.cols(), data);
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let mut v = self.value(a).clone();
        v.scale_assign(k);
        let needs = self.needs(a);
        self.push(v, Op::Scale(a, k), needs)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let data = t
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let v = Tensor::from_vec(t.rows(), t.cols(), data);
        let needs = self.needs(a);
        self.push(v, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.tanh()).collect();
        let v = Tensor::from_vec(t.rows(), t.cols(), data);
        let needs = self.needs(a);
        self.push(v, Op::Tanh(a), needs)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(rows, total);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                let dst = r * total + off;
                v.data_mut()[dst..dst + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), needs)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let total: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(total * cols);
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows col mismatch");
            data.extend_from_slice(t.data());
        }
        let v = Tensor::from_vec(total, cols, data);
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), needs)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let t = self.value(a);
        assert!(start + len <= t.cols(), "slice_cols out of range");
        let mut v = Tensor::zeros(t.rows(), len);
        for r in 0..t.rows() {
            let src = r * t.cols() + start;
            v.data_mut()[r * len..(r + 1) * len].copy_from_slice(&t.data()[src..src + len]);
        }
        let needs = self.needs(a);
        self.push(v, Op::SliceCols(a, start, len), needs)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let t = self.value(a);
        assert!(start + len <= t.rows(), "slice_rows out of range");
        let cols = t.cols();
        let v = Tensor::from_vec(
            len,
            cols,
            t.data()[start * cols..(start + len) * cols].to_vec(),
        );
        let needs = self.needs(a);
        self.push(v, Op::SliceRows(a, start, len), needs)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(v, Op::Transpose(a), needs)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut v = t.clone();
        for r in 0..v.rows() {
            softmax_row_in_place(&mut v.data_mut()[r * t.cols()..(r + 1) * t.cols()]);
        }
        let needs = self.needs(a);
        self.push(v, Op::SoftmaxRows(a), needs)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut v = t.clone();
        let cols = t.cols();
        for r in 0..v.rows() {
            let row = &mut v.data_mut()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let needs = self.needs(a);
        self.push(v, Op::LogSoftmaxRows(a), needs)
    }

    /// Sum over rows of the negative log softmax probability of each row's
    /// target class. Targets must have one entry per logits row.
    pub fn cross_entropy_sum(&mut self, logits: NodeId, targets: Vec<u32>) -> NodeId {
        let t = self.value(logits);
        assert_eq!(t.rows(), targets.len(), "one target per logits row");
        let cols = t.cols();
        let mut total = 0.0;
        for (r, &tgt) in targets.iter().enumerate() {
            assert!((tgt as usize) < cols, "target id out of range");
            let row = t.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[tgt as usize];
        }
        let needs = self.needs(logits);
        self.push(
            Tensor::scalar(total),
            Op::CrossEntropySum(logits, targets),
            needs,
        )
    }

    pub fn mse_mean(&mut self, pred: NodeId, target: Tensor) -> NodeId {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "mse shape mismatch");
        let n = p.len() as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let needs = self.needs(pred);
        self.push(
            Tensor::scalar(total / n),
            Op::MseMean(pred, target),
            needs,
        )
    }

    pub fn bce_with_logits_mean(&mut self, logits: NodeId, targets: Vec<f64>) -> NodeId {
        let t = self.value(logits);
        assert_eq!(t.len(), targets.len(), "one target per logit");
        let n = targets.len() as f64;
        // Stable form: max(x,0) - x*t + ln(1 + exp(-|x|)).
        let total: f64 = t
            .data()
            .iter()
            .zip(&targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let needs = self.needs(logits);
        self.push(
            Tensor::scalar(total / n),
            Op::BceWithLogitsMean(logits, targets),
            needs,
        )
    }

    pub fn gather_rows(&mut self, table: NodeId, ids: Vec<u32>) -> NodeId {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in &ids {
            assert!((id as usize) < t.rows(), "gather id out of range");
            data.extend_from_slice(t.row(id as usize));
        }
        let v = Tensor::from_vec(ids.len(), cols, data);
        let needs = self.needs(table);
        self.push(v, Op::GatherRows(table, ids), needs)
    }

    pub fn conv1d_same(&mut self, input: NodeId, kernel: NodeId, width: usize) -> NodeId {
        let x = self.value(input);
        let k = self.value(kernel);
        assert!(width >= 1);
        assert_eq!(k.rows(), width * x.cols(), "kernel rows must be width*Cin");
        let cols = im2col(x, width);
        let v = matmul(&cols, k);
        let needs = self.needs(input) || self.needs(kernel);
        self.push(
            v,
            Op::Conv1dSame {
                input,
                kernel,
                width,
            },
            needs,
        )
    }

    /// Backpropagates from a scalar loss node. Fails when the loss value is
    /// not finite.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        assert_eq!(lv.shape(), (1, 1), "backward expects a scalar loss");
        let value = lv.item();
        if !value.is_finite() {
            return Err(TensorError::NonFiniteLoss { value });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let grad = grads[idx].take().expect("grad present");
            self.backprop_node(idx, &grad, &mut grads);
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    /// Iterates (name, gradient) for every parameter leaf that received one.
    pub fn param_grads<'a>(
        &'a self,
        grads: &'a Gradients,
    ) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.nodes.iter().enumerate().filter_map(|(i, n)| {
            if let Op::Param(name) = &n.op {
                grads.grads[i].as_ref().map(|g| (name.as_str(), g))
            } else {
                None
            }
        })
    }

    fn backprop_node(&self, idx: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Matmul(a, b) => {
                if self.needs(*a) {
                    let ga = ensure(grads, a.0, self.value(*a).shape());
                    matmul_a_bt_acc(grad, self.value(*b), ga);
                }
                if self.needs(*b) {
                    let gb = ensure(grads, b.0, self.value(*b).shape());
                    matmul_at_b_acc(self.value(*a), grad, gb);
                }
            }
            Op::Add(a, b) => {
                for &p in &[*a, *b] {
                    if self.needs(p) {
                        ensure(grads, p.0, self.value(p).shape()).add_assign(grad);
                    }
                }
            }
            Op::AddRow(m, row) => {
                if self.needs(*m) {
                    ensure(grads, m.0, self.value(*m).shape()).add_assign(grad);
                }
                if self.needs(*row) {
                    let gr = ensure(grads, row.0, self.value(*row).shape());
                    let cols = gr.cols();
                    for r in 0..grad.rows() {
                        let src = grad.row(r);
                        for c in 0..cols {
                            gr.data_mut()[c] += src[c];
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b).clone();
                    let ga = ensure(grads, a.0, bv.shape());
                    for ((g, &d), &o) in ga.data_mut().iter_mut().zip(grad.data()).zip(bv.data()) {
                        *g += d * o;
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a).clone();
                    let gb = ensure(grads, b.0, av.shape());
                    for ((g, &d), &o) in gb.data_mut().iter_mut().zip(grad.data()).zip(av.data()) {
                        *g += d * o;
                    }
                }
            }
            Op::Scale(a, k) => {
                if self.needs(*a) {
                    let ga = ensure(grads, a.0, self.value(*a).shape());
                    for (g, &d) in ga.data_mut().iter_mut().zip(grad.data()) {
                        *g += k * d;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(*a) {
                    let y = node.value.clone();
                    let ga = ensure(grads, a.0, y.shape());
                    for ((g, &d), &s) in ga.data_mut().iter_mut().zip(grad.data()).zip(y.data()) {
                        *g += d * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let y = node.value.clone();
                    let ga = ensure(grads, a.0, y.shape());
                    for ((g, &d), &t) in ga.data_mut().iter_mut().zip(grad.data()).zip(y.data()) {
                        *g += d * (1.0 - t * t);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.needs(p) {
                        let shape = self.value(p).shape();
                        let gp = ensure(grads, p.0, shape);
                        for r in 0..grad.rows() {
                            let src = &grad.row(r)[off..off + pc];
                            let dst = &mut gp.data_mut()[r * pc..(r + 1) * pc];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = grad.cols();
                let mut off = 0;
                for &p in parts {
                    let pr = self.value(p).rows();
                    if self.needs(p) {
                        let gp = ensure(grads, p.0, (pr, cols));
                        for (d, &s) in gp
                            .data_mut()
                            .iter_mut()
                            .zip(&grad.data()[off * cols..(off + pr) * cols])
                        {
                            *d += s;
                        }
                    }
                    off += pr;
                }
            }
            Op::SliceCols(a, start, len) => {
                if self.needs(*a) {
                    let shape = self.value(*a).shape();
                    let ga = ensure(grads, a.0, shape);
                    let cols = shape.1;
                    for r in 0..grad.rows() {
                        let src = grad.row(r);
                        let dst = &mut ga.data_mut()[r * cols + start..r * cols + start + len];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::SliceRows(a, start, _len) => {
                if self.needs(*a) {
                    let shape = self.value(*a).shape();
                    let ga = ensure(grads, a.0, shape);
                    let cols = shape.1;
                    for (d, &s) in ga.data_mut()[start * cols..]
                        .iter_mut()
                        .zip(grad.data())
                    {
                        *d += s;
                    }
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    let gt = grad.transpose();
                    ensure(grads, a.0, self.value(*a).shape()).add_assign(&gt);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.needs(*a) {
                    let y = node.value.clone();
                    let ga = ensure(grads, a.0, y.shape());
                    let cols = y.cols();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dr = grad.row(r);
                        let dot: f64 = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                        let out = &mut ga.data_mut()[r * cols..(r + 1) * cols];
                        for ((o, &yv), &dv) in out.iter_mut().zip(yr).zip(dr) {
                            *o += yv * (dv - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                if self.needs(*a) {
                    let y = node.value.clone(); // log probabilities
                    let ga = ensure(grads, a.0, y.shape());
                    let cols = y.cols();
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dr = grad.row(r);
                        let sum: f64 = dr.iter().sum();
                        let out = &mut ga.data_mut()[r * cols..(r + 1) * cols];
                        for ((o, &lv), &dv) in out.iter_mut().zip(yr).zip(dr) {
                            *o += dv - lv.exp() * sum;
                        }
                    }
                }
            }
            Op::CrossEntropySum(logits, targets) => {
                if self.needs(*logits) {
                    let d = grad.item();
                    let lv = self.value(*logits).clone();
                    let gl = ensure(grads, logits.0, lv.shape());
                    let cols = lv.cols();
                    for (r, &tgt) in targets.iter().enumerate() {
                        let row = lv.row(r);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                        let out = &mut gl.data_mut()[r * cols..(r + 1) * cols];
                        for (c, (o, &x)) in out.iter_mut().zip(row).enumerate() {
                            let p = (x - max).exp() / denom;
                            let onehot = if c == tgt as usize { 1.0 } else { 0.0 };
                            *o += d * (p - onehot);
                        }
                    }
                }
            }
            Op::MseMean(pred, target) => {
                if self.needs(*pred) {
                    let d = grad.item();
                    let pv = self.value(*pred).clone();
                    let gp = ensure(grads, pred.0, pv.shape());
                    let n = pv.len() as f64;
                    for ((g, &p), &t) in gp
                        .data_mut()
                        .iter_mut()
                        .zip(pv.data())
                        .zip(target.data())
                    {
                        *g += d * 2.0 * (p - t) / n;
                    }
                }
            }
            Op::BceWithLogitsMean(logits, targets) => {
                if self.needs(*logits) {
                    let d = grad.item();
                    let lv = self.value(*logits).clone();
                    let gl = ensure(grads, logits.0, lv.shape());
                    let n = targets.len() as f64;
                    for ((g, &x), &y) in gl.data_mut().iter_mut().zip(lv.data()).zip(targets) {
                        let s = if x >= 0.0 {
                            1.0 / (1.0 + (-x).exp())
                        } else {
                            let e = x.exp();
                            e / (1.0 + e)
                        };
                        *g += d * (s - y) / n;
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                if self.needs(*table) {
                    let shape = self.value(*table).shape();
                    let gt = ensure(grads, table.0, shape);
                    let cols = shape.1;
                    for (r, &id) in ids.iter().enumerate() {
                        let src = grad.row(r);
                        let dst =
                            &mut gt.data_mut()[id as usize * cols..(id as usize + 1) * cols];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Conv1dSame {
                input,
                kernel,
                width,
            } => {
                let x = self.value(*input).clone();
                if self.needs(*kernel) {
                    let cols = im2col(&x, *width);
                    let gk = ensure(grads, kernel.0, self.value(*kernel).shape());
                    matmul_at_b_acc(&cols, grad, gk);
                }
                if self.needs(*input) {
                    // d_cols = grad * kernel^T, then scatter back over windows.
                    let k = self.value(*kernel).clone();
                    let mut dcols = Tensor::zeros(x.rows(), k.rows());
                    matmul_a_bt_acc(grad, &k, &mut dcols);
                    let gx = ensure(grads, input.0, x.shape());
                    scatter_im2col(&dcols, gx, *width);
                }
            }
        }
    }
}

fn ensure(grads: &mut [Option<Tensor>], idx: usize, shape: (usize, usize)) -> &mut Tensor {
    grads[idx].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn softmax_row_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// T x (width*Cin) window matrix with centered zero padding.
fn im2col(x: &Tensor, width: usize) -> Tensor {
    let (t_len, cin) = x.shape();
    let pad_left = (width - 1) / 2;
    let mut out = Tensor::zeros(t_len, width * cin);
    for t in 0..t_len {
        for j in 0..width {
            let src = t as isize + j as isize - pad_left as isize;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let dst = t * width * cin + j * cin;
            out.data_mut()[dst..dst + cin].copy_from_slice(x.row(src as usize));
        }
    }
    out
}

/// Adjoint of [`im2col`]: accumulates window gradients back onto the input.
fn scatter_im2col(dcols: &Tensor, gx: &mut Tensor, width: usize) {
    let (t_len, cin) = gx.shape();
    let pad_left = (width - 1) / 2;
    for t in 0..t_len {
        for j in 0..width {
            let src = t as isize + j as isize - pad_left as isize;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let from = t * width * cin + j * cin;
            let dst = src as usize * cin;
            for c in 0..cin {
                gx.data_mut()[dst + c] += dcols.data()[from + c];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{AdamConfig, ParamStore};
    use crate::rng::Rng;

    fn store_with(name: &str, t: Tensor) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, t);
        s
    }

    #[test]
    fn sum_gradient_is_ones() {
        // loss = sum(p) via matmul with a ones column.
        let store = store_with("p", Tensor::row_vec(vec![1.0, -2.0, 3.0]));
        let mut g = Graph::new();
        let p = g.param(&store, "p");
        let ones = g.input(Tensor::from_vec(3, 1, vec![1.0; 3]));
        let loss = g.matmul(p, ones);
        let grads = g.backward(loss).unwrap();
        let gp = grads.get(p).unwrap();
        assert_eq!(gp.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn quadratic_gradient_is_parameter() {
        // loss = 0.5 * ||p||^2  =>  dloss/dp = p.
        let store = store_with("p", Tensor::row_vec(vec![0.5, -1.5, 2.0]));
        let mut g = Graph::new();
        let p = g.param(&store, "p");
        let sq = g.mul(p, p);
        let half = g.scale(sq, 0.5);
        let ones = g.input(Tensor::from_vec(3, 1, vec![1.0; 3]));
        let loss = g.matmul(half, ones);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.5, -1.5, 2.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(2, 4, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 100.0]));
        let s = g.softmax_rows(x);
        for r in 0..2 {
            let sum: f64 = g.value(s).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(g.value(s).row(r).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn cross_entropy_of_matching_onehot_is_small() {
        let mut g = Graph::new();
        // Strongly peaked logits on the target class.
        let logits = g.input(Tensor::from_vec(1, 3, vec![30.0, 0.0, 0.0]));
        let loss = g.cross_entropy_sum(logits, vec![0]);
        assert!(g.value(loss).item() < 1e-9);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let store = store_with("p", Tensor::scalar(0.0));
        let mut g = Graph::new();
        let p = g.param(&store, "p");
        let inf = g.input(Tensor::scalar(f64::INFINITY));
        let loss = g.mul(p, inf);
        // 0 * inf = NaN
        assert!(matches!(
            g.backward(loss),
            Err(TensorError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = Rng::from_seed(9);
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_fn(4, 4, |_, _| rng.normal()));
        let run = |store: &ParamStore| {
            let mut g = Graph::new();
            let w = g.param(store, "w");
            let x = g.input(Tensor::row_vec(vec![0.1, 0.2, 0.3, 0.4]));
            let h = g.matmul(x, w);
            let t = g.tanh(h);
            let loss = g.mse_mean(t, Tensor::row_vec(vec![0.0, 0.1, 0.2, 0.3]));
            let grads = g.backward(loss).unwrap();
            (
                g.value(loss).item(),
                grads.get(w).unwrap().data().to_vec(),
            )
        };
        let (l1, g1) = run(&store);
        let (l2, g2) = run(&store);
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
        let _ = AdamConfig::default();
    }
}
