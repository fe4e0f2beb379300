//! Neural building blocks: frame stacking, gated recurrent cells, additive
//! multi-head attention, location-sensitive attention, and language-vector
//! conditioning.
//!
//! Layers are parameter-name holders plus pure graph-building step
//! functions; the parameters themselves live in a [`ParamStore`]. Weight
//! matrices are split per input block (e.g. `w_x`, `w_lang`), which is
//! algebraically the same as concatenating the blocks and using one matrix,
//! and lets a model grow its language count by appending rows to the
//! language block alone.

use crate::corpus::FeatureMatrix;
use crate::rng::{hash_str, Rng};
use crate::tensor::{Graph, NodeId, ParamStore, Tensor};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("attention requires at least one key")]
    EmptyKeySequence,
    #[error("previous attention weights have length {got}, keys have length {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Uniform init in +-1/sqrt(fan_in), seeded by (seed, parameter name).
pub fn init_weight(rows: usize, cols: usize, fan_in: usize, seed: u64, name: &str) -> Tensor {
    let mut rng = Rng::derive(seed, &[hash_str(name)]);
    let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.uniform(-scale, scale))
}

/// 1-hot language indicator; all zeros means "no conditioning".
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageVector {
    values: Vec<f64>,
}

impl LanguageVector {
    pub fn one_hot(index: usize, count: usize) -> Self {
        assert!(index < count, "language index {index} out of {count}");
        let mut values = vec![0.0; count];
        values[index] = 1.0;
        LanguageVector { values }
    }

    pub fn none(count: usize) -> Self {
        LanguageVector {
            values: vec![0.0; count],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        let ones = values.iter().filter(|&&v| v == 1.0).count();
        assert!(
            values.iter().all(|&v| v == 0.0 || v == 1.0) && ones <= 1,
            "language vector must be one-hot or all zeros"
        );
        LanguageVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn hot_index(&self) -> Option<usize> {
        self.values.iter().position(|&v| v == 1.0)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::row_vec(self.values.clone())
    }
}

/// Appends the language vector to a row input: `output = input ++ lang`.
pub fn concat_language(g: &mut Graph, input: NodeId, lang: &LanguageVector) -> NodeId {
    let lang_node = g.input(lang.to_tensor());
    g.concat_cols(&[input, lang_node])
}

/// Stacks each frame with `left` neighbors to its left and downsamples by
/// `stride`: output row j covers input rows [j*stride - left ..= j*stride]
/// with zero padding below index 0. Output length is ceil(T / stride).
pub fn frame_stack(features: &FeatureMatrix, left: usize, stride: usize) -> Tensor {
    assert!(stride >= 1);
    let t = features.frames();
    let d = features.dim();
    assert!(t >= 1);
    let out_rows = t.div_ceil(stride);
    let width = d * (left + 1);
    let mut out = Tensor::zeros(out_rows, width);
    for j in 0..out_rows {
        let center = j * stride;
        for (slot, offset) in (0..=left).rev().enumerate() {
            let src = center as isize - offset as isize;
            if src < 0 {
                continue;
            }
            let dst = j * width + slot * d;
            out.data_mut()[dst..dst + d].copy_from_slice(features.row(src as usize));
        }
    }
    out
}

/// State of one recurrent cell between steps.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

/// Gated recurrent (LSTM) cell with named input blocks.
///
/// Gate order in the fused weight matrices is input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub prefix: String,
    pub width: usize,
    blocks: Vec<(String, usize)>,
}

impl Lstm {
    /// Registers parameters for a cell with the given input blocks.
    pub fn init(
        store: &mut ParamStore,
        seed: u64,
        prefix: &str,
        blocks: &[(&str, usize)],
        width: usize,
    ) -> Self {
        assert!(width >= 1);
        let fan_in: usize = blocks.iter().map(|&(_, d)| d).sum::<usize>() + width;
        for &(name, dim) in blocks {
            let pname = format!("{prefix}.w_{name}");
            store.insert(&pname, init_weight(dim, 4 * width, fan_in, seed, &pname));
        }
        let wh = format!("{prefix}.wh");
        store.insert(&wh, init_weight(width, 4 * width, fan_in, seed, &wh));
        // Forget-gate bias starts at 1 so memory persists early in training.
        let mut bias = Tensor::zeros(1, 4 * width);
        for i in width..2 * width {
            bias.data_mut()[i] = 1.0;
        }
        store.insert(&format!("{prefix}.b"), bias);
        Lstm {
            prefix: prefix.to_string(),
            width,
            blocks: blocks.iter().map(|&(n, d)| (n.to_string(), d)).collect(),
        }
    }

    pub fn block_weight_name(&self, block: &str) -> String {
        format!("{}.w_{block}", self.prefix)
    }

    pub fn wh_name(&self) -> String {
        format!("{}.wh", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn block_dims(&self) -> &[(String, usize)] {
        &self.blocks
    }

    /// Projects one input block: `x * w_block`. Rows may be a whole
    /// sequence, so per-step slices reuse a single big matmul.
    pub fn proj(&self, g: &mut Graph, store: &ParamStore, block: &str, x: NodeId) -> NodeId {
        let w = g.param(store, &self.block_weight_name(block));
        g.matmul(x, w)
    }

    /// Zero initial state for a fresh sequence.
    pub fn zero_state(&self, g: &mut Graph) -> LstmState {
        LstmState {
            h: g.input(Tensor::zeros(1, self.width)),
            c: g.input(Tensor::zeros(1, self.width)),
        }
    }

    /// One step given the summed projections of all input blocks at this
    /// step (a 1 x 4*width row).
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input_proj: NodeId,
        state: LstmState,
    ) -> LstmState {
        let wh = g.param(store, &self.wh_name());
        let b = g.param(store, &self.bias_name());
        let h_proj = g.matmul(state.h, wh);
        let pre = g.add(input_proj, h_proj);
        let gates = g.add_row(pre, b);
        let w = self.width;
        let i = g.slice_cols(gates, 0, w);
        let f = g.slice_cols(gates, w, w);
        let cell = g.slice_cols(gates, 2 * w, w);
        let o = g.slice_cols(gates, 3 * w, w);
        let i_s = g.sigmoid(i);
        let f_s = g.sigmoid(f);
        let cell_t = g.tanh(cell);
        let o_s = g.sigmoid(o);
        let keep = g.mul(f_s, state.c);
        let write = g.mul(i_s, cell_t);
        let c_new = g.add(keep, write);
        let c_act = g.tanh(c_new);
        let h_new = g.mul(o_s, c_act);
        LstmState { h: h_new, c: c_new }
    }
}

/// Per-head score path shared by the additive and location-sensitive
/// mechanisms: alpha = softmax(v . tanh(keys_proj + query_proj [+ extra])).
fn head_alpha(
    g: &mut Graph,
    keys_proj: NodeId,
    query_proj: NodeId,
    v: NodeId,
    extra: Option<NodeId>,
) -> NodeId {
    let mut pre = g.add_row(keys_proj, query_proj);
    if let Some(e) = extra {
        pre = g.add(pre, e);
    }
    let act = g.tanh(pre);
    let scores = g.matmul(act, v); // T x 1
    let row = g.transpose(scores); // 1 x T
    g.softmax_rows(row)
}

/// Keys prepared once per utterance: the raw key matrix plus per-head
/// projections.
pub struct PreparedKeys {
    pub keys: NodeId,
    pub len: usize,
    proj: Vec<NodeId>,
}

impl PreparedKeys {
    /// Rebuilds prepared keys in a fresh graph from cached tensor values,
    /// so stepwise decoding does not re-project the keys every step.
    pub fn from_cached(g: &mut Graph, keys: Tensor, proj: Vec<Tensor>) -> Self {
        let len = keys.rows();
        PreparedKeys {
            keys: g.input(keys),
            len,
            proj: proj.into_iter().map(|p| g.input(p)).collect(),
        }
    }

    pub fn proj_nodes(&self) -> &[NodeId] {
        &self.proj
    }
}

/// Additive content-based attention with several heads. Head contexts are
/// concatenated and linearly projected back to the key width.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub prefix: String,
    pub heads: usize,
    pub query_dim: usize,
    pub key_dim: usize,
    pub attn_dim: usize,
}

impl MultiHeadAttention {
    pub fn init(
        store: &mut ParamStore,
        seed: u64,
        prefix: &str,
        heads: usize,
        query_dim: usize,
        key_dim: usize,
        attn_dim: usize,
    ) -> Self {
        assert!(heads >= 1);
        for h in 0..heads {
            for (suffix, rows, cols, fan) in [
                ("wq", query_dim, attn_dim, query_dim),
                ("wk", key_dim, attn_dim, key_dim),
                ("v", attn_dim, 1, attn_dim),
            ] {
                let name = format!("{prefix}.h{h}.{suffix}");
                store.insert(&name, init_weight(rows, cols, fan, seed, &name));
            }
        }
        let wo = format!("{prefix}.wo");
        store.insert(
            &wo,
            init_weight(heads * key_dim, key_dim, heads * key_dim, seed, &wo),
        );
        MultiHeadAttention {
            prefix: prefix.to_string(),
            heads,
            query_dim,
            key_dim,
            attn_dim,
        }
    }

    pub fn prepare(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        keys: NodeId,
    ) -> Result<PreparedKeys, LayerError> {
        let len = g.value(keys).rows();
        if len == 0 {
            return Err(LayerError::EmptyKeySequence);
        }
        let proj = (0..self.heads)
            .map(|h| {
                let wk = g.param(store, &format!("{}.h{h}.wk", self.prefix));
                g.matmul(keys, wk)
            })
            .collect();
        Ok(PreparedKeys { keys, len, proj })
    }

    /// One attention read. Returns the projected context (1 x key_dim) and
    /// each head's weights (1 x T rows).
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: NodeId,
        prepared: &PreparedKeys,
    ) -> (NodeId, Vec<NodeId>) {
        let mut contexts = Vec::with_capacity(self.heads);
        let mut alphas = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let wq = g.param(store, &format!("{}.h{h}.wq", self.prefix));
            let v = g.param(store, &format!("{}.h{h}.v", self.prefix));
            let q_proj = g.matmul(query, wq);
            let alpha = head_alpha(g, prepared.proj[h], q_proj, v, None);
            let context = g.matmul(alpha, prepared.keys);
            contexts.push(context);
            alphas.push(alpha);
        }
        let concat = g.concat_cols(&contexts);
        let wo = g.param(store, &format!("{}.wo", self.prefix));
        let projected = g.matmul(concat, wo);
        (projected, alphas)
    }
}

/// Single-head attention whose scores add a term computed by convolving the
/// cumulative previous weights, so the mechanism can track how far along
/// the keys it has already read.
#[derive(Debug, Clone)]
pub struct LocationAttention {
    pub prefix: String,
    pub query_dim: usize,
    pub key_dim: usize,
    pub attn_dim: usize,
    pub loc_filters: usize,
    pub loc_width: usize,
}

impl LocationAttention {
    pub fn init(
        store: &mut ParamStore,
        seed: u64,
        prefix: &str,
        query_dim: usize,
        key_dim: usize,
        attn_dim: usize,
        loc_filters: usize,
        loc_width: usize,
    ) -> Self {
        for (suffix, rows, cols, fan) in [
            ("wq", query_dim, attn_dim, query_dim),
            ("wk", key_dim, attn_dim, key_dim),
            ("v", attn_dim, 1, attn_dim),
            ("loc_kernel", loc_width, loc_filters, loc_width),
            ("wf", loc_filters, attn_dim, loc_filters),
        ] {
            let name = format!("{prefix}.{suffix}");
            store.insert(&name, init_weight(rows, cols, fan, seed, &name));
        }
        LocationAttention {
            prefix: prefix.to_string(),
            query_dim,
            key_dim,
            attn_dim,
            loc_filters,
            loc_width,
        }
    }

    pub fn prepare(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        keys: NodeId,
    ) -> Result<PreparedKeys, LayerError> {
        let len = g.value(keys).rows();
        if len == 0 {
            return Err(LayerError::EmptyKeySequence);
        }
        let wk = g.param(store, &format!("{}.wk", self.prefix));
        let proj = vec![g.matmul(keys, wk)];
        Ok(PreparedKeys { keys, len, proj })
    }

    /// Zero cumulative-weight column for the start of decoding.
    pub fn zero_cumulative(&self, g: &mut Graph, len: usize) -> NodeId {
        g.input(Tensor::zeros(len, 1))
    }

    /// One attention read. `cumulative` is the T x 1 column of summed
    /// previous weights; the returned triple is (context, alpha row, new
    /// cumulative column).
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: NodeId,
        prepared: &PreparedKeys,
        cumulative: NodeId,
    ) -> Result<(NodeId, NodeId, NodeId), LayerError> {
        let got = g.value(cumulative).rows();
        if got != prepared.len {
            return Err(LayerError::LengthMismatch {
                got,
                expected: prepared.len,
            });
        }
        let wq = g.param(store, &format!("{}.wq", self.prefix));
        let v = g.param(store, &format!("{}.v", self.prefix));
        let kernel = g.param(store, &format!("{}.loc_kernel", self.prefix));
        let wf = g.param(store, &format!("{}.wf", self.prefix));
        let q_proj = g.matmul(query, wq);
        let loc_features = g.conv1d_same(cumulative, kernel, self.loc_width); // T x F
        let loc_term = g.matmul(loc_features, wf); // T x A
        let alpha = head_alpha(g, prepared.proj[0], q_proj, v, Some(loc_term));
        let context = g.matmul(alpha, prepared.keys);
        let alpha_col = g.transpose(alpha);
        let new_cum = g.add(cumulative, alpha_col);
        Ok((context, alpha, new_cum))
    }
}

/// Affine map `x * w + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init(store: &mut ParamStore, seed: u64, prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = format!("{prefix}.w");
        store.insert(&w, init_weight(in_dim, out_dim, in_dim, seed, &w));
        store.insert(&format!("{prefix}.b"), Tensor::zeros(1, out_dim));
        Linear {
            prefix: prefix.to_string(),
            in_dim,
            out_dim,
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> NodeId {
        let w = g.param(store, &format!("{}.w", self.prefix));
        let b = g.param(store, &format!("{}.b", self.prefix));
        let h = g.matmul(x, w);
        g.add_row(h, b)
    }
}

/// Token embedding table.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub prefix: String,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn init(store: &mut ParamStore, seed: u64, prefix: &str, count: usize, dim: usize) -> Self {
        let name = format!("{prefix}.table");
        store.insert(&name, init_weight(count, dim, dim, seed, &name));
        Embedding {
            prefix: prefix.to_string(),
            count,
            dim,
        }
    }

    pub fn lookup(&self, g: &mut Graph, store: &ParamStore, ids: &[u32]) -> NodeId {
        let table = g.param(store, &format!("{}.table", self.prefix));
        g.gather_rows(table, ids.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, grad_check_report, GradCheckOptions};

    #[test]
    fn frame_stack_matches_index_formula_bruteforce() {
        // Content equality against the index formula for every T up to 32.
        let d = 2;
        for t in 1..=32usize {
            let feats = FeatureMatrix::new(
                t,
                d,
                (0..t * d).map(|i| i as f64 + 1.0).collect(),
            );
            for (left, stride) in [(3usize, 3usize), (0, 1), (2, 2), (1, 3)] {
                let out = frame_stack(&feats, left, stride);
                assert_eq!(out.rows(), t.div_ceil(stride), "T={t} stride={stride}");
                assert_eq!(out.cols(), d * (left + 1));
                for j in 0..out.rows() {
                    for slot in 0..=left {
                        let src = j as isize * stride as isize - (left - slot) as isize;
                        for k in 0..d {
                            let expected = if src < 0 {
                                0.0
                            } else {
                                feats.row(src as usize)[k]
                            };
                            assert_eq!(
                                out.get(j, slot * d + k),
                                expected,
                                "T={t} left={left} stride={stride} j={j} slot={slot}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn frame_stack_example_shape_and_padding() {
        let feats = FeatureMatrix::new(9, 2, (0..18).map(|i| i as f64 + 1.0).collect());
        let out = frame_stack(&feats, 3, 3);
        assert_eq!(out.shape(), (3, 8));
        // Row 0: three zero-padded slots then frame 0.
        assert_eq!(out.row(0), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
        // Row 1 covers frames 0..=3.
        assert_eq!(out.row(1), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn frame_stack_single_frame() {
        let feats = FeatureMatrix::new(1, 2, vec![5.0, 6.0]);
        let out = frame_stack(&feats, 3, 3);
        assert_eq!(out.shape(), (1, 8));
        assert_eq!(out.row(0), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 6.0]);
    }

    #[test]
    fn frame_stack_identity_config() {
        let feats = FeatureMatrix::new(4, 3, (0..12).map(|i| i as f64).collect());
        let out = frame_stack(&feats, 0, 1);
        assert_eq!(out, feats.to_tensor());
    }

    #[test]
    fn lstm_zero_everything_gives_zero_output() {
        let mut store = ParamStore::new();
        let width = 4;
        // Zero parameters installed by hand.
        store.insert("z.w_x", Tensor::zeros(3, 4 * width));
        store.insert("z.wh", Tensor::zeros(width, 4 * width));
        store.insert("z.b", Tensor::zeros(1, 4 * width));
        let cell = Lstm {
            prefix: "z".into(),
            width,
            blocks: vec![("x".into(), 3)],
        };
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(1, 3));
        let xp = cell.proj(&mut g, &store, "x", x);
        let state = cell.zero_state(&mut g);
        let next = cell.step(&mut g, &store, xp, state);
        assert!(g.value(next.h).data().iter().all(|&v| v == 0.0));
        assert!(g.value(next.c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_forget_bias_preserves_memory() {
        // With a saturated forget gate, step-10 output still depends on the
        // step-0 input.
        let mut store = ParamStore::new();
        let width = 3;
        let cell = Lstm::init(&mut store, 7, "m", &[("x", 2)], width);
        // Saturate the forget gate.
        let bias = store.get_mut(&cell.bias_name());
        for i in width..2 * width {
            bias.value.data_mut()[i] = 25.0;
        }
        let run = |first_input: f64| -> Vec<f64> {
            let mut g = Graph::new();
            let mut state = cell.zero_state(&mut g);
            for step in 0..10 {
                let x = if step == 0 {
                    g.input(Tensor::row_vec(vec![first_input, -first_input]))
                } else {
                    g.input(Tensor::zeros(1, 2))
                };
                let xp = cell.proj(&mut g, &store, "x", x);
                state = cell.step(&mut g, &store, xp, state);
            }
            g.value(state.h).data().to_vec()
        };
        let a = run(2.0);
        let b = run(-2.0);
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-3, "step-0 input must still matter at step 10: {diff}");
    }

    #[test]
    fn lstm_gradient_check_over_unrolled_sequence() {
        let mut store = ParamStore::new();
        let cell = Lstm::init(&mut store, 3, "g", &[("x", 2)], 3);
        let inputs: Vec<Tensor> = (0..5)
            .map(|i| Tensor::row_vec(vec![0.3 * i as f64 - 0.5, 0.1 * i as f64]))
            .collect();
        let target = Tensor::row_vec(vec![0.2, -0.1, 0.4]);
        let report = grad_check(
            &mut store,
            |s| {
                let mut g = Graph::new();
                let mut state = cell.zero_state(&mut g);
                for input in &inputs {
                    let x = g.input(input.clone());
                    let xp = cell.proj(&mut g, s, "x", x);
                    state = cell.step(&mut g, s, xp, state);
                }
                let loss = g.mse_mean(state.h, target.clone());
                (g, loss)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{}", grad_check_report(&report));
    }

    #[test]
    fn attention_single_key_is_fully_attended() {
        let mut store = ParamStore::new();
        let attn = MultiHeadAttention::init(&mut store, 5, "a", 2, 4, 3, 6);
        let mut g = Graph::new();
        let keys = g.input(Tensor::from_fn(1, 3, |_, c| 0.3 * c as f64 + 0.1));
        let prepared = attn.prepare(&mut g, &store, keys).unwrap();
        let query = g.input(Tensor::row_vec(vec![0.5, -0.5, 0.25, 0.0]));
        let (_, alphas) = attn.step(&mut g, &store, query, &prepared);
        for alpha in alphas {
            assert_eq!(g.value(alpha).data(), &[1.0]);
        }
    }

    #[test]
    fn attention_identical_keys_give_uniform_weights() {
        let mut store = ParamStore::new();
        let attn = MultiHeadAttention::init(&mut store, 5, "a", 2, 4, 3, 6);
        let mut g = Graph::new();
        let t = 7;
        let keys = g.input(Tensor::from_fn(t, 3, |_, c| 0.2 * c as f64 - 0.3));
        let prepared = attn.prepare(&mut g, &store, keys).unwrap();
        let query = g.input(Tensor::row_vec(vec![0.1, 0.9, -0.4, 0.6]));
        let (_, alphas) = attn.step(&mut g, &store, query, &prepared);
        for alpha in alphas {
            let sum: f64 = g.value(alpha).data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for &w in g.value(alpha).data() {
                assert!((w - 1.0 / t as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_weights_always_normalized() {
        let mut store = ParamStore::new();
        let attn = MultiHeadAttention::init(&mut store, 21, "a", 4, 5, 6, 8);
        for seed in 0..20u64 {
            let mut rng = Rng::from_seed(seed);
            let mut g = Graph::new();
            let keys = g.input(Tensor::from_fn(5, 6, |_, _| rng.normal()));
            let prepared = attn.prepare(&mut g, &store, keys).unwrap();
            let query = g.input(Tensor::from_fn(1, 5, |_, _| rng.normal()));
            let (_, alphas) = attn.step(&mut g, &store, query, &prepared);
            for alpha in alphas {
                let v = g.value(alpha);
                let sum: f64 = v.data().iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(v.data().iter().all(|&w| w >= 0.0));
            }
        }
    }

    #[test]
    fn attention_gradient_check() {
        let mut store = ParamStore::new();
        let attn = MultiHeadAttention::init(&mut store, 13, "a", 2, 3, 4, 5);
        let keys_val = Tensor::from_fn(4, 4, |r, c| 0.2 * r as f64 - 0.15 * c as f64 + 0.05);
        let query_val = Tensor::row_vec(vec![0.4, -0.2, 0.7]);
        let report = grad_check(
            &mut store,
            |s| {
                let mut g = Graph::new();
                let keys = g.input(keys_val.clone());
                let prepared = attn.prepare(&mut g, s, keys).unwrap();
                let query = g.input(query_val.clone());
                let (ctx, _) = attn.step(&mut g, s, query, &prepared);
                let loss = g.mse_mean(ctx, Tensor::zeros(1, 4));
                (g, loss)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{}", grad_check_report(&report));
    }

    #[test]
    fn empty_keys_are_rejected() {
        let mut store = ParamStore::new();
        let attn = MultiHeadAttention::init(&mut store, 5, "a", 1, 4, 3, 6);
        let mut g = Graph::new();
        let keys = g.input(Tensor::zeros(0, 3));
        assert!(matches!(
            attn.prepare(&mut g, &store, keys),
            Err(LayerError::EmptyKeySequence)
        ));
    }

    #[test]
    fn location_attention_with_zero_conv_equals_additive_single_head() {
        let mut store = ParamStore::new();
        let loc = LocationAttention::init(&mut store, 9, "loc", 3, 4, 5, 2, 3);
        // Zero the location parameters.
        store.get_mut("loc.loc_kernel").value.fill(0.0);
        store.get_mut("loc.wf").value.fill(0.0);

        let keys_val = Tensor::from_fn(6, 4, |r, c| 0.31 * r as f64 - 0.17 * c as f64 + 0.02);
        let query_val = Tensor::row_vec(vec![0.8, -0.6, 0.1]);

        // Reference additive path using the same wq/wk/v parameters.
        let mut g1 = Graph::new();
        let keys1 = g1.input(keys_val.clone());
        let wk = g1.param(&store, "loc.wk");
        let kp = g1.matmul(keys1, wk);
        let q1 = g1.input(query_val.clone());
        let wq = g1.param(&store, "loc.wq");
        let qp = g1.matmul(q1, wq);
        let v = g1.param(&store, "loc.v");
        let alpha_ref = head_alpha(&mut g1, kp, qp, v, None);
        let ctx_ref = g1.matmul(alpha_ref, keys1);

        // Location path with cumulative weights present but conv params zero.
        let mut g2 = Graph::new();
        let keys2 = g2.input(keys_val.clone());
        let prepared = loc.prepare(&mut g2, &store, keys2).unwrap();
        let q2 = g2.input(query_val.clone());
        let mut cum = g2.input(Tensor::from_fn(6, 1, |r, _| 0.1 * r as f64));
        let (ctx, alpha, new_cum) = loc
            .step(&mut g2, &store, q2, &prepared, cum)
            .unwrap();
        cum = new_cum;
        let _ = cum;

        assert_eq!(g1.value(alpha_ref).data(), g2.value(alpha).data());
        assert_eq!(g1.value(ctx_ref).data(), g2.value(ctx).data());
    }

    #[test]
    fn location_attention_single_key_and_length_mismatch() {
        let mut store = ParamStore::new();
        let loc = LocationAttention::init(&mut store, 9, "loc", 3, 4, 5, 2, 3);
        let mut g = Graph::new();
        let keys = g.input(Tensor::from_fn(1, 4, |_, c| c as f64 * 0.2));
        let prepared = loc.prepare(&mut g, &store, keys).unwrap();
        let q = g.input(Tensor::row_vec(vec![0.1, 0.2, 0.3]));
        let cum = loc.zero_cumulative(&mut g, 1);
        let (_, alpha, _) = loc.step(&mut g, &store, q, &prepared, cum).unwrap();
        assert_eq!(g.value(alpha).data(), &[1.0]);

        let bad_cum = g.input(Tensor::zeros(3, 1));
        assert!(matches!(
            loc.step(&mut g, &store, q, &prepared, bad_cum),
            Err(LayerError::LengthMismatch { got: 3, expected: 1 })
        ));
    }

    #[test]
    fn location_attention_gradient_check() {
        let mut store = ParamStore::new();
        let loc = LocationAttention::init(&mut store, 29, "loc", 3, 4, 5, 2, 3);
        let keys_val = Tensor::from_fn(5, 4, |r, c| 0.1 * (r * 4 + c) as f64 - 0.2);
        let query_val = Tensor::row_vec(vec![0.3, -0.8, 0.5]);
        let report = grad_check(
            &mut store,
            |s| {
                let mut g = Graph::new();
                let keys = g.input(keys_val.clone());
                let prepared = loc.prepare(&mut g, s, keys).unwrap();
                let q = g.input(query_val.clone());
                let cum0 = loc.zero_cumulative(&mut g, 5);
                let (ctx1, _, cum1) = loc.step(&mut g, s, q, &prepared, cum0).unwrap();
                // Second step through the cumulative path.
                let (ctx2, _, _) = loc.step(&mut g, s, q, &prepared, cum1).unwrap();
                let both = g.concat_cols(&[ctx1, ctx2]);
                let loss = g.mse_mean(both, Tensor::zeros(1, 8));
                (g, loss)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{}", grad_check_report(&report));
    }

    #[test]
    fn concat_language_appends_one_hot() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vec(vec![0.5, 0.6]));
        let lang = LanguageVector::one_hot(0, 4);
        let out = concat_language(&mut g, x, &lang);
        assert_eq!(g.value(out).data(), &[0.5, 0.6, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn all_zero_language_vector_is_inert_when_weights_are_zeroed() {
        // A conditioned linear map whose language rows are zeroed equals the
        // unconditioned map with the same feature weights.
        let mut rng = Rng::from_seed(3);
        let feat_w = Tensor::from_fn(2, 3, |_, _| rng.normal());
        let mut conditioned = Tensor::zeros(6, 3);
        for r in 0..2 {
            for c in 0..3 {
                conditioned.set(r, c, feat_w.get(r, c));
            }
        }
        let mut store = ParamStore::new();
        store.insert("w_full", conditioned);
        store.insert("w_feat", feat_w);

        let x = Tensor::row_vec(vec![0.7, -0.3]);
        let mut g = Graph::new();
        let xin = g.input(x.clone());
        let lang = LanguageVector::none(4);
        let xl = concat_language(&mut g, xin, &lang);
        let wf = g.param(&store, "w_full");
        let cond_out = g.matmul(xl, wf);
        let xin2 = g.input(x);
        let wp = g.param(&store, "w_feat");
        let plain_out = g.matmul(xin2, wp);
        assert_eq!(g.value(cond_out).data(), g.value(plain_out).data());
    }

    #[test]
    fn different_language_vectors_change_outputs() {
        let mut store = ParamStore::new();
        let lin = Linear::init(&mut store, 41, "probe", 6, 4);
        let feats = Tensor::row_vec(vec![0.2, -0.4, 0.6, 0.1]);
        let mut outs = Vec::new();
        for idx in 0..2 {
            let mut g = Graph::new();
            let x = g.input(feats.clone());
            let xl = concat_language(&mut g, x, &LanguageVector::one_hot(idx, 2));
            let out = lin.apply(&mut g, &store, xl);
            outs.push(g.value(out).data().to_vec());
        }
        assert_ne!(outs[0], outs[1]);
    }

    #[test]
    fn language_vector_constructors_enforce_invariants() {
        assert_eq!(LanguageVector::one_hot(1, 3).values(), &[0.0, 1.0, 0.0]);
        assert_eq!(LanguageVector::none(2).hot_index(), None);
        let bad = std::panic::catch_unwind(|| LanguageVector::from_values(vec![1.0, 1.0]));
        assert!(bad.is_err());
    }

    #[test]
    fn embedding_and_linear_gradient_check() {
        let mut store = ParamStore::new();
        let emb = Embedding::init(&mut store, 51, "emb", 5, 3);
        let lin = Linear::init(&mut store, 51, "out", 3, 4);
        let report = grad_check(
            &mut store,
            |s| {
                let mut g = Graph::new();
                let e = emb.lookup(&mut g, s, &[1, 4, 1]);
                let y = lin.apply(&mut g, s, e);
                let loss = g.cross_entropy_sum(y, vec![0, 3, 2]);
                let scaled = g.scale(loss, 1.0 / 3.0);
                (g, scaled)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{}", grad_check_report(&report));
    }
}
