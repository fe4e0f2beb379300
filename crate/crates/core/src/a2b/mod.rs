//! Audio-to-byte recognizer: a unidirectional recurrent encoder over
//! stacked feature frames, additive multi-head attention, a recurrent
//! decoder emitting one token per step, and a fixed softmax output.
//!
//! The same assembly serves byte output (always 256 classes) and the
//! grapheme-output baseline (one class per vocabulary symbol plus
//! specials); everything else is identical, which is what makes the two
//! directly comparable.

mod checkpoint;
mod trainer;

pub use checkpoint::{load_checkpoint, load_checkpoint_with_languages, save_checkpoint};
pub use trainer::{A2bStageTrainer, Augment, TrainOptions};

use crate::bytetext::{
    decode_bytes, encode_bytes, DecodePolicy, GraphemeVocab, EOS_BYTE, SOS_BYTE,
};
use crate::corpus::{FeatureMatrix, Utterance};
use crate::decode::{beam_search, BeamConfig, StepDecoder};
use crate::layers::{
    frame_stack, Embedding, LanguageVector, Linear, Lstm, LstmState, MultiHeadAttention,
    PreparedKeys,
};
use crate::score::{self, AlignmentCounts, ScoreRow};
use crate::tensor::{Adam, AdamConfig, Graph, NodeId, ParamStore, Tensor, TensorError};
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum A2bError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {at_step}; restart from the last saved checkpoint")]
    NonFiniteLoss { at_step: u64 },
    #[error("utterance language {0} is not in the model's language list")]
    UnknownLanguage(String),
    #[error("utterance at index {0} has no features attached")]
    MissingFeatures(usize),
    #[error("checkpoint {0} does not exist")]
    CheckpointMissing(PathBuf),
    #[error("checkpoint version {found} is not supported")]
    VersionMismatch { found: u16 },
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<TensorError> for A2bError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFiniteLoss { .. } => A2bError::NonFiniteLoss { at_step: 0 },
        }
    }
}

/// Target unit: bytes (fixed 256-way output) or graphemes over a
/// vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputUnit {
    Bytes,
    Graphemes(GraphemeVocab),
}

impl OutputUnit {
    pub fn out_dim(&self) -> usize {
        match self {
            OutputUnit::Bytes => 256,
            OutputUnit::Graphemes(v) => v.output_dim(),
        }
    }

    pub fn sos_id(&self) -> u32 {
        match self {
            OutputUnit::Bytes => SOS_BYTE as u32,
            OutputUnit::Graphemes(v) => v.sos_id(),
        }
    }

    pub fn eos_id(&self) -> u32 {
        match self {
            OutputUnit::Bytes => EOS_BYTE as u32,
            OutputUnit::Graphemes(v) => v.eos_id(),
        }
    }

    /// Target ids for a transcript, wrapped in SOS/EOS.
    pub fn encode_targets(&self, text: &str) -> Vec<u32> {
        match self {
            OutputUnit::Bytes => encode_bytes(text, true).to_ids(),
            OutputUnit::Graphemes(v) => v.encode(text, true).ids,
        }
    }

    /// Hypothesis ids (EOS already stripped) back to text; byte output is
    /// repaired with the maximal-subpart policy first.
    pub fn decode_hypothesis(&self, ids: &[u32]) -> String {
        match self {
            OutputUnit::Bytes => {
                let bytes: Vec<u8> = ids
                    .iter()
                    .filter(|&&t| t != SOS_BYTE as u32 && t != EOS_BYTE as u32)
                    .map(|&t| t as u8)
                    .collect();
                decode_bytes(&bytes, DecodePolicy::Replace).expect("replace never fails")
            }
            OutputUnit::Graphemes(v) => v.decode(ids),
        }
    }
}

/// Full architecture description; a model is a pure function of this.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub encoder_width: usize,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    pub attention_heads: usize,
    pub attention_dim: usize,
    pub embed_dim: usize,
    pub output_unit: OutputUnit,
    pub feature_dim: usize,
    pub stack_left: usize,
    pub stack_stride: usize,
    /// Languages for 1-hot conditioning; empty disables the language input.
    pub languages: Vec<String>,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl ModelConfig {
    /// Desk-scale recognizer; the paper-scale topology (5x1400 encoder,
    /// 2x1024 decoder) remains expressible through the same fields.
    pub fn desk(output_unit: OutputUnit, feature_dim: usize, seed: u64) -> Self {
        ModelConfig {
            encoder_layers: 2,
            encoder_width: 128,
            decoder_layers: 1,
            decoder_width: 128,
            attention_heads: 4,
            attention_dim: 64,
            embed_dim: 32,
            output_unit,
            feature_dim,
            stack_left: 3,
            stack_stride: 3,
            languages: Vec::new(),
            seed,
            optimizer: AdamConfig::default(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.output_unit.out_dim()
    }

    pub fn stacked_dim(&self) -> usize {
        self.feature_dim * (self.stack_left + 1)
    }

    pub fn lang_count(&self) -> usize {
        self.languages.len()
    }

    pub fn validate(&self) -> Result<(), A2bError> {
        let positive = [
            ("encoder_layers", self.encoder_layers),
            ("encoder_width", self.encoder_width),
            ("decoder_layers", self.decoder_layers),
            ("decoder_width", self.decoder_width),
            ("attention_heads", self.attention_heads),
            ("attention_dim", self.attention_dim),
            ("embed_dim", self.embed_dim),
            ("feature_dim", self.feature_dim),
            ("stack_stride", self.stack_stride),
        ];
        for (name, v) in positive {
            if v < 1 {
                return Err(A2bError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if let OutputUnit::Graphemes(v) = &self.output_unit {
            if v.output_dim() < 4 {
                return Err(A2bError::InvalidConfig(
                    "grapheme vocabulary is empty".into(),
                ));
            }
        }
        let mut langs = self.languages.clone();
        langs.sort();
        langs.dedup();
        if langs.len() != self.languages.len() {
            return Err(A2bError::InvalidConfig(
                "language list contains duplicates".into(),
            ));
        }
        Ok(())
    }

    pub fn language_index(&self, language: &str) -> Option<usize> {
        self.languages.iter().position(|l| l == language)
    }
}

/// One teacher-forcing example: feature frames and the wrapped target ids.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub features: FeatureMatrix,
    /// SOS ... EOS token ids in the output unit's space.
    pub targets: Vec<u32>,
    /// Index into the model's language list; None when unconditioned.
    pub lang: Option<usize>,
}

/// The recognizer: parameters, optimizer state, and layer wiring.
#[derive(Debug)]
pub struct A2bModel {
    pub config: ModelConfig,
    store: ParamStore,
    opt: Adam,
    trained_steps: u64,
    encoder: Vec<Lstm>,
    decoder: Vec<Lstm>,
    attention: MultiHeadAttention,
    embedding: Embedding,
    output: Linear,
}

/// Deterministically initializes a recognizer from its config.
pub fn build_a2b(config: ModelConfig) -> Result<A2bModel, A2bError> {
    config.validate()?;
    let mut store = ParamStore::new();
    let seed = config.seed;
    let n_lang = config.lang_count();
    let lang_block = |blocks: &mut Vec<(&'static str, usize)>| {
        if n_lang > 0 {
            blocks.push(("lang", n_lang));
        }
    };

    let mut encoder = Vec::with_capacity(config.encoder_layers);
    for l in 0..config.encoder_layers {
        let in_dim = if l == 0 {
            config.stacked_dim()
        } else {
            config.encoder_width
        };
        let mut blocks = vec![("x", in_dim)];
        lang_block(&mut blocks);
        encoder.push(Lstm::init(
            &mut store,
            seed,
            &format!("enc.l{l}"),
            &blocks,
            config.encoder_width,
        ));
    }

    let mut decoder = Vec::with_capacity(config.decoder_layers);
    for l in 0..config.decoder_layers {
        let mut blocks: Vec<(&'static str, usize)> = if l == 0 {
            vec![("emb", config.embed_dim), ("ctx", config.encoder_width)]
        } else {
            vec![("x", config.decoder_width)]
        };
        lang_block(&mut blocks);
        decoder.push(Lstm::init(
            &mut store,
            seed,
            &format!("dec.l{l}"),
            &blocks,
            config.decoder_width,
        ));
    }

    let attention = MultiHeadAttention::init(
        &mut store,
        seed,
        "att",
        config.attention_heads,
        config.decoder_width,
        config.encoder_width,
        config.attention_dim,
    );
    let embedding = Embedding::init(&mut store, seed, "emb", config.out_dim(), config.embed_dim);
    let output = Linear::init(
        &mut store,
        seed,
        "out",
        config.decoder_width + config.encoder_width,
        config.out_dim(),
    );
    let opt = Adam::new(config.optimizer);
    Ok(A2bModel {
        config,
        store,
        opt,
        trained_steps: 0,
        encoder,
        decoder,
        attention,
        embedding,
        output,
    })
}

/// Decoder recurrent state between emitted tokens.
#[derive(Clone)]
struct DecGraphState {
    layers: Vec<LstmState>,
    ctx: NodeId,
}

impl A2bModel {
    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn optimizer(&self) -> &Adam {
        &self.opt
    }

    pub fn trained_steps(&self) -> u64 {
        self.trained_steps
    }

    /// Adjusts the live learning rate (config.optimizer keeps the initial
    /// value used at construction).
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt.config.lr = lr;
    }

    pub fn learning_rate(&self) -> f64 {
        self.opt.config.lr
    }

    pub fn param_count(&self) -> usize {
        self.store.value_count()
    }

    pub(crate) fn restore_optimizer(&mut self, opt: Adam, steps: u64) {
        self.opt = opt;
        self.trained_steps = steps;
    }

    fn lang_vector(&self, lang: Option<usize>) -> LanguageVector {
        match (lang, self.config.lang_count()) {
            (_, 0) => LanguageVector::none(0),
            (Some(i), n) => LanguageVector::one_hot(i, n),
            (None, n) => LanguageVector::none(n),
        }
    }

    /// Per-layer language projections (1 x 4W), computed once per graph.
    fn lang_projs(
        &self,
        g: &mut Graph,
        cells: &[Lstm],
        lang: &LanguageVector,
    ) -> Vec<Option<NodeId>> {
        cells
            .iter()
            .map(|cell| {
                if lang.is_empty() {
                    None
                } else {
                    let node = g.input(lang.to_tensor());
                    Some(cell.proj(g, &self.store, "lang", node))
                }
            })
            .collect()
    }

    /// Runs the encoder over stacked frames; returns the key matrix
    /// (T' x encoder_width).
    fn encode(&self, g: &mut Graph, features: &FeatureMatrix, lang: &LanguageVector) -> NodeId {
        let stacked = frame_stack(features, self.config.stack_left, self.config.stack_stride);
        let steps = stacked.rows();
        let lang_projs = self.lang_projs(g, &self.encoder, lang);
        let mut layer_input = g.input(stacked);
        for (l, cell) in self.encoder.iter().enumerate() {
            // One matmul projects the whole sequence through the input
            // block; only the recurrent path runs per step.
            let x_proj_all = cell.proj(g, &self.store, "x", layer_input);
            let mut state = cell.zero_state(g);
            let mut outputs = Vec::with_capacity(steps);
            for t in 0..steps {
                let mut in_proj = g.slice_rows(x_proj_all, t, 1);
                if let Some(lp) = lang_projs[l] {
                    in_proj = g.add(in_proj, lp);
                }
                state = cell.step(g, &self.store, in_proj, state);
                outputs.push(state.h);
            }
            layer_input = g.concat_rows(&outputs);
        }
        layer_input
    }

    fn zero_dec_state(&self, g: &mut Graph) -> DecGraphState {
        DecGraphState {
            layers: self.decoder.iter().map(|c| c.zero_state(g)).collect(),
            ctx: g.input(Tensor::zeros(1, self.config.encoder_width)),
        }
    }

    /// One decoder step from an embedded-input projection; returns the new
    /// state and the logits row.
    fn decoder_step(
        &self,
        g: &mut Graph,
        prepared: &PreparedKeys,
        lang_projs: &[Option<NodeId>],
        emb_proj: NodeId,
        prev: &DecGraphState,
    ) -> (DecGraphState, NodeId) {
        let mut layers = Vec::with_capacity(self.decoder.len());
        let mut below = None;
        for (l, cell) in self.decoder.iter().enumerate() {
            let mut in_proj = if l == 0 {
                let w = g.param(&self.store, &cell.block_weight_name("ctx"));
                let ctx_proj = g.matmul(prev.ctx, w);
                g.add(emb_proj, ctx_proj)
            } else {
                cell.proj(g, &self.store, "x", below.expect("lower layer output"))
            };
            if let Some(lp) = lang_projs[l] {
                in_proj = g.add(in_proj, lp);
            }
            let state = cell.step(g, &self.store, in_proj, prev.layers[l]);
            below = Some(state.h);
            layers.push(state);
        }
        let query = below.expect("at least one decoder layer");
        let (ctx, _alphas) = self.attention.step(g, &self.store, query, prepared);
        let readout = g.concat_cols(&[query, ctx]);
        let logits = self.output.apply(g, &self.store, readout);
        (DecGraphState { layers, ctx }, logits)
    }

    /// Teacher-forced summed token cross-entropy for one example; returns
    /// the loss node and the number of scored positions.
    pub(crate) fn example_loss(&self, g: &mut Graph, example: &TrainExample) -> (NodeId, usize) {
        assert!(example.targets.len() >= 2, "targets must be SOS..EOS");
        let lang = self.lang_vector(example.lang);
        let keys = self.encode(g, &example.features, &lang);
        let prepared = self
            .attention
            .prepare(g, &self.store, keys)
            .expect("stacked features always yield at least one key");
        let dec_lang_projs = self.lang_projs(g, &self.decoder, &lang);

        let inputs = &example.targets[..example.targets.len() - 1];
        let predictions = example.targets[1..].to_vec();
        let emb_all = self.embedding.lookup(g, &self.store, inputs);
        let emb_proj_all = self.decoder[0].proj(g, &self.store, "emb", emb_all);

        let mut state = self.zero_dec_state(g);
        let mut logit_rows = Vec::with_capacity(inputs.len());
        for t in 0..inputs.len() {
            let emb_proj = g.slice_rows(emb_proj_all, t, 1);
            let (next, logits) = self.decoder_step(g, &prepared, &dec_lang_projs, emb_proj, &state);
            state = next;
            logit_rows.push(logits);
        }
        let all_logits = g.concat_rows(&logit_rows);
        let count = predictions.len();
        let loss = g.cross_entropy_sum(all_logits, predictions);
        (loss, count)
    }

    /// Mean per-token cross-entropy of a batch, forward only.
    pub fn batch_loss(&self, batch: &[TrainExample]) -> Result<f64, A2bError> {
        assert!(!batch.is_empty());
        let total_tokens: usize = batch.iter().map(|e| e.targets.len() - 1).sum();
        let mut total = 0.0;
        for example in batch {
            let mut g = Graph::new();
            let (loss, _) = self.example_loss(&mut g, example);
            total += g.value(loss).item();
        }
        let loss = total / total_tokens as f64;
        if !loss.is_finite() {
            return Err(A2bError::NonFiniteLoss {
                at_step: self.trained_steps,
            });
        }
        Ok(loss)
    }

    /// One teacher-forced update over a batch. The loss is averaged per
    /// token across the whole batch, so duplicating an utterance does not
    /// change it.
    pub fn train_step(&mut self, batch: &[TrainExample]) -> Result<f64, A2bError> {
        assert!(!batch.is_empty());
        let total_tokens: usize = batch.iter().map(|e| e.targets.len() - 1).sum();
        let scale = 1.0 / total_tokens as f64;
        self.store.zero_grads();
        let mut total = 0.0;
        for example in batch {
            let mut g = Graph::new();
            let (loss_sum, _) = self.example_loss(&mut g, example);
            let loss = g.scale(loss_sum, scale);
            let grads = g.backward(loss).map_err(|_| A2bError::NonFiniteLoss {
                at_step: self.trained_steps,
            })?;
            for (name, grad) in g.param_grads(&grads) {
                self.store.accumulate_grad(name, grad, 1.0);
            }
            total += g.value(loss).item();
        }
        if !total.is_finite() {
            return Err(A2bError::NonFiniteLoss {
                at_step: self.trained_steps,
            });
        }
        self.opt.step(&mut self.store);
        self.trained_steps += 1;
        Ok(total)
    }

    /// Builds a training example from an utterance with features attached.
    pub fn make_example(&self, utt: &Utterance, index: usize) -> Result<TrainExample, A2bError> {
        let features = utt
            .features
            .clone()
            .ok_or(A2bError::MissingFeatures(index))?;
        let lang = if self.config.lang_count() == 0 {
            None
        } else {
            Some(
                self.config
                    .language_index(&utt.language)
                    .ok_or_else(|| A2bError::UnknownLanguage(utt.language.clone()))?,
            )
        };
        Ok(TrainExample {
            features,
            targets: self.config.output_unit.encode_targets(&utt.text),
            lang,
        })
    }

    /// Encodes an utterance once and returns a stepwise scorer for search.
    pub fn stepper(&self, features: &FeatureMatrix, lang: Option<usize>) -> A2bStepper<'_> {
        let lang = self.lang_vector(lang);
        let mut g = Graph::new();
        let keys = self.encode(&mut g, features, &lang);
        let prepared = self
            .attention
            .prepare(&mut g, &self.store, keys)
            .expect("non-empty keys");
        let keys_value = g.value(prepared.keys).clone();
        let proj_values = prepared
            .proj_nodes()
            .iter()
            .map(|&p| g.value(p).clone())
            .collect();
        A2bStepper {
            model: self,
            keys: keys_value,
            key_proj: proj_values,
            lang,
        }
    }

    /// Default search settings for this model's output unit: the UTF-8
    /// constraint is on for byte models and off for grapheme models.
    pub fn default_beam(&self, max_len: usize) -> BeamConfig {
        BeamConfig {
            beam_size: 1,
            max_len,
            constrain_utf8: matches!(self.config.output_unit, OutputUnit::Bytes),
            length_norm_alpha: 0.0,
        }
    }
}

/// Stepwise decoder view over an encoded utterance.
pub struct A2bStepper<'a> {
    model: &'a A2bModel,
    keys: Tensor,
    key_proj: Vec<Tensor>,
    lang: LanguageVector,
}

/// Search-time decoder state: concrete tensors between steps.
#[derive(Clone)]
pub struct A2bStepState {
    layers: Vec<(Tensor, Tensor)>,
    ctx: Tensor,
}

impl A2bStepper<'_> {
    fn run_step(&self, state: Option<&A2bStepState>, token: u32) -> (A2bStepState, Vec<f64>) {
        let model = self.model;
        let mut g = Graph::new();
        let prepared = PreparedKeys::from_cached(&mut g, self.keys.clone(), self.key_proj.clone());
        let lang_projs = model.lang_projs(&mut g, &model.decoder, &self.lang);
        let prev = match state {
            Some(s) => DecGraphState {
                layers: s
                    .layers
                    .iter()
                    .map(|(h, c)| LstmState {
                        h: g.input(h.clone()),
                        c: g.input(c.clone()),
                    })
                    .collect(),
                ctx: g.input(s.ctx.clone()),
            },
            None => model.zero_dec_state(&mut g),
        };
        let emb = model.embedding.lookup(&mut g, &model.store, &[token]);
        let emb_proj = model.decoder[0].proj(&mut g, &model.store, "emb", emb);
        let (next, logits) = model.decoder_step(&mut g, &prepared, &lang_projs, emb_proj, &prev);
        let logp = g.log_softmax_rows(logits);
        let out = g.value(logp).row(0).to_vec();
        let state = A2bStepState {
            layers: next
                .layers
                .iter()
                .map(|s| (g.value(s.h).clone(), g.value(s.c).clone()))
                .collect(),
            ctx: g.value(next.ctx).clone(),
        };
        (state, out)
    }
}

impl StepDecoder for A2bStepper<'_> {
    type State = A2bStepState;

    fn vocab_size(&self) -> usize {
        self.model.config.out_dim()
    }

    fn sos_id(&self) -> u32 {
        self.model.config.output_unit.sos_id()
    }

    fn eos_id(&self) -> u32 {
        self.model.config.output_unit.eos_id()
    }

    fn begin(&self) -> (A2bStepState, Vec<f64>) {
        self.run_step(None, self.sos_id())
    }

    fn advance(&self, state: &A2bStepState, token: u32) -> (A2bStepState, Vec<f64>) {
        self.run_step(Some(state), token)
    }
}

/// Error-rate metric for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMetric {
    Wer,
    Ter,
}

/// Per-language evaluation outcome.
#[derive(Debug, Clone, Default)]
pub struct LanguageEval {
    pub counts: AlignmentCounts,
    pub utterances: usize,
    /// Per-utterance decode or scoring failures, recorded rather than fatal.
    pub errors: usize,
    pub rows: Vec<ScoreRow>,
    /// (utterance id, hypothesis text), in corpus order.
    pub hypotheses: Vec<(String, String)>,
}

impl LanguageEval {
    pub fn rate(&self) -> f64 {
        self.counts.rate()
    }
}

/// Decodes and scores every utterance, one result row per language.
///
/// Inference is read-only, so utterances are sharded across `threads`
/// workers; counts merge by summation and rows keep corpus order, making
/// the outcome independent of the thread count.
pub fn evaluate(
    model: &A2bModel,
    test: &BTreeMap<String, Vec<Utterance>>,
    beam: &BeamConfig,
    metric: EvalMetric,
    threads: usize,
) -> BTreeMap<String, LanguageEval> {
    let threads = threads.max(1);
    let mut outcome = BTreeMap::new();
    for (language, utterances) in test {
        let lang_idx = model.config.language_index(language);
        let mut results: Vec<(Option<AlignmentCounts>, String)> =
            vec![(None, String::new()); utterances.len()];
        let chunk = utterances.len().div_ceil(threads).max(1);
        std::thread::scope(|scope| {
            for (utts, out) in utterances.chunks(chunk).zip(results.chunks_mut(chunk)) {
                scope.spawn(move || {
                    for (utt, slot) in utts.iter().zip(out.iter_mut()) {
                        let Some(features) = &utt.features else {
                            continue;
                        };
                        let stepper = model.stepper(features, lang_idx);
                        let hyps = beam_search(&stepper, beam);
                        let best = &hyps[0];
                        let ids = best.payload_ids(model.config.output_unit.eos_id());
                        let text = model.config.output_unit.decode_hypothesis(&ids);
                        let scored = match metric {
                            EvalMetric::Wer => score::wer_counts(&utt.text, &text),
                            EvalMetric::Ter => score::ter_counts(&utt.text, &text),
                        };
                        *slot = (scored.ok(), text);
                    }
                });
            }
        });
        let mut eval = LanguageEval::default();
        for (i, (counts, text)) in results.into_iter().enumerate() {
            let utt_id = format!("{language}-{i:04}");
            eval.utterances += 1;
            match counts {
                Some(c) => {
                    eval.counts.merge(&c);
                    eval.rows.push(ScoreRow {
                        utt_id: utt_id.clone(),
                        counts: c,
                    });
                }
                None => eval.errors += 1,
            }
            eval.hypotheses.push((utt_id, text));
        }
        outcome.insert(language.clone(), eval);
    }
    outcome
}

#[cfg(test)]
mod tests;
