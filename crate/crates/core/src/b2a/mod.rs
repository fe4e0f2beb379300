//! Byte-to-audio synthesizer: byte embeddings through a convolutional and
//! bidirectional recurrent encoder, location-sensitive attention, and an
//! autoregressive frame decoder with a stop token.
//!
//! The model stops at feature frames; waveform generation is a separate
//! concern outside this crate. Because the input is always the 256 byte
//! values, adding languages to the corpus never changes the model shape.

mod checkpoint;

pub use checkpoint::{load_b2a_checkpoint, save_b2a_checkpoint};

use crate::bytetext::{decode_bytes, DecodePolicy};
use crate::corpus::{write_feature_file, CorpusError, FeatureMatrix};
use crate::layers::{Embedding, Linear, LocationAttention, Lstm, LstmState, PreparedKeys};
use crate::tensor::{Adam, AdamConfig, Graph, NodeId, ParamStore, Tensor};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum B2aError {
    #[error("invalid synthesizer config: {0}")]
    InvalidConfig(String),
    #[error("input bytes are ill-formed UTF-8 at position {position}")]
    IllFormedInput { position: usize },
    #[error("speaker id {id} is outside the table of {size}")]
    UnknownSpeaker { id: usize, size: usize },
    #[error("non-finite loss at step {at_step}; restart from the last saved checkpoint")]
    NonFiniteLoss { at_step: u64 },
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

/// Synthesizer architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct B2aConfig {
    pub embed_dim: usize,
    pub conv_layers: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    /// Recurrent width per direction; keys are twice this.
    pub encoder_width: usize,
    pub decoder_width: usize,
    pub attention_dim: usize,
    pub location_filters: usize,
    pub location_width: usize,
    /// Output feature dimension D.
    pub feature_dim: usize,
    /// Speaker embedding table size (one speaker per language here).
    pub speakers: usize,
    pub speaker_dim: usize,
    /// Synthesis stops when the stop probability exceeds this, in (0,1).
    pub stop_threshold: f64,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl B2aConfig {
    /// Desk-scale synthesizer; the larger topology (3 conv layers of 512
    /// width-5 filters, a 256-unit-per-direction encoder) stays
    /// expressible through the same fields.
    pub fn desk(feature_dim: usize, speakers: usize, seed: u64) -> Self {
        B2aConfig {
            embed_dim: 16,
            conv_layers: 2,
            conv_filters: 32,
            conv_width: 5,
            encoder_width: 32,
            decoder_width: 64,
            attention_dim: 32,
            location_filters: 8,
            location_width: 7,
            feature_dim,
            speakers,
            speaker_dim: 4,
            stop_threshold: 0.5,
            seed,
            optimizer: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), B2aError> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("conv_layers", self.conv_layers),
            ("conv_filters", self.conv_filters),
            ("conv_width", self.conv_width),
            ("encoder_width", self.encoder_width),
            ("decoder_width", self.decoder_width),
            ("attention_dim", self.attention_dim),
            ("location_filters", self.location_filters),
            ("location_width", self.location_width),
            ("feature_dim", self.feature_dim),
            ("speakers", self.speakers),
            ("speaker_dim", self.speaker_dim),
        ];
        for (name, v) in positive {
            if v < 1 {
                return Err(B2aError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(B2aError::InvalidConfig(
                "stop_threshold must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn key_dim(&self) -> usize {
        2 * self.encoder_width
    }
}

/// One teacher-forcing example.
#[derive(Debug, Clone)]
pub struct B2aExample {
    /// Raw UTF-8 bytes, no SOS/EOS markers.
    pub bytes: Vec<u8>,
    pub frames: FeatureMatrix,
    pub speaker: usize,
}

/// Output of [`synthesize`].
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub frames: FeatureMatrix,
    /// Per-step stop probabilities in [0,1].
    pub stop_probabilities: Vec<f64>,
    /// Per-step attention weights over the input positions.
    pub alignment: Vec<Vec<f64>>,
    /// True when the frame limit fired before the stop token.
    pub max_frames_exceeded: bool,
}

/// The synthesizer model.
#[derive(Debug)]
pub struct B2aModel {
    pub config: B2aConfig,
    store: ParamStore,
    opt: Adam,
    trained_steps: u64,
    embedding: Embedding,
    enc_fwd: Lstm,
    enc_bwd: Lstm,
    attention: LocationAttention,
    decoder: Lstm,
    frame_head: Linear,
    stop_head: Linear,
}

/// Deterministically initializes a synthesizer from its config.
pub fn build_b2a(config: B2aConfig) -> Result<B2aModel, B2aError> {
    config.validate()?;
    let mut store = ParamStore::new();
    let seed = config.seed;
    let embedding = Embedding::init(&mut store, seed, "emb", 256, config.embed_dim);
    for l in 0..config.conv_layers {
        let cin = if l == 0 {
            config.embed_dim
        } else {
            config.conv_filters
        };
        let name = format!("conv.l{l}.kernel");
        store.insert(
            &name,
            crate::layers::init_weight(
                config.conv_width * cin,
                config.conv_filters,
                config.conv_width * cin,
                seed,
                &name,
            ),
        );
        store.insert(
            &format!("conv.l{l}.b"),
            Tensor::zeros(1, config.conv_filters),
        );
    }
    let enc_fwd = Lstm::init(
        &mut store,
        seed,
        "enc.fwd",
        &[("x", config.conv_filters)],
        config.encoder_width,
    );
    let enc_bwd = Lstm::init(
        &mut store,
        seed,
        "enc.bwd",
        &[("x", config.conv_filters)],
        config.encoder_width,
    );
    let attention = LocationAttention::init(
        &mut store,
        seed,
        "att",
        config.decoder_width,
        config.key_dim(),
        config.attention_dim,
        config.location_filters,
        config.location_width,
    );
    let decoder = Lstm::init(
        &mut store,
        seed,
        "dec",
        &[
            ("frame", config.feature_dim),
            ("ctx", config.key_dim()),
            ("spk", config.speaker_dim),
        ],
        config.decoder_width,
    );
    store.insert(
        "spk.table",
        crate::layers::init_weight(
            config.speakers,
            config.speaker_dim,
            config.speaker_dim,
            seed,
            "spk.table",
        ),
    );
    let readout = config.decoder_width + config.key_dim();
    let frame_head = Linear::init(&mut store, seed, "frame_out", readout, config.feature_dim);
    let stop_head = Linear::init(&mut store, seed, "stop_out", readout, 1);
    // Stop bias starts low so an untrained model keeps generating instead
    // of stopping on noise around the threshold.
    store.get_mut("stop_out.b").value.data_mut()[0] = -4.0;
    let opt = Adam::new(config.optimizer);
    Ok(B2aModel {
        config,
        store,
        opt,
        trained_steps: 0,
        embedding,
        enc_fwd,
        enc_bwd,
        attention,
        decoder,
        frame_head,
        stop_head,
    })
}

struct DecStep {
    state: LstmState,
    ctx: NodeId,
    cum: NodeId,
}

impl B2aModel {
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

    pub fn param_count(&self) -> usize {
        self.store.value_count()
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt.config.lr = lr;
    }

    pub(crate) fn restore_optimizer(&mut self, opt: Adam, steps: u64) {
        self.opt = opt;
        self.trained_steps = steps;
    }

    fn check_speaker(&self, speaker: usize) -> Result<(), B2aError> {
        if speaker >= self.config.speakers {
            return Err(B2aError::UnknownSpeaker {
                id: speaker,
                size: self.config.speakers,
            });
        }
        Ok(())
    }

    /// Conv stack then bidirectional recurrence; returns keys (T x 2W).
    /// Empty input is encoded as one zero embedding row so attention always
    /// has a key.
    fn encode(&self, g: &mut Graph, bytes: &[u8]) -> NodeId {
        let mut x = if bytes.is_empty() {
            g.input(Tensor::zeros(1, self.config.embed_dim))
        } else {
            let ids: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
            self.embedding.lookup(g, &self.store, &ids)
        };
        for l in 0..self.config.conv_layers {
            let kernel = g.param(&self.store, &format!("conv.l{l}.kernel"));
            let bias = g.param(&self.store, &format!("conv.l{l}.b"));
            let conv = g.conv1d_same(x, kernel, self.config.conv_width);
            let biased = g.add_row(conv, bias);
            x = g.tanh(biased);
        }
        let steps = g.value(x).rows();
        let fwd_proj = self.enc_fwd.proj(g, &self.store, "x", x);
        let mut state = self.enc_fwd.zero_state(g);
        let mut fwd = Vec::with_capacity(steps);
        for t in 0..steps {
            let p = g.slice_rows(fwd_proj, t, 1);
            state = self.enc_fwd.step(g, &self.store, p, state);
            fwd.push(state.h);
        }
        let bwd_proj = self.enc_bwd.proj(g, &self.store, "x", x);
        let mut state = self.enc_bwd.zero_state(g);
        let mut bwd = vec![None; steps];
        for t in (0..steps).rev() {
            let p = g.slice_rows(bwd_proj, t, 1);
            state = self.enc_bwd.step(g, &self.store, p, state);
            bwd[t] = Some(state.h);
        }
        let rows: Vec<NodeId> = (0..steps)
            .map(|t| g.concat_cols(&[fwd[t], bwd[t].expect("filled")]))
            .collect();
        g.concat_rows(&rows)
    }

    fn speaker_node(&self, g: &mut Graph, speaker: usize) -> NodeId {
        let table = g.param(&self.store, "spk.table");
        g.gather_rows(table, vec![speaker as u32])
    }

    fn zero_step(&self, g: &mut Graph, key_len: usize) -> DecStep {
        DecStep {
            state: self.decoder.zero_state(g),
            ctx: g.input(Tensor::zeros(1, self.config.key_dim())),
            cum: self.attention.zero_cumulative(g, key_len),
        }
    }

    /// One decoder step from the previous frame; returns the step state,
    /// the predicted frame, the stop logit, and the attention row.
    fn decoder_step(
        &self,
        g: &mut Graph,
        prepared: &PreparedKeys,
        spk_proj: NodeId,
        prev_frame: NodeId,
        prev: &DecStep,
    ) -> (DecStep, NodeId, NodeId, NodeId) {
        let frame_proj = self.decoder.proj(g, &self.store, "frame", prev_frame);
        let ctx_w = g.param(&self.store, &self.decoder.block_weight_name("ctx"));
        let ctx_proj = g.matmul(prev.ctx, ctx_w);
        let partial = g.add(frame_proj, ctx_proj);
        let in_proj = g.add(partial, spk_proj);
        let state = self.decoder.step(g, &self.store, in_proj, prev.state);
        let (ctx, alpha, cum) = self
            .attention
            .step(g, &self.store, state.h, prepared, prev.cum)
            .expect("cumulative length tracks the keys");
        let readout = g.concat_cols(&[state.h, ctx]);
        let frame = self.frame_head.apply(g, &self.store, readout);
        let stop = self.stop_head.apply(g, &self.store, readout);
        (DecStep { state, ctx, cum }, frame, stop, alpha)
    }

    /// Teacher-forced loss for one example: mean squared frame error plus
    /// stop-token cross-entropy. The stop target is 1 exactly at the final
    /// frame and 0 elsewhere.
    pub(crate) fn example_loss(&self, g: &mut Graph, example: &B2aExample) -> NodeId {
        let t_out = example.frames.frames();
        assert!(t_out >= 1, "target must have at least one frame");
        let keys = self.encode(g, &example.bytes);
        let prepared = self
            .attention
            .prepare(g, &self.store, keys)
            .expect("encoder emits at least one key");
        let spk = self.speaker_node(g, example.speaker);
        let spk_proj = {
            let w = g.param(&self.store, &self.decoder.block_weight_name("spk"));
            g.matmul(spk, w)
        };

        let mut step = self.zero_step(g, prepared.len);
        let mut frame_rows = Vec::with_capacity(t_out);
        let mut stop_rows = Vec::with_capacity(t_out);
        for t in 0..t_out {
            let prev_frame = if t == 0 {
                g.input(Tensor::zeros(1, self.config.feature_dim))
            } else {
                g.input(Tensor::row_vec(example.frames.row(t - 1).to_vec()))
            };
            let (next, frame, stop, _alpha) =
                self.decoder_step(g, &prepared, spk_proj, prev_frame, &step);
            step = next;
            frame_rows.push(frame);
            stop_rows.push(stop);
        }
        let frames_pred = g.concat_rows(&frame_rows);
        let mse = g.mse_mean(frames_pred, example.frames.to_tensor());
        let stops = g.concat_rows(&stop_rows);
        let stop_ce = g.bce_with_logits_mean(stops, stop_targets(t_out));
        g.add(mse, stop_ce)
    }

    /// Teacher-forced per-element frame reconstruction error, without the
    /// stop term.
    pub fn frame_mse(&self, examples: &[B2aExample]) -> Result<f64, B2aError> {
        let mut total = 0.0;
        let mut count = 0usize;
        for example in examples {
            self.check_speaker(example.speaker)?;
            validate_bytes(&example.bytes)?;
            let mut g = Graph::new();
            let t_out = example.frames.frames();
            let keys = self.encode(&mut g, &example.bytes);
            let prepared = self.attention.prepare(&mut g, &self.store, keys).unwrap();
            let spk = self.speaker_node(&mut g, example.speaker);
            let w = g.param(&self.store, &self.decoder.block_weight_name("spk"));
            let spk_proj = g.matmul(spk, w);
            let mut step = self.zero_step(&mut g, prepared.len);
            let mut se = 0.0;
            for t in 0..t_out {
                let prev_frame = if t == 0 {
                    g.input(Tensor::zeros(1, self.config.feature_dim))
                } else {
                    g.input(Tensor::row_vec(example.frames.row(t - 1).to_vec()))
                };
                let (next, frame, _, _) =
                    self.decoder_step(&mut g, &prepared, spk_proj, prev_frame, &step);
                step = next;
                se += g
                    .value(frame)
                    .row(0)
                    .iter()
                    .zip(example.frames.row(t))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            total += se;
            count += t_out * self.config.feature_dim;
        }
        Ok(total / count as f64)
    }

    /// One teacher-forced update; the loss is the mean over the batch.
    pub fn train_step(&mut self, batch: &[B2aExample]) -> Result<f64, B2aError> {
        assert!(!batch.is_empty());
        for example in batch {
            self.check_speaker(example.speaker)?;
            validate_bytes(&example.bytes)?;
        }
        let scale = 1.0 / batch.len() as f64;
        self.store.zero_grads();
        let mut total = 0.0;
        for example in batch {
            let mut g = Graph::new();
            let loss_node = self.example_loss(&mut g, example);
            let loss = g.scale(loss_node, scale);
            let grads = g.backward(loss).map_err(|_| B2aError::NonFiniteLoss {
                at_step: self.trained_steps,
            })?;
            for (name, grad) in g.param_grads(&grads) {
                self.store.accumulate_grad(name, grad, 1.0);
            }
            total += g.value(loss).item();
        }
        if !total.is_finite() {
            return Err(B2aError::NonFiniteLoss {
                at_step: self.trained_steps,
            });
        }
        self.opt.step(&mut self.store);
        self.trained_steps += 1;
        Ok(total)
    }
}

/// Stop-token targets: 1 exactly at the final frame, 0 elsewhere.
pub fn stop_targets(frames: usize) -> Vec<f64> {
    let mut targets = vec![0.0; frames];
    if frames > 0 {
        targets[frames - 1] = 1.0;
    }
    targets
}

fn validate_bytes(bytes: &[u8]) -> Result<(), B2aError> {
    match decode_bytes(bytes, DecodePolicy::Strict) {
        Ok(_) => Ok(()),
        Err(crate::bytetext::BytetextError::IllFormed { position }) => {
            Err(B2aError::IllFormedInput { position })
        }
        Err(_) => unreachable!("strict decode only fails with IllFormed"),
    }
}

/// Autoregressively renders frames for a well-formed byte sequence until
/// the stop token fires or `max_frames` is reached.
pub fn synthesize(
    model: &B2aModel,
    bytes: &[u8],
    speaker: usize,
    max_frames: usize,
) -> Result<SynthesisResult, B2aError> {
    validate_bytes(bytes)?;
    model.check_speaker(speaker)?;
    assert!(max_frames >= 1);

    let mut g = Graph::new();
    let keys = model.encode(&mut g, bytes);
    let prepared = model.attention.prepare(&mut g, &model.store, keys).unwrap();
    let spk = model.speaker_node(&mut g, speaker);
    let w = g.param(&model.store, &model.decoder.block_weight_name("spk"));
    let spk_proj = g.matmul(spk, w);

    let mut step = model.zero_step(&mut g, prepared.len);
    let mut prev_frame = g.input(Tensor::zeros(1, model.config.feature_dim));
    let mut data = Vec::new();
    let mut stops = Vec::new();
    let mut alignment = Vec::new();
    let mut exceeded = true;
    for _ in 0..max_frames {
        let (next, frame, stop, alpha) =
            model.decoder_step(&mut g, &prepared, spk_proj, prev_frame, &step);
        step = next;
        data.extend_from_slice(g.value(frame).row(0));
        alignment.push(g.value(alpha).row(0).to_vec());
        let logit = g.value(stop).item();
        let p = 1.0 / (1.0 + (-logit).exp());
        stops.push(p);
        if p > model.config.stop_threshold {
            exceeded = false;
            break;
        }
        prev_frame = frame;
    }
    let frames = FeatureMatrix::new(stops.len(), model.config.feature_dim, data);
    Ok(SynthesisResult {
        frames,
        stop_probabilities: stops,
        alignment,
        max_frames_exceeded: exceeded,
    })
}

/// Fraction of consecutive decoder steps whose expected attended position
/// does not decrease. Returns 1.0 for fewer than two steps.
pub fn alignment_monotonicity(alignment: &[Vec<f64>]) -> f64 {
    if alignment.len() < 2 {
        return 1.0;
    }
    let expected = |weights: &[f64]| -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(i, &w)| i as f64 * w)
            .sum()
    };
    let mut ok = 0usize;
    for pair in alignment.windows(2) {
        if expected(&pair[1]) >= expected(&pair[0]) - 1e-9 {
            ok += 1;
        }
    }
    ok as f64 / (alignment.len() - 1) as f64
}

/// Writes the synthesis output: a `BLF1` feature file plus a text sidecar
/// with one stop probability per line.
pub fn write_synthesis(
    base: &Path,
    result: &SynthesisResult,
) -> Result<(PathBuf, PathBuf), CorpusError> {
    let feature_path = base.with_extension("blf");
    let stops_path = base.with_extension("stops.txt");
    write_feature_file(&feature_path, &result.frames)?;
    let mut text = String::new();
    for p in &result.stop_probabilities {
        let _ = writeln!(text, "{p:.6}");
    }
    std::fs::write(&stops_path, text)?;
    Ok((feature_path, stops_path))
}
