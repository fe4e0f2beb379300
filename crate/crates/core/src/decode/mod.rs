//! Greedy and beam-search decoding over token log-probabilities, with an
//! optional UTF-8 well-formedness constraint for byte outputs.
//!
//! The search is generic over a [`StepDecoder`], so the same code serves
//! the recognizer and table-driven toy models in tests.

use crate::bytetext::{allowed_next, utf8_step, Utf8State, EOS_BYTE, SOS_BYTE};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Autoregressive scorer: produces normalized log-probabilities over the
/// token vocabulary, one position at a time.
pub trait StepDecoder {
    type State: Clone;

    /// Vocabulary size (256 for byte models).
    fn vocab_size(&self) -> usize;
    fn sos_id(&self) -> u32;
    fn eos_id(&self) -> u32;

    /// State after consuming SOS, plus log-probabilities for the first
    /// output position.
    fn begin(&self) -> (Self::State, Vec<f64>);

    /// Consumes one emitted token; returns the next state and the
    /// log-probabilities for the following position.
    fn advance(&self, state: &Self::State, token: u32) -> (Self::State, Vec<f64>);
}

/// Search configuration.
#[derive(Debug, Clone)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Maximum emitted tokens (EOS included).
    pub max_len: usize,
    /// Mask tokens that would make the byte sequence ill-formed; only
    /// meaningful for byte models.
    pub constrain_utf8: bool,
    /// Length-normalization exponent; 0 disables normalization.
    pub length_norm_alpha: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 1,
            max_len: 64,
            constrain_utf8: true,
            length_norm_alpha: 0.0,
        }
    }
}

/// One decoded candidate. `tokens` excludes SOS; a finished hypothesis ends
/// with EOS. An unfinished hypothesis means the length limit was hit.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub utf8: Utf8State,
    pub finished: bool,
}

impl Hypothesis {
    /// Emitted byte payload (EOS stripped); only meaningful in byte mode.
    pub fn byte_payload(&self) -> Vec<u8> {
        self.tokens
            .iter()
            .filter(|&&t| t != EOS_BYTE as u32 && t != SOS_BYTE as u32)
            .map(|&t| t as u8)
            .collect()
    }

    /// Emitted token ids with EOS stripped.
    pub fn payload_ids(&self, eos: u32) -> Vec<u32> {
        self.tokens.iter().copied().filter(|&t| t != eos).collect()
    }

    pub fn score(&self, alpha: f64) -> f64 {
        if alpha > 0.0 {
            let len = self.tokens.len().max(1) as f64;
            self.log_prob / len.powf(alpha)
        } else {
            self.log_prob
        }
    }
}

struct Beam<S> {
    state: S,
    logp: Vec<f64>,
    tokens: Vec<u32>,
    log_prob: f64,
    utf8: Utf8State,
}

/// Greedy decoding: the argmax admissible token at every step.
/// Exactly equivalent to beam search with beam size 1.
pub fn greedy_decode<D: StepDecoder>(decoder: &D, config: &BeamConfig) -> Hypothesis {
    let mut cfg = config.clone();
    cfg.beam_size = 1;
    beam_search(decoder, &cfg)
        .into_iter()
        .next()
        .expect("beam search returns at least one hypothesis")
}

/// Beam search over admissible tokens. Returns the n-best list sorted by
/// score, finished hypotheses first.
pub fn beam_search<D: StepDecoder>(decoder: &D, config: &BeamConfig) -> Vec<Hypothesis> {
    assert!(config.beam_size >= 1);
    assert!(config.max_len >= 1);
    let vocab = decoder.vocab_size();
    let sos = decoder.sos_id();
    let eos = decoder.eos_id();
    if config.constrain_utf8 {
        assert_eq!(vocab, 256, "the UTF-8 constraint requires byte tokens");
        assert_eq!(eos, EOS_BYTE as u32);
    }

    let (state0, logp0) = decoder.begin();
    let mut live = vec![Beam {
        state: state0,
        logp: logp0,
        tokens: Vec::new(),
        log_prob: 0.0,
        utf8: Utf8State::Boundary,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..config.max_len {
        if live.is_empty() {
            break;
        }
        // (source beam, token, total log prob)
        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        for (b, beam) in live.iter().enumerate() {
            let mask = if config.constrain_utf8 {
                Some(allowed_next(beam.utf8, true).expect("live beams stay valid"))
            } else {
                None
            };
            let mut ranked: Vec<(u32, f64)> = beam
                .logp
                .iter()
                .enumerate()
                .filter_map(|(t, &lp)| {
                    let t = t as u32;
                    if t == sos {
                        return None;
                    }
                    if let Some(m) = &mask {
                        if !m.permits(t) {
                            return None;
                        }
                    }
                    Some((t, lp))
                })
                .collect();
            // Ties break toward the lower token value for determinism.
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for &(t, lp) in ranked.iter().take(config.beam_size) {
                candidates.push((b, t, beam.log_prob + lp));
            }
        }
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.0.cmp(&b.0))
        });
        candidates.truncate(config.beam_size);

        let mut next: Vec<Beam<D::State>> = Vec::with_capacity(config.beam_size);
        for (b, token, log_prob) in candidates {
            let source = &live[b];
            let mut tokens = source.tokens.clone();
            tokens.push(token);
            if token == eos {
                finished.push(Hypothesis {
                    tokens,
                    log_prob,
                    utf8: source.utf8,
                    finished: true,
                });
                continue;
            }
            let utf8 = if config.constrain_utf8 {
                utf8_step(source.utf8, token as u8)
            } else {
                source.utf8
            };
            let (state, logp) = decoder.advance(&source.state, token);
            next.push(Beam {
                state,
                logp,
                tokens,
                log_prob,
                utf8,
            });
        }
        live = next;
    }

    // Length limit reached: surviving beams are reported unfinished.
    for beam in live {
        finished.push(Hypothesis {
            tokens: beam.tokens,
            log_prob: beam.log_prob,
            utf8: beam.utf8,
            finished: false,
        });
    }

    let alpha = config.length_norm_alpha;
    finished.sort_by(|a, b| {
        b.finished
            .cmp(&a.finished)
            .then(b.score(alpha).partial_cmp(&a.score(alpha)).unwrap())
            .then(a.tokens.cmp(&b.tokens))
    });
    finished.truncate(config.beam_size);
    finished
}

/// Writes the n-best file: `utt-id<TAB>rank<TAB>score<TAB>hyp-text`.
pub fn write_nbest(
    path: &Path,
    entries: &[(String, Vec<(f64, String)>)],
) -> Result<(), DecodeError> {
    let mut out = String::new();
    for (utt_id, hyps) in entries {
        for (rank, (score, text)) in hyps.iter().enumerate() {
            writeln!(out, "{utt_id}\t{rank}\t{score:.6}\t{text}").expect("write to string");
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
