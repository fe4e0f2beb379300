//! Byte-level multilingual speech recognition and synthesis toolkit.
//!
//! Models text as UTF-8 byte sequences so that one fixed 256-way output (or
//! input) layer covers any language, and verifies the approach end to end on
//! deterministic synthetic audio features:
//!
//! - [`bytetext`]: UTF-8 byte codec, incremental well-formedness automaton,
//!   repair, and grapheme vocabularies.
//! - [`corpus`]: synthetic feature generation, multilingual mixing sampler,
//!   curriculum schedules, and the code-switch subset filter.
//! - [`tensor`]: dense f64 tensors with reverse-mode differentiation, Adam,
//!   and gradient checking.
//! - [`layers`]: frame stacking, LSTM cells, additive multi-head attention,
//!   location-sensitive attention, and language-vector conditioning.
//! - [`a2b`]: the audio-to-byte recognizer (with a grapheme-output baseline
//!   behind the same interface), training, checkpoints, and evaluation.
//! - [`decode`]: greedy and beam search with an optional UTF-8
//!   well-formedness constraint on byte outputs.
//! - [`b2a`]: the byte-to-audio synthesizer producing feature frames with a
//!   stop token.
//! - [`score`]: edit-distance alignment, WER/TER, and report tables.

pub mod a2b;
pub mod b2a;
pub mod bytetext;
pub mod corpus;
pub mod decode;
pub mod diagnostics;
pub mod io;
pub mod layers;
pub mod rng;
pub mod score;
pub mod tensor;

pub use corpus::{FeatureMatrix, SynthProfile, Utterance};
pub use tensor::Tensor;
