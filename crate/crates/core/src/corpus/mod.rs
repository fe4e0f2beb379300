//! Corpora: deterministic synthetic audio features, multilingual mixing,
//! curriculum schedules, and the code-switch subset filter.
//!
//! Synthetic "audio" stands in for a real acoustic frontend at desk scale.
//! Each codepoint owns a unit-norm template vector derived from the profile
//! seed alone, every occurrence emits a deterministic number of frames of
//! that template, and per-utterance Gaussian noise is layered on top. The
//! result is separable but non-trivial, and bit-identical across runs.

mod blf;
mod manifest;
mod sampler;
mod schedule;

pub use blf::{read_feature_file, write_feature_file};
pub use manifest::{LanguageEntry, Manifest, StageSpec};
pub use sampler::MixSampler;
pub use schedule::{
    run_schedule, MixSchedule, ScheduleError, Stage, StageInit, StageMetrics, StageTrainer,
};

use crate::rng::{hash_str, mix, Rng};
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("text is empty")]
    EmptyText,
    #[error("language {0} has ratio > 0 but no utterances")]
    EmptyLanguageCorpus(String),
    #[error("invalid synthesis profile: {0}")]
    InvalidProfile(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("feature file error: {0}")]
    FeatureFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// T frames x D dims of real-valued features; the "audio" side of both
/// recognition input and synthesis output.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), frames * dim);
        FeatureMatrix { frames, dim, data }
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        FeatureMatrix::new(frames, dim, vec![0.0; frames * dim])
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.frames, self.dim, self.data.clone())
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        FeatureMatrix::new(t.rows(), t.cols(), t.data().to_vec())
    }
}

/// One transcribed utterance, optionally with its feature frames attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub text: String,
    pub language: String,
    pub features: Option<FeatureMatrix>,
}

impl Utterance {
    pub fn new(text: impl Into<String>, language: impl Into<String>) -> Self {
        Utterance {
            text: text.into(),
            language: language.into(),
            features: None,
        }
    }
}

/// Parameters of the synthetic feature generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthProfile {
    /// Feature dimension D.
    pub dim: usize,
    /// Frames emitted per symbol, drawn in [kmin, kmax].
    pub kmin: usize,
    pub kmax: usize,
    /// Standard deviation of the per-element Gaussian noise.
    pub noise_sigma: f64,
    /// Seed for templates and frame counts (not the per-utterance noise).
    pub seed: u64,
}

impl Default for SynthProfile {
    /// Desk-scale default: trains in minutes while staying non-trivially
    /// noisy.
    fn default() -> Self {
        SynthProfile {
            dim: 8,
            kmin: 2,
            kmax: 4,
            noise_sigma: 0.1,
            seed: 1,
        }
    }
}

impl SynthProfile {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.dim < 1 {
            return Err(CorpusError::InvalidProfile("dim must be >= 1".into()));
        }
        if self.kmin < 1 || self.kmax < self.kmin {
            return Err(CorpusError::InvalidProfile(
                "frame range must satisfy 1 <= kmin <= kmax".into(),
            ));
        }
        if self.noise_sigma < 0.0 {
            return Err(CorpusError::InvalidProfile(
                "noise_sigma must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

const TEMPLATE_SALT: u64 = 0x7E3A_11CE;
const FRAME_COUNT_SALT: u64 = 0x5EED_F00D;

/// Unit-norm template vector for a codepoint, a pure function of
/// (profile.seed, c).
pub fn symbol_template(profile: &SynthProfile, c: char) -> Vec<f64> {
    let mut rng = Rng::derive(profile.seed, &[TEMPLATE_SALT, c as u64]);
    let mut v: Vec<f64> = (0..profile.dim).map(|_| rng.normal()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Frames emitted for the codepoint at position `i`, a pure function of
/// (profile.seed, c, i).
pub fn frames_per_symbol(profile: &SynthProfile, c: char, i: usize) -> usize {
    let span = (profile.kmax - profile.kmin + 1) as u64;
    let h = mix(&[profile.seed, FRAME_COUNT_SALT, c as u64, i as u64]);
    profile.kmin + (h % span) as usize
}

/// Renders `text` to feature frames: per-symbol template repetition plus
/// Gaussian noise from a stream seeded by `utt_seed`. Identical inputs give
/// bit-identical output.
pub fn synth_features(
    text: &str,
    profile: &SynthProfile,
    utt_seed: u64,
) -> Result<FeatureMatrix, CorpusError> {
    if text.is_empty() {
        return Err(CorpusError::EmptyText);
    }
    profile.validate()?;
    let mut noise = Rng::derive(utt_seed, &[]);
    let mut data = Vec::new();
    let mut frames = 0;
    for (i, c) in text.chars().enumerate() {
        let template = symbol_template(profile, c);
        let k = frames_per_symbol(profile, c, i);
        for _ in 0..k {
            frames += 1;
            for &t in &template {
                let eps = if profile.noise_sigma > 0.0 {
                    profile.noise_sigma * noise.normal()
                } else {
                    0.0
                };
                data.push(t + eps);
            }
        }
    }
    Ok(FeatureMatrix::new(frames, profile.dim, data))
}

/// Seed for one utterance's noise stream.
pub fn utterance_seed(profile_seed: u64, language: &str, index: usize) -> u64 {
    mix(&[profile_seed, hash_str(language), index as u64])
}

/// Fills in `features` for every utterance from its text, deterministic in
/// (profile.seed, language, position).
pub fn attach_features(
    utterances: &mut [Utterance],
    profile: &SynthProfile,
) -> Result<(), CorpusError> {
    for (i, utt) in utterances.iter_mut().enumerate() {
        let seed = utterance_seed(profile.seed, &utt.language, i);
        utt.features = Some(synth_features(&utt.text, profile, seed)?);
    }
    Ok(())
}

/// Writing systems available to the corpus generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Script {
    /// a-z: single-byte UTF-8.
    AsciiLower,
    /// Greek lowercase: two-byte UTF-8.
    GreekLower,
    /// Japanese katakana: three-byte UTF-8.
    Katakana,
    /// Japanese hiragana: three-byte UTF-8.
    Hiragana,
}

impl Script {
    pub fn symbols(&self) -> Vec<char> {
        let range = match self {
            Script::AsciiLower => 0x61..=0x7Au32,
            Script::GreekLower => 0x3B1..=0x3C9u32,
            Script::Katakana => 0x30A2..=0x30F3u32,
            Script::Hiragana => 0x3042..=0x3093u32,
        };
        range.map(|cp| char::from_u32(cp).expect("scalar")).collect()
    }

    pub fn parse(name: &str) -> Option<Script> {
        match name {
            "ascii" => Some(Script::AsciiLower),
            "greek" => Some(Script::GreekLower),
            "katakana" => Some(Script::Katakana),
            "hiragana" => Some(Script::Hiragana),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Script::AsciiLower => "ascii",
            Script::GreekLower => "greek",
            Script::Katakana => "katakana",
            Script::Hiragana => "hiragana",
        }
    }
}

/// Shape of generated utterance text.
#[derive(Debug, Clone)]
pub struct TextGenSpec {
    pub symbols: Vec<char>,
    pub words_min: usize,
    pub words_max: usize,
    pub word_len_min: usize,
    pub word_len_max: usize,
}

impl TextGenSpec {
    pub fn single_words(symbols: Vec<char>, len_min: usize, len_max: usize) -> Self {
        TextGenSpec {
            symbols,
            words_min: 1,
            words_max: 1,
            word_len_min: len_min,
            word_len_max: len_max,
        }
    }
}

/// Deterministic random texts; words joined by single spaces.
pub fn generate_texts(spec: &TextGenSpec, n: usize, seed: u64) -> Vec<String> {
    let mut rng = Rng::derive(seed, &[hash_str("textgen")]);
    let mut texts = Vec::with_capacity(n);
    for _ in 0..n {
        let words = spec.words_min
            + rng.next_below((spec.words_max - spec.words_min + 1) as u64) as usize;
        let mut parts = Vec::with_capacity(words);
        for _ in 0..words {
            let len = spec.word_len_min
                + rng.next_below((spec.word_len_max - spec.word_len_min + 1) as u64) as usize;
            let word: String = (0..len)
                .map(|_| spec.symbols[rng.next_below(spec.symbols.len() as u64) as usize])
                .collect();
            parts.push(word);
        }
        texts.push(parts.join(" "));
    }
    texts
}

/// Host-script text with one embedded run of `embedded` symbols, e.g.
/// katakana words around a Latin word.
pub fn generate_code_switch_texts(
    host: &[char],
    embedded: &[char],
    n: usize,
    run_len_min: usize,
    run_len_max: usize,
    seed: u64,
) -> Vec<String> {
    let mut rng = Rng::derive(seed, &[hash_str("codeswitch")]);
    let mut texts = Vec::with_capacity(n);
    for _ in 0..n {
        let host_word = |rng: &mut Rng| -> String {
            let len = 2 + rng.next_below(3) as usize;
            (0..len)
                .map(|_| host[rng.next_below(host.len() as u64) as usize])
                .collect()
        };
        let run = run_len_min + rng.next_below((run_len_max - run_len_min + 1) as u64) as usize;
        let latin: String = (0..run)
            .map(|_| embedded[rng.next_below(embedded.len() as u64) as usize])
            .collect();
        let a = host_word(&mut rng);
        let b = host_word(&mut rng);
        texts.push(format!("{a} {latin} {b}"));
    }
    texts
}

pub const DEFAULT_MIN_RUN: usize = 5;

/// True when `text` contains `min_run` or more consecutive Latin letters
/// (A-Z or a-z); any other character breaks the run.
pub fn has_latin_run(text: &str, min_run: usize) -> bool {
    let mut run = 0usize;
    for c in text.chars() {
        if c.is_ascii_alphabetic() {
            run += 1;
            if run >= min_run {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Keeps utterances whose transcript contains a Latin-letter run of at
/// least `min_run`.
pub fn code_switch_filter(utterances: &[Utterance], min_run: usize) -> Vec<Utterance> {
    assert!(min_run >= 1);
    utterances
        .iter()
        .filter(|u| has_latin_run(&u.text, min_run))
        .cloned()
        .collect()
}

/// Variant that additionally requires at least one non-Latin, non-space
/// character, so purely Latin utterances are excluded. Not the default.
pub fn code_switch_filter_strict_mixed(utterances: &[Utterance], min_run: usize) -> Vec<Utterance> {
    assert!(min_run >= 1);
    utterances
        .iter()
        .filter(|u| {
            has_latin_run(&u.text, min_run)
                && u.text
                    .chars()
                    .any(|c| !c.is_ascii_alphabetic() && !c.is_whitespace())
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_noise_frames_equal_template() {
        let profile = SynthProfile {
            noise_sigma: 0.0,
            ..SynthProfile::default()
        };
        let feats = synth_features("aa", &profile, 99).unwrap();
        let template = symbol_template(&profile, 'a');
        for t in 0..feats.frames() {
            assert_eq!(feats.row(t), &template[..], "frame {t}");
        }
    }

    #[test]
    fn forced_frame_count() {
        let profile = SynthProfile {
            kmin: 3,
            kmax: 3,
            ..SynthProfile::default()
        };
        let feats = synth_features("a", &profile, 0).unwrap();
        assert_eq!(feats.frames(), 3);
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(matches!(
            synth_features("", &SynthProfile::default(), 0),
            Err(CorpusError::EmptyText)
        ));
    }

    #[test]
    fn synthesis_is_bit_identical() {
        let profile = SynthProfile::default();
        let a = synth_features("オン", &profile, 7).unwrap();
        let b = synth_features("オン", &profile, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_features("オン", &profile, 8).unwrap();
        assert_ne!(a, c, "different utterance seeds give different noise");
    }

    #[test]
    fn templates_are_unit_norm_and_seed_stable() {
        let profile = SynthProfile::default();
        let t1 = symbol_template(&profile, 'オ');
        let t2 = symbol_template(&profile, 'オ');
        assert_eq!(t1, t2);
        let norm: f64 = t1.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let other = SynthProfile {
            seed: profile.seed + 1,
            ..profile
        };
        assert_ne!(t1, symbol_template(&other, 'オ'));
    }

    #[test]
    fn nearest_template_recovers_noiseless_text() {
        // Oracle: classify each frame by nearest template.
        let profile = SynthProfile {
            noise_sigma: 0.0,
            ..SynthProfile::default()
        };
        let symbols = Script::Katakana.symbols();
        let mut rng = crate::rng::Rng::from_seed(5);
        for trial in 0..1000 {
            let len = 1 + rng.next_below(8) as usize;
            let text: String = (0..len)
                .map(|_| symbols[rng.next_below(symbols.len() as u64) as usize])
                .collect();
            let feats = synth_features(&text, &profile, trial).unwrap();
            let mut recovered = String::new();
            let mut last: Option<char> = None;
            let mut remaining = 0usize;
            let mut pos = 0usize;
            for t in 0..feats.frames() {
                let frame = feats.row(t);
                let mut best = ('?', f64::INFINITY);
                for &c in &symbols {
                    let tpl = symbol_template(&profile, c);
                    let d: f64 = frame
                        .iter()
                        .zip(&tpl)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                // Segment by the known frame counts.
                if remaining == 0 {
                    recovered.push(best.0);
                    remaining = frames_per_symbol(&profile, best.0, pos);
                    pos += 1;
                    last = Some(best.0);
                } else {
                    assert_eq!(Some(best.0), last);
                }
                remaining -= 1;
            }
            assert_eq!(recovered, text, "trial {trial}");
        }
    }

    #[test]
    fn filter_keeps_paper_style_examples() {
        let utts = vec![
            Utterance::new("google 音声認識", "JA"),
            Utterance::new("wi-fi オン", "JA"),
            Utterance::new("abcd", "JA"),
            Utterance::new("オンオフ", "JA"),
        ];
        let kept = code_switch_filter(&utts, DEFAULT_MIN_RUN);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].text, "google 音声認識");
    }

    #[test]
    fn hyphen_breaks_the_run() {
        assert!(!has_latin_run("wi-fi オン", 5));
        assert!(has_latin_run("wifif オン", 5));
    }

    #[test]
    fn boundary_run_length() {
        assert!(!has_latin_run("abcd", 5));
        assert!(has_latin_run("abcde", 5));
    }

    #[test]
    fn strict_mixed_variant_drops_pure_latin() {
        let utts = vec![
            Utterance::new("google 音声認識", "JA"),
            Utterance::new("google maps", "JA"),
        ];
        assert_eq!(code_switch_filter(&utts, 5).len(), 2);
        let strict = code_switch_filter_strict_mixed(&utts, 5);
        assert_eq!(strict.len(), 1);
        assert_eq!(strict[0].text, "google 音声認識");
    }

    #[test]
    fn generate_texts_is_deterministic() {
        let spec = TextGenSpec::single_words(Script::Katakana.symbols(), 3, 8);
        let a = generate_texts(&spec, 20, 11);
        let b = generate_texts(&spec, 20, 11);
        assert_eq!(a, b);
        for t in &a {
            let n = t.chars().count();
            assert!((3..=8).contains(&n));
        }
    }

    proptest! {
        /// The filter agrees with an independent run-length oracle on
        /// randomized mixed-script text.
        #[test]
        fn filter_matches_bruteforce_oracle(
            text in "[a-zA-Z0-9オンあ・ \\-]{0,30}",
            min_run in 1usize..8,
        ) {
            // Oracle: expand into runs via split on non-Latin.
            let longest = text
                .split(|c: char| !c.is_ascii_alphabetic())
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0);
            prop_assert_eq!(has_latin_run(&text, min_run), longest >= min_run);
        }

        /// Separability: with noise below half the minimum template
        /// distance, nearest-template classification is exact.
        #[test]
        fn noisy_frames_stay_separable(seed in 0u64..30) {
            let profile = SynthProfile { seed, noise_sigma: 0.1, ..SynthProfile::default() };
            let symbols: Vec<char> = Script::AsciiLower.symbols();
            // Minimum pairwise distance between templates.
            let mut min_dist = f64::INFINITY;
            for (i, &a) in symbols.iter().enumerate() {
                for &b in &symbols[i + 1..] {
                    let ta = symbol_template(&profile, a);
                    let tb = symbol_template(&profile, b);
                    let d: f64 = ta.iter().zip(&tb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    min_dist = min_dist.min(d);
                }
            }
            prop_assume!(profile.noise_sigma * (profile.dim as f64).sqrt() < 0.5 * min_dist);
            let text: String = symbols.iter().collect();
            let feats = synth_features(&text, &profile, seed ^ 0xABCD).unwrap();
            let mut frame = 0usize;
            for (i, c) in text.chars().enumerate() {
                for _ in 0..frames_per_symbol(&profile, c, i) {
                    let row = feats.row(frame);
                    frame += 1;
                    let mut best = ('?', f64::INFINITY);
                    for &s in &symbols {
                        let tpl = symbol_template(&profile, s);
                        let d: f64 = row.iter().zip(&tpl).map(|(x, y)| (x - y) * (x - y)).sum();
                        if d < best.1 {
                            best = (s, d);
                        }
                    }
                    prop_assert_eq!(best.0, c);
                }
            }
        }
    }
}
