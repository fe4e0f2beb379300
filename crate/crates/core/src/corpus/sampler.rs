//! Multilingual mixing sampler.

use super::{CorpusError, Utterance};
use crate::rng::{mix, Rng};
use std::collections::BTreeMap;

/// Draws an infinite utterance stream: a language with probability
/// proportional to its ratio, then an utterance uniformly with replacement.
///
/// Each draw is a pure function of (corpora, ratios, seed, position), so
/// the stream can be resumed from any step without replaying.
#[derive(Debug, Clone)]
pub struct MixSampler {
    languages: Vec<String>,
    sizes: Vec<usize>,
    cumulative: Vec<f64>,
    seed: u64,
}

impl MixSampler {
    pub fn new(
        corpora: &BTreeMap<String, Vec<Utterance>>,
        ratios: &BTreeMap<String, f64>,
        seed: u64,
    ) -> Result<Self, CorpusError> {
        let mut languages = Vec::new();
        let mut sizes = Vec::new();
        let mut weights = Vec::new();
        for (lang, &ratio) in ratios {
            assert!(ratio >= 0.0, "ratios must be nonnegative");
            if ratio == 0.0 {
                continue;
            }
            let size = corpora.get(lang).map(|c| c.len()).unwrap_or(0);
            if size == 0 {
                return Err(CorpusError::EmptyLanguageCorpus(lang.clone()));
            }
            languages.push(lang.clone());
            sizes.push(size);
            weights.push(ratio);
        }
        assert!(!languages.is_empty(), "at least one ratio must be positive");
        let total: f64 = weights.iter().sum();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            cumulative.push(acc);
        }
        // Guard against rounding: the last bucket always catches u < 1.
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(MixSampler {
            languages,
            sizes,
            cumulative,
            seed,
        })
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    /// The (language index, utterance index) drawn at stream position `pos`.
    pub fn draw(&self, pos: u64) -> (usize, usize) {
        let u = Rng::from_seed(mix(&[self.seed, 2 * pos])).next_f64();
        let lang = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1);
        let idx = Rng::from_seed(mix(&[self.seed, 2 * pos + 1])).next_below(self.sizes[lang] as u64);
        (lang, idx as usize)
    }

    /// Resolves a draw against the corpora it was built for.
    pub fn draw_utterance<'a>(
        &self,
        corpora: &'a BTreeMap<String, Vec<Utterance>>,
        pos: u64,
    ) -> &'a Utterance {
        let (lang, idx) = self.draw(pos);
        &corpora[&self.languages[lang]][idx]
    }

    /// Iterator over the stream from position 0.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0u64..).map(move |pos| self.draw(pos))
    }
}
