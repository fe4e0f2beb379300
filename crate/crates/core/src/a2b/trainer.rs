//! Curriculum training: drives an [`A2bModel`] through a mixing schedule,
//! with warm starts from checkpoints and per-stage evaluation.

use super::{
    build_a2b, evaluate, load_checkpoint, load_checkpoint_with_languages, save_checkpoint,
    A2bError, A2bModel, EvalMetric, ModelConfig, OutputUnit,
};
use crate::corpus::{
    synth_features, utterance_seed, MixSampler, Stage, StageInit, StageMetrics, StageTrainer,
    SynthProfile, Utterance,
};
use crate::rng::mix;
use std::collections::BTreeMap;
use std::path::PathBuf;

/// Noise augmentation: every visit to an utterance regenerates its features
/// with a fresh deterministic noise realization, the desk-scale analog of
/// training on several noisy copies of each recording.
#[derive(Debug, Clone, Copy)]
pub struct Augment {
    pub profile: SynthProfile,
    /// Number of distinct noise realizations per utterance.
    pub variants: u64,
}

/// Fixed options shared by all stages of one training run.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub batch_size: usize,
    /// Decode length limit during per-stage evaluation.
    pub eval_max_len: usize,
    pub metric: EvalMetric,
    pub threads: usize,
    /// Stage checkpoints land here as `stage{index}.ckpt` when set.
    pub checkpoint_dir: Option<PathBuf>,
    /// Evaluate on the held-out sets after each stage.
    pub eval_each_stage: bool,
    /// Multiply the learning rate by `.1` after `.0` of each stage's steps;
    /// None keeps it constant.
    pub lr_decay: Option<(f64, f64)>,
    pub augment: Option<Augment>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 8,
            eval_max_len: 64,
            metric: EvalMetric::Ter,
            threads: 1,
            checkpoint_dir: None,
            eval_each_stage: true,
            lr_decay: Some((0.6, 0.25)),
            augment: None,
        }
    }
}

/// Runs schedule stages against shared train/test corpora.
///
/// The model's language list grows in first-appearance order across
/// stages, so a warm start from an earlier stage always extends a prefix.
pub struct A2bStageTrainer<'a> {
    template: ModelConfig,
    use_language_vector: bool,
    corpora: &'a BTreeMap<String, Vec<Utterance>>,
    test: &'a BTreeMap<String, Vec<Utterance>>,
    options: TrainOptions,
    languages: Vec<String>,
    seed: u64,
    pub model: Option<A2bModel>,
    /// Step losses of the most recent stage.
    pub last_stage_losses: Vec<f64>,
}

impl<'a> A2bStageTrainer<'a> {
    /// `template.languages` is ignored; the list is derived from stage
    /// ratios when `use_language_vector` is set, and empty otherwise.
    pub fn new(
        template: ModelConfig,
        use_language_vector: bool,
        corpora: &'a BTreeMap<String, Vec<Utterance>>,
        test: &'a BTreeMap<String, Vec<Utterance>>,
        options: TrainOptions,
        seed: u64,
    ) -> Self {
        A2bStageTrainer {
            template,
            use_language_vector,
            corpora,
            test,
            options,
            languages: Vec::new(),
            seed,
            model: None,
            last_stage_losses: Vec::new(),
        }
    }

    fn stage_languages(&mut self, stage: &Stage) {
        for (lang, &ratio) in &stage.ratios {
            if ratio > 0.0 && !self.languages.contains(lang) {
                self.languages.push(lang.clone());
            }
        }
    }

    /// A grapheme checkpoint cannot absorb symbols outside its vocabulary
    /// without changing the output layer; byte models have no such limit.
    fn check_vocab_covers_stage(&self, model: &A2bModel, stage: &Stage) -> Result<(), A2bError> {
        let OutputUnit::Graphemes(vocab) = &model.config.output_unit else {
            return Ok(());
        };
        for (lang, &ratio) in &stage.ratios {
            if ratio <= 0.0 {
                continue;
            }
            if let Some(utts) = self.corpora.get(lang) {
                for utt in utts {
                    if let Some(c) = utt.text.chars().find(|&c| !vocab.contains(c)) {
                        return Err(A2bError::ShapeMismatch(format!(
                            "language {lang} introduces grapheme {c:?} outside the \
                             checkpoint vocabulary; the output layer would have to change"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn init_model(&mut self, index: usize, stage: &Stage) -> Result<A2bModel, A2bError> {
        let languages = if self.use_language_vector {
            self.languages.clone()
        } else {
            Vec::new()
        };
        match &stage.init {
            StageInit::Random => {
                let mut config = self.template.clone();
                config.languages = languages;
                config.seed = mix(&[self.template.seed, index as u64]);
                build_a2b(config)
            }
            StageInit::FromCheckpoint(path) => {
                let model = if self.use_language_vector {
                    load_checkpoint_with_languages(path, &languages)?
                } else {
                    load_checkpoint(path)?
                };
                self.check_vocab_covers_stage(&model, stage)?;
                Ok(model)
            }
        }
    }

    pub fn into_model(self) -> Option<A2bModel> {
        self.model
    }
}

impl StageTrainer for A2bStageTrainer<'_> {
    type Error = A2bError;

    fn run_stage(&mut self, index: usize, stage: &Stage) -> Result<StageMetrics, A2bError> {
        self.stage_languages(stage);
        let mut model = self.init_model(index, stage)?;
        let sampler = MixSampler::new(self.corpora, &stage.ratios, mix(&[self.seed, index as u64]))
            .map_err(|e| A2bError::InvalidConfig(e.to_string()))?;

        self.last_stage_losses.clear();
        let batch = self.options.batch_size.max(1);
        let base_lr = model.learning_rate();
        let decay_step = self
            .options
            .lr_decay
            .map(|(frac, _)| ((stage.steps as f64) * frac) as usize);
        let mut final_loss = f64::NAN;
        for step in 0..stage.steps {
            if let (Some(at), Some((_, factor))) = (decay_step, self.options.lr_decay) {
                if step == at {
                    model.set_learning_rate(base_lr * factor);
                }
            }
            let mut examples = Vec::with_capacity(batch);
            for j in 0..batch {
                let pos = (step * batch + j) as u64;
                let (lang_idx, utt_idx) = sampler.draw(pos);
                let language = &sampler.languages()[lang_idx];
                let utt = &self.corpora[language][utt_idx];
                let example = match &self.options.augment {
                    Some(aug) => {
                        let variant = mix(&[self.seed, index as u64, pos]) % aug.variants.max(1);
                        let seed = mix(&[
                            utterance_seed(aug.profile.seed, language, utt_idx),
                            variant,
                        ]);
                        let mut fresh = utt.clone();
                        fresh.features = Some(
                            synth_features(&utt.text, &aug.profile, seed)
                                .map_err(|e| A2bError::InvalidConfig(e.to_string()))?,
                        );
                        model.make_example(&fresh, pos as usize)?
                    }
                    None => model.make_example(utt, pos as usize)?,
                };
                examples.push(example);
            }
            final_loss = model.train_step(&examples)?;
            self.last_stage_losses.push(final_loss);
        }
        model.set_learning_rate(base_lr);

        let mut per_language = BTreeMap::new();
        if self.options.eval_each_stage {
            let mut stage_test = BTreeMap::new();
            for lang in stage.ratios.keys() {
                if let Some(utts) = self.test.get(lang) {
                    stage_test.insert(lang.clone(), utts.clone());
                }
            }
            if !stage_test.is_empty() {
                let beam = model.default_beam(self.options.eval_max_len);
                let outcome = evaluate(
                    &model,
                    &stage_test,
                    &beam,
                    self.options.metric,
                    self.options.threads,
                );
                for (lang, eval) in outcome {
                    per_language.insert(lang, eval.rate());
                }
            }
        }

        if let Some(dir) = &self.options.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            save_checkpoint(&model, &dir.join(format!("stage{index}.ckpt")))?;
        }

        let metrics = StageMetrics {
            stage_index: index,
            steps_run: stage.steps,
            final_loss,
            per_language,
        };
        self.model = Some(model);
        Ok(metrics)
    }
}
