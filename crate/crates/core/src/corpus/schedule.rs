//! Curriculum schedules: ordered training stages with per-language mixing
//! ratios and warm-start initialization.

use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

/// How a stage's model parameters start out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageInit {
    Random,
    FromCheckpoint(PathBuf),
}

/// One curriculum stage.
#[derive(Debug, Clone)]
pub struct Stage {
    /// Per-language mixing ratios; normalized before sampling.
    pub ratios: BTreeMap<String, f64>,
    pub steps: usize,
    pub init: StageInit,
}

impl Stage {
    pub fn validate(&self) -> Result<(), String> {
        if !self.ratios.values().any(|&r| r > 0.0) {
            return Err("at least one ratio must be > 0".into());
        }
        if self.ratios.values().any(|&r| r < 0.0 || !r.is_finite()) {
            return Err("ratios must be finite and nonnegative".into());
        }
        Ok(())
    }
}

/// An ordered curriculum.
#[derive(Debug, Clone, Default)]
pub struct MixSchedule {
    pub stages: Vec<Stage>,
}

/// Metrics reported after each stage.
#[derive(Debug, Clone)]
pub struct StageMetrics {
    pub stage_index: usize,
    pub steps_run: usize,
    pub final_loss: f64,
    /// Per-language evaluation error rate after the stage.
    pub per_language: BTreeMap<String, f64>,
}

/// Trains one stage; implementations own the model and checkpointing.
pub trait StageTrainer {
    type Error: std::error::Error;
    fn run_stage(&mut self, index: usize, stage: &Stage) -> Result<StageMetrics, Self::Error>;
}

#[derive(Debug, Error)]
pub enum ScheduleError<E: std::error::Error> {
    #[error("stage {index}: checkpoint {path} does not exist")]
    CheckpointMissing { index: usize, path: PathBuf },
    #[error("stage {index}: invalid stage: {reason}")]
    InvalidStage { index: usize, reason: String },
    #[error("stage {index}: {source}")]
    Stage { index: usize, source: E },
}

/// Runs the stages in order. From-checkpoint stages are validated for
/// checkpoint existence just before they start, so a stage may reference a
/// file produced by the stage before it.
pub fn run_schedule<T: StageTrainer>(
    schedule: &MixSchedule,
    trainer: &mut T,
) -> Result<Vec<StageMetrics>, ScheduleError<T::Error>> {
    let mut metrics = Vec::with_capacity(schedule.stages.len());
    for (index, stage) in schedule.stages.iter().enumerate() {
        stage
            .validate()
            .map_err(|reason| ScheduleError::InvalidStage { index, reason })?;
        if let StageInit::FromCheckpoint(path) = &stage.init {
            if !path.exists() {
                return Err(ScheduleError::CheckpointMissing {
                    index,
                    path: path.clone(),
                });
            }
        }
        let m = trainer
            .run_stage(index, stage)
            .map_err(|source| ScheduleError::Stage { index, source })?;
        metrics.push(m);
    }
    Ok(metrics)
}
