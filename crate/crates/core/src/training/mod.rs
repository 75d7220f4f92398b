//! Supervised and group-relative RL fine-tuning, rule rewards, evaluation
//! the curriculum-driven outer training loop and the initial-batch probe.

mod grpo;
mod metrics;
mod outer;
mod probe;
mod reward;
mod sft;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Adam, LrSchedule, ScheduleKind};
use crate::corpus::{render_prompt, Sample};
use crate::curriculum::CurriculumError;
use crate::entropy::EntropyError;
use crate::lm::{sample, CausalLm, LmError};

pub use grpo::{clipped_surrogate, group_advantages, grpo_step, GrpoOutcome, GrpoSettings, ADVANTAGE_STD_FLOOR};
pub use metrics::{IntervalRow, MetricsLog, StepRow};
pub use outer::{initial_batch, run_training, TrainingRun};
pub use probe::{batch_accuracy, initial_batch_difficulty_probe, ProbeRow};
pub use reward::{gold_answer, parse_boxed_answer, rule_reward, RewardOutcome};
pub use sft::{example_loss_and_grads, sft_loss_and_grads, sft_step, SftExample};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("sample {sample_id}: {source}")]
    Sample { sample_id: u64, source: LmError },
    #[error("interval {interval}: {source}")]
    Interval { interval: usize, source: Box<TrainError> },
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::autodiff::OptimError> for TrainError {
    fn from(e: crate::autodiff::OptimError) -> Self {
        TrainError::Lm(e.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Sft,
    Rlft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Defaults to cosine for SFT and constant for RLFT.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleKind>,
    pub epochs: usize,
    /// Overrides the `epochs · M / batch_size` step budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    pub steps_per_interval: usize,
    pub n_select: usize,
    pub group_size: usize,
    pub clip_ratio: f64,
    /// Stored for completeness; the group-relative estimator does not use it.
    pub gamma: f64,
    /// Stored for completeness; the group-relative estimator does not use it.
    pub gae_lambda: f64,
    pub max_gen_len: usize,
    /// Evaluate every this many intervals; 0 evaluates only at the end.
    pub eval_every: usize,
    pub with_qap: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// When false, every wall-time column is written as 0 so artifacts are
    /// byte-reproducible.
    pub record_wall_time: bool,
    #[serde(default, skip_serializing_if = "crate::seed::is_zero")]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            paradigm: Paradigm::Sft,
            batch_size: 8,
            base_lr: 2e-3,
            schedule: None,
            epochs: 2,
            max_steps: None,
            steps_per_interval: 50,
            n_select: 32,
            group_size: 8,
            clip_ratio: 0.2,
            gamma: 1.0,
            gae_lambda: 0.95,
            max_gen_len: 160,
            eval_every: 1,
            with_qap: true,
            grad_clip: Some(1.0),
            record_wall_time: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio must lie in (0, 1)");
        }
        if self.paradigm == Paradigm::Rlft && self.group_size < 2 {
            return bad("group_size must be at least 2 for rlft");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if self.steps_per_interval == 0 || self.n_select == 0 || self.max_gen_len == 0 {
            return bad("steps_per_interval, n_select and max_gen_len must be at least 1");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be at least 1");
        }
        if matches!(self.grad_clip, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    pub fn schedule_kind(&self) -> ScheduleKind {
        self.schedule.unwrap_or(match self.paradigm {
            Paradigm::Sft => ScheduleKind::Cosine,
            Paradigm::Rlft => ScheduleKind::Constant,
        })
    }

    /// Total optimizer steps for a pool of `pool_size` samples.
    pub fn total_steps(&self, pool_size: usize) -> usize {
        self.max_steps
            .unwrap_or(self.epochs * pool_size / self.batch_size)
            .max(1)
    }

    pub fn optimizer(&self, total_steps: usize) -> Adam {
        let schedule = match self.schedule_kind() {
            ScheduleKind::Cosine => LrSchedule::cosine(self.base_lr, total_steps as u64),
            ScheduleKind::Constant => LrSchedule::constant(self.base_lr),
        };
        let opt = Adam::new(schedule);
        match self.grad_clip {
            Some(c) => opt.with_grad_clip(c),
            None => opt,
        }
    }
}

/// Greedy-decodes every sample and scores it with [`rule_reward`].
pub fn evaluate_outcomes<M: CausalLm>(
    model: &M,
    test: &[Sample],
    with_qap: bool,
    max_gen_len: usize,
) -> Result<Vec<RewardOutcome>, TrainError> {
    test.iter()
        .map(|s| {
            let g = sample(model, &render_prompt(s, with_qap), max_gen_len, 0.0, 0)
                .map_err(|source| TrainError::Sample { sample_id: s.id, source })?;
            Ok(rule_reward(s, &g))
        })
        .collect()
}

/// Fraction of samples answered correctly under greedy decoding.
pub fn evaluate<M: CausalLm>(model: &M, test: &[Sample], with_qap: bool, max_gen_len: usize) -> Result<f64, TrainError> {
    if test.is_empty() {
        return Err(TrainError::EmptyEvalSet);
    }
    let outcomes = evaluate_outcomes(model, test, with_qap, max_gen_len)?;
    Ok(outcomes.iter().map(|o| o.reward).sum::<f64>() / test.len() as f64)
}
