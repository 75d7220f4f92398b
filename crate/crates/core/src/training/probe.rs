use serde::Serialize;

use super::outer::initial_batch;
use super::{evaluate_outcomes, TrainConfig, TrainError};
use crate::corpus::Dataset;
use crate::curriculum::{CurriculumBatch, StrategySpec};
use crate::entropy::SweepConfig;
use crate::lm::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub strategy: String,
    pub batch_size: usize,
    pub accuracy: f64,
    pub mean_difficulty: f64,
}

/// Greedy accuracy of `params` on the samples of `batch`.
pub fn batch_accuracy(
    params: &ModelParams,
    batch: &CurriculumBatch,
    pool: &Dataset,
    with_qap: bool,
    max_gen_len: usize,
) -> Result<ProbeRow, TrainError> {
    let samples: Vec<_> = pool.subset(&batch.selected_ids).into_iter().cloned().collect();
    let outcomes = evaluate_outcomes(params, &samples, with_qap, max_gen_len)?;
    let n = samples.len().max(1) as f64;
    Ok(ProbeRow {
        strategy: batch.strategy.clone(),
        batch_size: samples.len(),
        accuracy: outcomes.iter().map(|o| o.reward).sum::<f64>() / n,
        mean_difficulty: samples.iter().map(|s| s.difficulty_tag as f64).sum::<f64>() / n,
    })
}

/// How hard each strategy's first batch is for the starting model: forms
/// the interval-0 batch, greedy-decodes it with `params` and scores it.
pub fn initial_batch_difficulty_probe(
    params: &ModelParams,
    cfg: &TrainConfig,
    strategies: &[StrategySpec],
    sweep: &SweepConfig,
    train: &Dataset,
) -> Result<Vec<ProbeRow>, TrainError> {
    strategies
        .iter()
        .map(|spec| {
            let batch = initial_batch(params, cfg, spec, sweep, train)?;
            batch_accuracy(params, &batch, train, cfg.with_qap, cfg.max_gen_len)
        })
        .collect()
}
