//! Sample selection strategies: entropy ranking, random sampling, static
//! and dynamic difficulty orderings and a bucketed UCB bandit.

mod bandit;
mod history;
mod batch_log;

use std::cmp::Ordering;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sentence_count, Sample, Vocab};
use crate::entropy::{sweep_entropy, EntropyError, EntropyRecord, Estimator, SweepConfig};
use crate::lm::CausalLm;

pub use bandit::{partition_buckets, select_ucb_bucket, BanditState};
pub use history::SelectionHistory;
pub use batch_log::{write_batch_log, BatchLogRow};

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("invalid window [{lo}, {hi}): need 0 <= lo < hi <= 1")]
    InvalidWindow { lo: f64, hi: f64 },
    #[error("window holds {capacity:.3} samples but {requested} were requested")]
    WindowTooSmall { capacity: f64, requested: usize },
    #[error("unknown strategy or heuristic {0:?}")]
    UnknownMode(String),
    #[error("perplexity ordering needs reference scores for every sample")]
    MissingScores,
    #[error("bandit needs at least 2 non-empty buckets")]
    Buckets,
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionWindow {
    pub lo_frac: f64,
    pub hi_frac: f64,
}

impl SelectionWindow {
    /// Highest-entropy samples first.
    pub fn top() -> Self {
        Self {
            lo_frac: 0.0,
            hi_frac: 1.0,
        }
    }

    pub fn new(lo_frac: f64, hi_frac: f64) -> Result<Self, CurriculumError> {
        let w = Self { lo_frac, hi_frac };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        let (lo, hi) = (self.lo_frac, self.hi_frac);
        if !(0.0..1.0).contains(&lo) || !(hi > lo && hi <= 1.0) {
            return Err(CurriculumError::InvalidWindow { lo, hi });
        }
        Ok(())
    }

    pub fn is_top(&self) -> bool {
        self.lo_frac == 0.0
    }
}

impl Default for SelectionWindow {
    fn default() -> Self {
        Self::top()
    }
}

/// The samples chosen for one interval, in selection order.
#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumBatch {
    pub interval: usize,
    pub selected_ids: Vec<u64>,
    /// Filled in by [`SelectionHistory::update`].
    pub first_time_flags: Vec<bool>,
    pub strategy: String,
}

impl CurriculumBatch {
    pub fn new(interval: usize, selected_ids: Vec<u64>, strategy: &str) -> Self {
        let n = selected_ids.len();
        Self {
            interval,
            selected_ids,
            first_time_flags: vec![false; n],
            strategy: strategy.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.selected_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected_ids.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Edco,
    Random,
    Length,
    AnswerComplexity,
    PplStatic,
    DynamicPpl,
    SecLite,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Edco,
        Strategy::Random,
        Strategy::Length,
        Strategy::AnswerComplexity,
        Strategy::PplStatic,
        Strategy::DynamicPpl,
        Strategy::SecLite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Edco => "edco",
            Strategy::Random => "random",
            Strategy::Length => "length",
            Strategy::AnswerComplexity => "answer_complexity",
            Strategy::PplStatic => "ppl_static",
            Strategy::DynamicPpl => "dynamic_ppl",
            Strategy::SecLite => "sec_lite",
        }
    }

    pub fn heuristic(self) -> Option<HeuristicMode> {
        match self {
            Strategy::Length => Some(HeuristicMode::Length),
            Strategy::AnswerComplexity => Some(HeuristicMode::AnswerComplexity),
            Strategy::PplStatic => Some(HeuristicMode::PplStatic),
            _ => None,
        }
    }
}

impl FromStr for Strategy {
    type Err = CurriculumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let alias = match s {
            "ac" => "answer_complexity",
            "ppl" => "ppl_static",
            "sec" => "sec_lite",
            other => other,
        };
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == alias)
            .ok_or_else(|| CurriculumError::UnknownMode(s.to_string()))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A strategy plus its parameters, as written in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySpec {
    pub name: Strategy,
    #[serde(default)]
    pub window_lo: f64,
    #[serde(default = "default_window_hi")]
    pub window_hi: f64,
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    #[serde(default = "default_exploration")]
    pub exploration: f64,
}

fn default_window_hi() -> f64 {
    1.0
}

fn default_buckets() -> usize {
    5
}

fn default_exploration() -> f64 {
    2.0
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self::new(Strategy::Edco)
    }
}

impl StrategySpec {
    pub fn new(name: Strategy) -> Self {
        Self {
            name,
            window_lo: 0.0,
            window_hi: default_window_hi(),
            buckets: default_buckets(),
            exploration: default_exploration(),
        }
    }

    pub fn window(&self) -> Result<SelectionWindow, CurriculumError> {
        SelectionWindow::new(self.window_lo, self.window_hi)
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        self.window()?;
        if self.buckets < 2 {
            return Err(CurriculumError::Buckets);
        }
        Ok(())
    }
}

fn warn_if_short(n: usize, pool: usize) {
    if n > pool {
        log::warn!("requested {n} samples from a pool of {pool}; selecting the whole pool");
    }
}

/// Descending by value, ascending id on ties.
fn by_value_desc(a: &(u64, f64), b: &(u64, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Ascending by value, ascending id on ties.
fn by_value_asc(a: &(u64, f64), b: &(u64, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Ranks records by entropy, highest first, and takes `n` consecutive ranks
/// starting at `floor(lo_frac · M)`.
pub fn select_edco(
    records: &[EntropyRecord],
    n: usize,
    window: SelectionWindow,
    interval: usize,
) -> Result<CurriculumBatch, CurriculumError> {
    window.validate()?;
    let m = records.len();
    warn_if_short(n, m);
    let n = n.min(m);
    let capacity = (window.hi_frac - window.lo_frac) * m as f64;
    if !window.is_top() && capacity + 1e-9 < n as f64 {
        return Err(CurriculumError::WindowTooSmall { capacity, requested: n });
    }
    let mut ranked: Vec<(u64, f64)> = records.iter().map(|r| (r.sample_id, r.value)).collect();
    ranked.sort_by(by_value_desc);
    let start = ((window.lo_frac * m as f64).floor() as usize).min(m - n);
    let ids = ranked[start..start + n].iter().map(|&(id, _)| id).collect();
    Ok(CurriculumBatch::new(interval, ids, Strategy::Edco.as_str()))
}

/// Uniform draw of `n` ids without replacement.
pub fn select_random(pool: &[u64], n: usize, seed: u64, interval: usize) -> CurriculumBatch {
    warn_if_short(n, pool.len());
    let n = n.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = sample_indices(&mut rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
    CurriculumBatch::new(interval, ids, Strategy::Random.as_str())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicMode {
    Length,
    AnswerComplexity,
    PplStatic,
}

impl FromStr for HeuristicMode {
    type Err = CurriculumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "length" => Ok(HeuristicMode::Length),
            "answer_complexity" | "ac" => Ok(HeuristicMode::AnswerComplexity),
            "ppl_static" | "ppl" => Ok(HeuristicMode::PplStatic),
            other => Err(CurriculumError::UnknownMode(other.to_string())),
        }
    }
}

/// Fixed easy-to-hard ordering computed once, consumed `n` at a time and
/// wrapping around at the end of each epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticOrdering {
    mode: HeuristicMode,
    order: Vec<u64>,
    cursor: usize,
}

impl StaticOrdering {
    /// `ref_scores` (sample id, per-token perplexity under the reference
    /// model) is required for [`HeuristicMode::PplStatic`].
    pub fn new(mode: HeuristicMode, pool: &[Sample], ref_scores: Option<&[(u64, f64)]>) -> Result<Self, CurriculumError> {
        let mut keyed: Vec<(u64, f64)> = match mode {
            HeuristicMode::Length => pool.iter().map(|s| (s.id, s.prompt_tokens.len() as f64)).collect(),
            HeuristicMode::AnswerComplexity => {
                let vocab = Vocab::new();
                pool.iter()
                    .map(|s| (s.id, sentence_count(&vocab.detokenize(s.answer_body())) as f64))
                    .collect()
            }
            HeuristicMode::PplStatic => {
                let scores = ref_scores.ok_or(CurriculumError::MissingScores)?;
                let lookup: std::collections::HashMap<u64, f64> = scores.iter().copied().collect();
                pool.iter()
                    .map(|s| lookup.get(&s.id).map(|&v| (s.id, v)))
                    .collect::<Option<_>>()
                    .ok_or(CurriculumError::MissingScores)?
            }
        };
        keyed.sort_by(by_value_asc);
        Ok(Self {
            mode,
            order: keyed.into_iter().map(|(id, _)| id).collect(),
            cursor: 0,
        })
    }

    pub fn order(&self) -> &[u64] {
        &self.order
    }

    pub fn mode(&self) -> HeuristicMode {
        self.mode
    }

    pub fn next_batch(&mut self, n: usize, interval: usize) -> CurriculumBatch {
        let m = self.order.len();
        warn_if_short(n, m);
        let n = n.min(m);
        let ids = (0..n).map(|i| self.order[(self.cursor + i) % m]).collect();
        if m > 0 {
            self.cursor = (self.cursor + n) % m;
        }
        let label = match self.mode {
            HeuristicMode::Length => Strategy::Length,
            HeuristicMode::AnswerComplexity => Strategy::AnswerComplexity,
            HeuristicMode::PplStatic => Strategy::PplStatic,
        };
        CurriculumBatch::new(interval, ids, label.as_str())
    }
}

/// Per-token perplexity `exp(full_nll / |y|)` of every sample.
pub fn per_token_perplexities<M: CausalLm>(
    model: &M,
    pool: &[Sample],
    with_qap: bool,
    parallelism: usize,
) -> Result<Vec<(u64, f64)>, CurriculumError> {
    let cfg = SweepConfig {
        estimator: Estimator::FullNll,
        with_qap,
        parallelism,
        length_normalized: true,
        ..SweepConfig::default()
    };
    Ok(sweep_entropy(model, pool, &cfg, 0)?
        .into_iter()
        .map(|r| (r.sample_id, r.value.exp()))
        .collect())
}

/// The `n` lowest-perplexity samples under the current model.
pub fn select_dynamic_ppl(perplexities: &[(u64, f64)], n: usize, interval: usize) -> CurriculumBatch {
    warn_if_short(n, perplexities.len());
    let mut ranked = perplexities.to_vec();
    ranked.sort_by(by_value_asc);
    let ids = ranked.iter().take(n).map(|&(id, _)| id).collect();
    CurriculumBatch::new(interval, ids, Strategy::DynamicPpl.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(values: &[f64]) -> Vec<EntropyRecord> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| EntropyRecord {
                sample_id: i as u64,
                interval: 0,
                estimator: Estimator::PrefixNll,
                prefix_length: 32,
                with_qap: true,
                value: v,
                wall_time: 0.0,
            })
            .collect()
    }

    #[test]
    fn top_two_by_hand() {
        let b = select_edco(&records(&[5.0, 3.0, 9.0, 1.0]), 2, SelectionWindow::top(), 0).unwrap();
        assert_eq!(b.selected_ids, vec![2, 0]);
    }

    #[test]
    fn ties_break_by_id() {
        let b = select_edco(&records(&[1.0; 5]), 2, SelectionWindow::top(), 0).unwrap();
        assert_eq!(b.selected_ids, vec![0, 1]);
    }

    #[test]
    fn oversized_request_takes_pool() {
        let b = select_edco(&records(&[1.0, 2.0]), 5, SelectionWindow::top(), 0).unwrap();
        assert_eq!(b.selected_ids, vec![1, 0]);
    }

    #[test]
    fn window_validation() {
        assert!(SelectionWindow::new(0.2, 0.1).is_err());
        assert!(SelectionWindow::new(-0.1, 0.5).is_err());
        assert!(SelectionWindow::new(0.0, 1.5).is_err());
        let narrow = SelectionWindow::new(0.5, 0.51).unwrap();
        assert!(matches!(
            select_edco(&records(&[1.0; 100]), 5, narrow, 0),
            Err(CurriculumError::WindowTooSmall { .. })
        ));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("ac".parse::<Strategy>().unwrap(), Strategy::AnswerComplexity);
        assert!("hardest".parse::<Strategy>().is_err());
        assert!("bogus".parse::<HeuristicMode>().is_err());
    }
}
