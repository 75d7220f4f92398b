use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{by_value_asc, CurriculumBatch, CurriculumError, Strategy};

/// UCB bookkeeping over difficulty buckets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub num_buckets: usize,
    pub counts: Vec<u64>,
    pub means: Vec<f64>,
    pub exploration: f64,
    pub last_pulled: Option<usize>,
}

impl BanditState {
    pub fn new(num_buckets: usize, exploration: f64) -> Result<Self, CurriculumError> {
        if num_buckets < 2 {
            return Err(CurriculumError::Buckets);
        }
        Ok(Self {
            num_buckets,
            counts: vec![0; num_buckets],
            means: vec![0.0; num_buckets],
            exploration,
            last_pulled: None,
        })
    }

    /// Credits `gain` to the bucket pulled last, as a running mean.
    pub fn record_gain(&mut self, gain: f64) {
        if let Some(b) = self.last_pulled {
            let n = self.counts[b].max(1) as f64;
            self.means[b] += (gain - self.means[b]) / n;
        }
    }

    /// Unpulled buckets first in index order, then the largest
    /// `mean + c·sqrt(ln(total) / count)`; ties go to the lower index.
    pub fn choose(&self) -> usize {
        if let Some(b) = self.counts.iter().position(|&c| c == 0) {
            return b;
        }
        let total: u64 = self.counts.iter().sum();
        let ln_total = (total as f64).ln();
        let score = |b: usize| self.means[b] + self.exploration * (ln_total / self.counts[b] as f64).sqrt();
        (1..self.num_buckets).fold(0, |best, b| if score(b) > score(best) { b } else { best })
    }

    pub fn total_pulls(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Splits samples into `b` quantile buckets of ascending score (near-equal
/// sizes, ties by id).
pub fn partition_buckets(scores: &[(u64, f64)], b: usize) -> Result<Vec<Vec<u64>>, CurriculumError> {
    if b < 2 || scores.len() < b {
        return Err(CurriculumError::Buckets);
    }
    let mut ranked = scores.to_vec();
    ranked.sort_by(by_value_asc);
    let m = ranked.len();
    Ok((0..b)
        .map(|i| ranked[i * m / b..(i + 1) * m / b].iter().map(|&(id, _)| id).collect())
        .collect())
}

/// Credits `last_gain` to the previous pull, picks a bucket by UCB and draws
/// `n` ids uniformly from it. A bucket smaller than `n` is topped up with a
/// uniform draw from the other buckets.
pub fn select_ucb_bucket(
    state: &mut BanditState,
    buckets: &[Vec<u64>],
    n: usize,
    last_gain: Option<f64>,
    seed: u64,
    interval: usize,
) -> Result<CurriculumBatch, CurriculumError> {
    if buckets.len() != state.num_buckets || buckets.iter().any(Vec::is_empty) {
        return Err(CurriculumError::Buckets);
    }
    if let Some(g) = last_gain {
        state.record_gain(g);
    }
    let b = state.choose();
    state.counts[b] += 1;
    state.last_pulled = Some(b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let own = &buckets[b];
    let mut ids: Vec<u64> = if own.len() >= n {
        sample_indices(&mut rng, own.len(), n).into_iter().map(|i| own[i]).collect()
    } else {
        own.clone()
    };
    if ids.len() < n {
        let rest: Vec<u64> = buckets
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != b)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        super::warn_if_short(n, own.len() + rest.len());
        let extra = (n - ids.len()).min(rest.len());
        ids.extend(sample_indices(&mut rng, rest.len(), extra).into_iter().map(|i| rest[i]));
    }
    Ok(CurriculumBatch::new(interval, ids, Strategy::SecLite.as_str()))
}
