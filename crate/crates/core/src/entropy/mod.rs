//! Per-sample entropy estimators, the parallel dataset sweep and
//! correlation analysis.

mod records;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::tensor::entropy_of_logits;
use crate::corpus::{render_prompt, Sample};
use crate::lm::{forward_logits, sample, token_log_probs, CausalLm, LmError};
use crate::seed::mix;

pub use records::{read_records_csv, write_records_csv};

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("sample {sample_id}: {source}")]
    Sample { sample_id: u64, source: LmError },
    #[error("invalid sweep config: {0}")]
    InvalidConfig(String),
    #[error("pearson: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    PrefixNll,
    FullNll,
    McInference,
    PredictiveProfile,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::PrefixNll => "prefix_nll",
            Estimator::FullNll => "full_nll",
            Estimator::McInference => "mc_inference",
            Estimator::PredictiveProfile => "predictive_profile",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub sample_id: u64,
    pub interval: usize,
    pub estimator: Estimator,
    /// Prefix length; 0 means the whole answer.
    pub prefix_length: usize,
    pub with_qap: bool,
    pub value: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub estimator: Estimator,
    pub prefix_length: usize,
    pub with_qap: bool,
    pub num_mc_samples: usize,
    pub mc_max_len: usize,
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "crate::seed::is_zero")]
    pub seed: u64,
    /// Divide each value by the number of tokens it sums over.
    pub length_normalized: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::PrefixNll,
            prefix_length: 32,
            with_qap: true,
            num_mc_samples: 16,
            mc_max_len: 160,
            parallelism: 1,
            seed: 0,
            length_normalized: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), EntropyError> {
        let bad = |m: &str| Err(EntropyError::InvalidConfig(m.to_string()));
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        match self.estimator {
            Estimator::PrefixNll | Estimator::PredictiveProfile if self.prefix_length == 0 => {
                bad("prefix_length must be at least 1")
            }
            Estimator::McInference if self.num_mc_samples == 0 || self.mc_max_len == 0 => {
                bad("num_mc_samples and mc_max_len must be at least 1")
            }
            _ => Ok(()),
        }
    }
}

/// `−Σ_{t ≤ min(L,|y|)} log M(y_t | y_<t, prompt)` over the gold answer.
pub fn prefix_nll_entropy<M: CausalLm>(
    model: &M,
    sample: &Sample,
    prefix_length: usize,
    with_qap: bool,
) -> Result<f64, LmError> {
    let prompt = render_prompt(sample, with_qap);
    let n = prefix_length.min(sample.answer_tokens.len());
    let lp = token_log_probs(model, &prompt, &sample.answer_tokens[..n])?;
    Ok(-lp.iter().sum::<f64>())
}

/// Negative log-likelihood of the whole gold answer.
pub fn full_sequence_nll<M: CausalLm>(model: &M, sample: &Sample, with_qap: bool) -> Result<f64, LmError> {
    prefix_nll_entropy(model, sample, sample.answer_tokens.len(), with_qap)
}

/// Mean of `−log M(y|x)` over `n` continuations sampled from the model itself.
pub fn mc_inference_entropy<M: CausalLm>(
    model: &M,
    sample: &Sample,
    n: usize,
    max_len: usize,
    with_qap: bool,
    seed: u64,
) -> Result<f64, LmError> {
    Ok(mc_draws(model, sample, n, max_len, with_qap, seed)?
        .iter()
        .map(|(nll, _)| nll)
        .sum::<f64>()
        / n as f64)
}

/// `(−log M(y_i|x), |y_i|)` per draw.
fn mc_draws<M: CausalLm>(
    model: &M,
    sample_: &Sample,
    n: usize,
    max_len: usize,
    with_qap: bool,
    seed: u64,
) -> Result<Vec<(f64, usize)>, LmError> {
    let prompt = render_prompt(sample_, with_qap);
    (0..n)
        .map(|i| {
            let g = sample(model, &prompt, max_len, 1.0, mix(seed, i as u64))?;
            Ok((-g.log_probs.iter().sum::<f64>(), g.output_tokens.len()))
        })
        .collect()
}

/// Entropy of the next-token distribution after each gold prefix position
/// `1..=min(L,|y|)`, plus their mean.
pub fn predictive_entropy_profile<M: CausalLm>(
    model: &M,
    sample: &Sample,
    prefix_length: usize,
    with_qap: bool,
) -> Result<(Vec<f64>, f64), LmError> {
    let prompt = render_prompt(sample, with_qap);
    let n = prefix_length.min(sample.answer_tokens.len());
    let mut seq = prompt.clone();
    seq.extend_from_slice(&sample.answer_tokens[..n - 1]);
    let logits = forward_logits(model, &seq)?;
    let profile: Vec<f64> = (0..n)
        .map(|t| entropy_of_logits(logits.row(prompt.len() - 1 + t)))
        .collect();
    let mean = profile.iter().sum::<f64>() / n as f64;
    Ok((profile, mean))
}

fn estimate<M: CausalLm>(model: &M, s: &Sample, cfg: &SweepConfig) -> Result<f64, LmError> {
    let len = s.answer_tokens.len();
    let prefix = cfg.prefix_length.min(len);
    let norm = |v: f64, n: usize| if cfg.length_normalized { v / n as f64 } else { v };
    match cfg.estimator {
        Estimator::PrefixNll => Ok(norm(prefix_nll_entropy(model, s, cfg.prefix_length, cfg.with_qap)?, prefix)),
        Estimator::FullNll => Ok(norm(full_sequence_nll(model, s, cfg.with_qap)?, len)),
        Estimator::McInference => {
            let draws = mc_draws(model, s, cfg.num_mc_samples, cfg.mc_max_len, cfg.with_qap, mix(cfg.seed, s.id))?;
            let total: f64 = draws.iter().map(|&(nll, n)| norm(nll, n.max(1))).sum();
            Ok(total / draws.len() as f64)
        }
        Estimator::PredictiveProfile => Ok(predictive_entropy_profile(model, s, cfg.prefix_length, cfg.with_qap)?.1),
    }
}

/// Scores every sample against a frozen model on `cfg.parallelism` worker
/// threads. Values do not depend on the thread count; records come back
/// ordered by sample id.
pub fn sweep_entropy<M: CausalLm>(
    model: &M,
    samples: &[Sample],
    cfg: &SweepConfig,
    interval: usize,
) -> Result<Vec<EntropyRecord>, EntropyError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| EntropyError::InvalidConfig(e.to_string()))?;
    let prefix_length = match cfg.estimator {
        Estimator::PrefixNll | Estimator::PredictiveProfile => cfg.prefix_length,
        Estimator::FullNll | Estimator::McInference => 0,
    };
    let mut records = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let start = Instant::now();
                let value = estimate(model, s, cfg).map_err(|source| EntropyError::Sample {
                    sample_id: s.id,
                    source,
                })?;
                Ok(EntropyRecord {
                    sample_id: s.id,
                    interval,
                    estimator: cfg.estimator,
                    prefix_length,
                    with_qap: cfg.with_qap,
                    value,
                    wall_time: start.elapsed().as_secs_f64(),
                })
            })
            .collect::<Result<Vec<_>, EntropyError>>()
    })?;
    records.sort_by_key(|r| r.sample_id);
    Ok(records)
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, EntropyError> {
    if xs.len() != ys.len() {
        return Err(EntropyError::Degenerate(format!("length mismatch {} vs {}", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(EntropyError::Degenerate("need at least 3 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EntropyError::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
