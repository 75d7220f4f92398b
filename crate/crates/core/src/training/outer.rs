use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::grpo::{grpo_step, GrpoSettings};
use super::metrics::{IntervalRow, MetricsLog, StepRow};
use super::reward::rule_reward;
use super::sft::sft_step;
use super::{evaluate, Paradigm, TrainConfig, TrainError};
use crate::corpus::{render_prompt, Dataset, Sample};
use crate::curriculum::{
    partition_buckets, per_token_perplexities, select_dynamic_ppl, select_edco, select_random, select_ucb_bucket,
    BanditState, CurriculumBatch, SelectionHistory, StaticOrdering, Strategy, StrategySpec,
};
use crate::entropy::{sweep_entropy, EntropyRecord, SweepConfig};
use crate::lm::{save_checkpoint, ModelParams};
use crate::seed::{derive_seed, mix};

/// Everything a training run produced.
#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub params: ModelParams,
    pub metrics: MetricsLog,
    /// One selection per interval.
    pub batches: Vec<CurriculumBatch>,
    /// Pool entropy sweep at every interval boundary, including the final one.
    pub sweeps: Vec<Vec<EntropyRecord>>,
    pub history: SelectionHistory,
}

enum Selector {
    Edco,
    Random { seed: u64 },
    Static(StaticOrdering),
    DynamicPpl,
    Bandit {
        state: BanditState,
        buckets: Vec<Vec<u64>>,
        seed: u64,
    },
}

impl Selector {
    fn new(
        params: &ModelParams,
        cfg: &TrainConfig,
        strategy: &StrategySpec,
        sweep: &SweepConfig,
        pool: &[Sample],
    ) -> Result<Self, TrainError> {
        Ok(match strategy.name {
            Strategy::Edco => Selector::Edco,
            Strategy::Random => Selector::Random {
                seed: derive_seed(cfg.seed, "select.random"),
            },
            Strategy::Length | Strategy::AnswerComplexity => Selector::Static(StaticOrdering::new(
                strategy.name.heuristic().expect("static heuristic"),
                pool,
                None,
            )?),
            Strategy::PplStatic => {
                let scores = per_token_perplexities(params, pool, cfg.with_qap, sweep.parallelism)?;
                Selector::Static(StaticOrdering::new(
                    strategy.name.heuristic().expect("static heuristic"),
                    pool,
                    Some(&scores),
                )?)
            }
            Strategy::DynamicPpl => Selector::DynamicPpl,
            Strategy::SecLite => {
                let scores = per_token_perplexities(params, pool, cfg.with_qap, sweep.parallelism)?;
                Selector::Bandit {
                    state: BanditState::new(strategy.buckets, strategy.exploration)?,
                    buckets: partition_buckets(&scores, strategy.buckets)?,
                    seed: derive_seed(cfg.seed, "select.bandit"),
                }
            }
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn select(
        &mut self,
        params: &ModelParams,
        records: &[EntropyRecord],
        pool: &[Sample],
        ids: &[u64],
        cfg: &TrainConfig,
        strategy: &StrategySpec,
        sweep: &SweepConfig,
        k: usize,
        last_gain: Option<f64>,
    ) -> Result<CurriculumBatch, TrainError> {
        match self {
            Selector::Edco => Ok(select_edco(records, cfg.n_select, strategy.window()?, k)?),
            Selector::Random { seed } => Ok(select_random(ids, cfg.n_select, mix(*seed, k as u64), k)),
            Selector::Static(order) => Ok(order.next_batch(cfg.n_select, k)),
            Selector::DynamicPpl => {
                let scores = per_token_perplexities(params, pool, cfg.with_qap, sweep.parallelism)?;
                Ok(select_dynamic_ppl(&scores, cfg.n_select, k))
            }
            Selector::Bandit { state, buckets, seed } => Ok(select_ucb_bucket(
                state,
                buckets,
                cfg.n_select,
                last_gain,
                mix(*seed, k as u64),
                k,
            )?),
        }
    }
}

fn in_interval<T>(interval: usize, r: Result<T, TrainError>) -> Result<T, TrainError> {
    r.map_err(|e| TrainError::Interval {
        interval,
        source: Box::new(e),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Learning progress within an interval: how much the objective improved
/// from the first half of its steps to the second.
fn progress(paradigm: Paradigm, objectives: &[f64]) -> f64 {
    if objectives.len() < 2 {
        return 0.0;
    }
    let half = objectives.len() / 2;
    let early = mean(objectives[..half].iter().copied());
    let late = mean(objectives[half..].iter().copied());
    match paradigm {
        Paradigm::Sft => early - late,
        Paradigm::Rlft => late - early,
    }
}

/// The batch `strategy` selects at interval 0 from `params`.
pub fn initial_batch(
    params: &ModelParams,
    cfg: &TrainConfig,
    strategy: &StrategySpec,
    sweep: &SweepConfig,
    train: &Dataset,
) -> Result<CurriculumBatch, TrainError> {
    strategy.validate()?;
    sweep.validate()?;
    let pool = train.samples();
    let mut selector = Selector::new(params, cfg, strategy, sweep, pool)?;
    let records = sweep_entropy(params, pool, sweep, 0)?;
    selector.select(params, &records, pool, &train.ids(), cfg, strategy, sweep, 0, None)
}

/// The curriculum loop: at each interval boundary, score the pool with a
/// frozen snapshot, select a subset with `strategy`, then train on
/// minibatches drawn from that subset for `steps_per_interval` steps. A
/// final sweep and evaluation close the run.
pub fn run_training(
    initial: ModelParams,
    cfg: &TrainConfig,
    strategy: &StrategySpec,
    sweep: &SweepConfig,
    train: &Dataset,
    test: &Dataset,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainingRun, TrainError> {
    cfg.validate()?;
    strategy.validate()?;
    sweep.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if test.is_empty() {
        return Err(TrainError::EmptyEvalSet);
    }
    let pool = train.samples();
    let by_id: HashMap<u64, &Sample> = pool.iter().map(|s| (s.id, s)).collect();
    let ids = train.ids();
    let total_steps = cfg.total_steps(pool.len());
    let intervals = total_steps.div_ceil(cfg.steps_per_interval);
    let mut params = initial;
    let mut opt = cfg.optimizer(total_steps);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "minibatch"));
    let rollout_seed = derive_seed(cfg.seed, "rollout");
    let label = strategy.name.as_str();

    let mut selector = Selector::new(&params, cfg, strategy, sweep, pool)?;

    let wall = |t: Instant| if cfg.record_wall_time { t.elapsed().as_secs_f64() } else { 0.0 };
    let scored_sweep = |params: &ModelParams, k: usize| -> Result<Vec<EntropyRecord>, TrainError> {
        let mut recs = sweep_entropy(params, pool, sweep, k)?;
        if !cfg.record_wall_time {
            recs.iter_mut().for_each(|r| r.wall_time = 0.0);
        }
        Ok(recs)
    };

    let mut metrics = MetricsLog::new(cfg.paradigm);
    let mut history = SelectionHistory::new();
    let mut batches = Vec::with_capacity(intervals);
    let mut sweeps = Vec::with_capacity(intervals + 1);
    let mut step = 0usize;
    let mut last_gain = None;

    for k in 0..=intervals {
        if let Some(dir) = checkpoint_dir {
            in_interval(k, save_checkpoint(&params, &dir.join(format!("checkpoint_{k:03}.bin"))).map_err(Into::into))?;
        }
        let records = in_interval(k, scored_sweep(&params, k))?;
        let mean_pool_h = mean(records.iter().map(|r| r.value));
        let final_interval = k == intervals;
        let eval_now = final_interval || (cfg.eval_every > 0 && k % cfg.eval_every == 0);
        let eval_accuracy = if eval_now {
            Some(in_interval(k, evaluate(&params, test.samples(), cfg.with_qap, cfg.max_gen_len))?)
        } else {
            None
        };
        if final_interval {
            metrics.push_interval(IntervalRow {
                interval: k,
                first_time_count: 0,
                eval_accuracy,
                mean_pool_h,
            });
            sweeps.push(records);
            break;
        }

        let mut batch = in_interval(
            k,
            selector.select(&params, &records, pool, &ids, cfg, strategy, sweep, k, last_gain),
        )?;
        let first_time_count = history.update(&mut batch);
        metrics.push_interval(IntervalRow {
            interval: k,
            first_time_count,
            eval_accuracy,
            mean_pool_h,
        });

        let h_by_id: HashMap<u64, f64> = records.iter().map(|r| (r.sample_id, r.value)).collect();
        let mean_batch_h = mean(batch.selected_ids.iter().filter_map(|id| h_by_id.get(id).copied()));
        let subset: Vec<&Sample> = batch.selected_ids.iter().map(|id| by_id[id]).collect();
        let steps_here = cfg.steps_per_interval.min(total_steps - step);
        let mut objectives = Vec::with_capacity(steps_here);
        for _ in 0..steps_here {
            let started = Instant::now();
            let take = cfg.batch_size.min(subset.len());
            let mini: Vec<&Sample> = sample_indices(&mut batch_rng, subset.len(), take)
                .into_iter()
                .map(|i| subset[i])
                .collect();
            let lr = opt.current_lr();
            let objective = in_interval(
                k,
                match cfg.paradigm {
                    Paradigm::Sft => sft_step(&mut params, &mut opt, &mini, cfg.with_qap),
                    Paradigm::Rlft => {
                        let prompts: Vec<Vec<u32>> = mini.iter().map(|s| render_prompt(s, cfg.with_qap)).collect();
                        let settings = GrpoSettings {
                            group_size: cfg.group_size,
                            clip_ratio: cfg.clip_ratio,
                            max_gen_len: cfg.max_gen_len,
                            temperature: 1.0,
                            seed: mix(rollout_seed, step as u64),
                        };
                        grpo_step(&mut params, &mut opt, &prompts, &settings, |i, g| rule_reward(mini[i], g).reward)
                            .map(|o| o.mean_reward)
                    }
                },
            )?;
            step += 1;
            objectives.push(objective);
            metrics.push_step(StepRow {
                step,
                interval: k,
                strategy: label.to_string(),
                objective,
                mean_batch_h,
                lr,
                wall_time: wall(started),
            })?;
        }
        last_gain = Some(progress(cfg.paradigm, &objectives));
        batches.push(batch);
        sweeps.push(records);
    }

    Ok(TrainingRun {
        params,
        metrics,
        batches,
        sweeps,
        history,
    })
}
