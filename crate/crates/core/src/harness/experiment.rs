use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::{fit_entropy_performance, EntropyPerformanceFit};
use super::manifest::{emit_manifest, sha256_hex, Artifacts, Manifest};
use super::{ExperimentConfig, HarnessError};
use crate::autodiff::{Adam, LrSchedule};
use crate::corpus::{generate_synthetic_dataset, write_jsonl, Dataset, Sample, Split};
use crate::curriculum::{write_batch_log, BatchLogRow, Strategy, StrategySpec};
use crate::entropy::{pearson, sweep_entropy, write_records_csv, EntropyRecord, Estimator, SweepConfig};
use crate::lm::{CausalLm, ModelParams};
use crate::seed::derive_seed;
use crate::training::{initial_batch_difficulty_probe, run_training, sft_step, MetricsLog, ProbeRow, TrainingRun};

/// Datasets and the starting model of an experiment.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub pretrain: Option<Dataset>,
    pub theta0: ModelParams,
    /// SHA-256 over the JSONL encoding of every generated set.
    pub dataset_hash: String,
}

fn jsonl_bytes(d: &Dataset) -> Result<Vec<u8>, HarnessError> {
    let mut buf = Vec::new();
    write_jsonl(d, &mut buf)?;
    Ok(buf)
}

/// Generates the datasets, initializes the model and runs the pretraining
/// stage if one is configured.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    let (train, test, pretrain, dataset_hash) = prepare_data_only(cfg)?;
    let needed = [Some(&train), Some(&test), pretrain.as_ref()]
        .into_iter()
        .flatten()
        .map(|d| d.max_rendered_len(true))
        .max()
        .unwrap_or(0);
    if cfg.model.context_length < needed {
        return Err(HarnessError::Config {
            field: "model.context_length".into(),
            reason: format!("{} is shorter than the longest rendered sample ({needed} tokens)", cfg.model.context_length),
        });
    }
    let mut theta0 = ModelParams::init(cfg.model_config())?;
    if let Some(p) = &pretrain {
        pretrain_model(cfg, &mut theta0, p)?;
    }
    Ok(Prepared {
        train,
        test,
        pretrain,
        theta0,
        dataset_hash,
    })
}

/// Plain SFT over uniformly drawn minibatches.
pub fn pretrain_model(cfg: &ExperimentConfig, params: &mut ModelParams, data: &Dataset) -> Result<(), HarnessError> {
    let p = &cfg.pretrain;
    let mut opt = Adam::new(LrSchedule::cosine(p.base_lr, p.steps as u64));
    if let Some(c) = cfg.train.grad_clip {
        opt = opt.with_grad_clip(c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "pretrain.minibatch"));
    let samples = data.samples();
    for step in 0..p.steps {
        let take = p.batch_size.min(samples.len());
        let batch: Vec<&Sample> = sample_indices(&mut rng, samples.len(), take)
            .into_iter()
            .map(|i| &samples[i])
            .collect();
        let loss = sft_step(params, &mut opt, &batch, cfg.train.with_qap)?;
        if (step + 1) % 50 == 0 {
            log::info!("pretrain step {}: loss {loss:.4}", step + 1);
        }
    }
    Ok(())
}

fn csv_bytes<F>(write: F) -> Result<Vec<u8>, HarnessError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), HarnessError>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn write_rows<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Number of answer tokens an entropy record sums over.
fn record_tokens(r: &EntropyRecord, sample: &Sample, sweep: &SweepConfig) -> usize {
    if sweep.length_normalized {
        return 1;
    }
    let len = sample.answer_tokens.len();
    match r.estimator {
        Estimator::PrefixNll => r.prefix_length.min(len),
        Estimator::FullNll => len,
        Estimator::McInference | Estimator::PredictiveProfile => 1,
    }
}

/// Pool-mean per-token entropy and test accuracy at each interval boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyPerformanceRow {
    pub interval: usize,
    #[serde(rename = "mean_token_H")]
    pub mean_token_h: f64,
    pub eval_accuracy: Option<f64>,
}

pub fn entropy_performance_rows(run: &TrainingRun, pool: &Dataset, sweep: &SweepConfig) -> Vec<EntropyPerformanceRow> {
    let acc: HashMap<usize, Option<f64>> = run
        .metrics
        .intervals()
        .iter()
        .map(|r| (r.interval, r.eval_accuracy))
        .collect();
    run.sweeps
        .iter()
        .enumerate()
        .map(|(k, records)| {
            let total: f64 = records
                .iter()
                .map(|r| {
                    let s = pool.get(r.sample_id).expect("record of a pool sample");
                    r.value / record_tokens(r, s, sweep).max(1) as f64
                })
                .sum();
            EntropyPerformanceRow {
                interval: k,
                mean_token_h: total / records.len().max(1) as f64,
                eval_accuracy: acc.get(&k).copied().flatten(),
            }
        })
        .collect()
}

/// Points for the entropy-performance fit: intervals with an evaluation.
pub fn fit_points(rows: &[EntropyPerformanceRow]) -> Vec<(f64, f64)> {
    rows.iter()
        .filter_map(|r| r.eval_accuracy.map(|a| (r.mean_token_h, a)))
        .collect()
}

fn zero_wall(cfg: &ExperimentConfig, records: &mut [EntropyRecord]) {
    if !cfg.train.record_wall_time {
        records.iter_mut().for_each(|r| r.wall_time = 0.0);
    }
}

/// Writes the metrics, batch log, entropy sweeps and entropy-performance
/// table of a finished run under `prefix`.
fn write_run(
    cfg: &ExperimentConfig,
    art: &mut Artifacts,
    prefix: &str,
    run: &TrainingRun,
    prepared: &Prepared,
) -> Result<(), HarnessError> {
    art.write(&format!("{prefix}steps.csv"), &csv_bytes(|b| Ok(run.metrics.write_steps_csv(b)?))?)?;
    art.write(
        &format!("{prefix}intervals.csv"),
        &csv_bytes(|b| Ok(run.metrics.write_intervals_csv(b)?))?,
    )?;
    let rows: Vec<BatchLogRow> = run
        .batches
        .iter()
        .zip(&run.sweeps)
        .flat_map(|(batch, records)| BatchLogRow::from_batch(batch, records))
        .collect();
    art.write(&format!("{prefix}batches.csv"), &csv_bytes(|b| Ok(write_batch_log(&rows, b)?))?)?;
    let all: Vec<EntropyRecord> = run.sweeps.iter().flatten().cloned().collect();
    art.write(&format!("{prefix}entropy.csv"), &csv_bytes(|b| Ok(write_records_csv(&all, b)?))?)?;
    let ep = entropy_performance_rows(run, &prepared.train, &cfg.sweep_config());
    art.write(&format!("{prefix}entropy_performance.csv"), &write_rows(&ep)?)?;
    Ok(())
}

fn train_into(
    cfg: &ExperimentConfig,
    art: &mut Artifacts,
    prefix: &str,
    strategy: &StrategySpec,
    prepared: &Prepared,
    checkpoints: bool,
) -> Result<TrainingRun, HarnessError> {
    let ckpt_rel = format!("{prefix}checkpoints");
    let ckpt_dir = art.path(&ckpt_rel);
    if checkpoints {
        std::fs::create_dir_all(&ckpt_dir)?;
    }
    let run = run_training(
        prepared.theta0.clone(),
        &cfg.train_config(),
        strategy,
        &cfg.sweep_config(),
        &prepared.train,
        &prepared.test,
        checkpoints.then_some(ckpt_dir.as_path()),
    )?;
    if checkpoints {
        for k in 0..run.sweeps.len() {
            art.add(&format!("{ckpt_rel}/checkpoint_{k:03}.bin"));
        }
    }
    write_run(cfg, art, prefix, &run, prepared)?;
    Ok(run)
}

/// Writes the train, test and (if configured) pretraining sets as JSONL.
pub fn run_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    let prepared = prepare_data_only(cfg)?;
    let mut art = Artifacts::new(out)?;
    art.write("train.jsonl", &jsonl_bytes(&prepared.0)?)?;
    art.write("test.jsonl", &jsonl_bytes(&prepared.1)?)?;
    if let Some(p) = &prepared.2 {
        art.write("pretrain.jsonl", &jsonl_bytes(p)?)?;
    }
    emit_manifest(cfg, "gen-data", &art, &prepared.3)
}

fn prepare_data_only(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, Option<Dataset>, String), HarnessError> {
    cfg.validate()?;
    let train = generate_synthetic_dataset(&cfg.train_spec(), Split::Train)?;
    let test = generate_synthetic_dataset(&cfg.test_spec(), Split::Test)?;
    let pretrain = if cfg.pretrain.steps > 0 {
        Some(generate_synthetic_dataset(&cfg.pretrain_spec(), Split::Train)?)
    } else {
        None
    };
    let mut hashed = jsonl_bytes(&train)?;
    hashed.extend(jsonl_bytes(&test)?);
    if let Some(p) = &pretrain {
        hashed.extend(jsonl_bytes(p)?);
    }
    Ok((train, test, pretrain, sha256_hex(&hashed)))
}

/// One curriculum training run with checkpoints at every interval.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    let prepared = prepare(cfg)?;
    let mut art = Artifacts::new(out)?;
    train_into(cfg, &mut art, "", &cfg.strategy, &prepared, true)?;
    emit_manifest(cfg, "train", &art, &prepared.dataset_hash)
}

/// One entropy sweep of the training pool with the starting model.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    let prepared = prepare(cfg)?;
    let mut records = sweep_entropy(&prepared.theta0, prepared.train.samples(), &cfg.sweep_config(), 0)?;
    zero_wall(cfg, &mut records);
    let mut art = Artifacts::new(out)?;
    art.write("entropy.csv", &csv_bytes(|b| Ok(write_records_csv(&records, b)?))?)?;
    emit_manifest(cfg, "sweep", &art, &prepared.dataset_hash)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixAblationRow {
    pub prefix_length: usize,
    /// Empty when the correlation is undefined (zero variance).
    pub pearson: Option<f64>,
    pub mean_wall_time_s: f64,
}

fn pearson_or_none(xs: &[f64], ys: &[f64]) -> Option<f64> {
    match pearson(xs, ys) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("correlation undefined: {e}");
            None
        }
    }
}

fn values(records: &[EntropyRecord]) -> Vec<f64> {
    records.iter().map(|r| r.value).collect()
}

/// For each prefix length, the correlation between prefix entropy and
/// full-answer entropy on one snapshot, plus the mean per-sample cost.
pub fn ablate_prefix_lengths<M: CausalLm + Sync>(
    model: &M,
    pool: &[Sample],
    sweep: &SweepConfig,
    lengths: &[usize],
) -> Result<Vec<PrefixAblationRow>, HarnessError> {
    let full_cfg = SweepConfig {
        estimator: Estimator::FullNll,
        ..sweep.clone()
    };
    let full = values(&sweep_entropy(model, pool, &full_cfg, 0)?);
    lengths
        .iter()
        .map(|&l| {
            let cfg = SweepConfig {
                estimator: Estimator::PrefixNll,
                prefix_length: l,
                ..sweep.clone()
            };
            let recs = sweep_entropy(model, pool, &cfg, 0)?;
            Ok(PrefixAblationRow {
                prefix_length: l,
                pearson: pearson_or_none(&values(&recs), &full),
                mean_wall_time_s: recs.iter().map(|r| r.wall_time).sum::<f64>() / recs.len().max(1) as f64,
            })
        })
        .collect()
}

/// Prefix-versus-full correlations with and without the quick-answer
/// prompt. Each side compares against the full entropy under the same
/// conditioning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QapAblation {
    pub prefix_length: usize,
    pub r_with_qap: Option<f64>,
    pub r_without_qap: Option<f64>,
    /// Set when a correlation is undefined.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<String>,
}

pub fn ablate_qap<M: CausalLm + Sync>(model: &M, pool: &[Sample], sweep: &SweepConfig) -> Result<QapAblation, HarnessError> {
    let mut r = [None, None];
    let mut notes = Vec::new();
    for (slot, with_qap) in [true, false].into_iter().enumerate() {
        let prefix_cfg = SweepConfig {
            estimator: Estimator::PrefixNll,
            with_qap,
            ..sweep.clone()
        };
        let full_cfg = SweepConfig {
            estimator: Estimator::FullNll,
            ..prefix_cfg.clone()
        };
        let prefix = values(&sweep_entropy(model, pool, &prefix_cfg, 0)?);
        let full = values(&sweep_entropy(model, pool, &full_cfg, 0)?);
        match pearson(&prefix, &full) {
            Ok(v) => r[slot] = Some(v),
            Err(e) => notes.push(format!("{}: {e}", if with_qap { "with_qap" } else { "without_qap" })),
        }
    }
    Ok(QapAblation {
        prefix_length: sweep.prefix_length,
        r_with_qap: r[0],
        r_without_qap: r[1],
        degenerate: (!notes.is_empty()).then(|| notes.join("; ")),
    })
}

pub fn run_ablate_prefix(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    let prepared = prepare(cfg)?;
    let mut rows = ablate_prefix_lengths(
        &prepared.theta0,
        prepared.train.samples(),
        &cfg.sweep_config(),
        &cfg.ablation.prefix_lengths,
    )?;
    if !cfg.train.record_wall_time {
        rows.iter_mut().for_each(|r| r.mean_wall_time_s = 0.0);
    }
    let mut art = Artifacts::new(out)?;
    art.write("prefix_ablation.csv", &write_rows(&rows)?)?;
    emit_manifest(cfg, "ablate-prefix", &art, &prepared.dataset_hash)
}

pub fn run_ablate_qap(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    let prepared = prepare(cfg)?;
    let result = ablate_qap(&prepared.theta0, prepared.train.samples(), &cfg.sweep_config())?;
    let mut art = Artifacts::new(out)?;
    art.write("qap_ablation.json", &json_bytes(&result)?)?;
    emit_manifest(cfg, "ablate-qap", &art, &prepared.dataset_hash)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, HarnessError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowAblationRow {
    pub window_lo: f64,
    pub window_hi: f64,
    pub final_accuracy: f64,
    #[serde(rename = "mean_batch_H")]
    pub mean_batch_h: f64,
}

fn final_accuracy(run: &TrainingRun) -> f64 {
    run.metrics
        .intervals()
        .last()
        .and_then(|r| r.eval_accuracy)
        .expect("the final interval is always evaluated")
}

/// EDCO training once per selection window; each run's files go under
/// `window_<i>/`.
pub fn run_ablate_window(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    let prepared = prepare(cfg)?;
    let mut art = Artifacts::new(out)?;
    let mut rows = Vec::new();
    for (i, [lo, hi]) in cfg.ablation.windows.iter().enumerate() {
        let spec = StrategySpec {
            window_lo: *lo,
            window_hi: *hi,
            ..StrategySpec::new(Strategy::Edco)
        };
        let run = train_into(cfg, &mut art, &format!("window_{i}/"), &spec, &prepared, false)?;
        let steps = run.metrics.steps();
        rows.push(WindowAblationRow {
            window_lo: *lo,
            window_hi: *hi,
            final_accuracy: final_accuracy(&run),
            mean_batch_h: steps.iter().map(|s| s.mean_batch_h).sum::<f64>() / steps.len().max(1) as f64,
        });
    }
    art.write("window_ablation.csv", &write_rows(&rows)?)?;
    emit_manifest(cfg, "ablate-window", &art, &prepared.dataset_hash)
}

/// Greedy accuracy of the starting model on each strategy's first batch.
pub fn run_probe_difficulty(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    let prepared = prepare(cfg)?;
    let specs: Vec<StrategySpec> = cfg
        .ablation
        .probe_strategies
        .iter()
        .map(|&s| StrategySpec {
            name: s,
            ..cfg.strategy.clone()
        })
        .collect();
    let rows: Vec<ProbeRow> = initial_batch_difficulty_probe(
        &prepared.theta0,
        &cfg.train_config(),
        &specs,
        &cfg.sweep_config(),
        &prepared.train,
    )?;
    let mut art = Artifacts::new(out)?;
    art.write("probe.csv", &write_rows(&rows)?)?;
    emit_manifest(cfg, "probe-difficulty", &art, &prepared.dataset_hash)
}

/// Fits the entropy-performance relation. With `log`, reads the
/// `entropy_performance.csv` of an earlier `train` run in that directory;
/// otherwise trains first.
pub fn run_fit(cfg: &ExperimentConfig, out: &Path, log: Option<&Path>) -> Result<Manifest, HarnessError> {
    let mut art = Artifacts::new(out)?;
    let (rows, dataset_hash) = match log {
        Some(dir) => {
            let rows: Vec<EntropyPerformanceRow> = read_rows(&dir.join("entropy_performance.csv"))?;
            (rows, prepare_data_only(cfg)?.3)
        }
        None => {
            let prepared = prepare(cfg)?;
            let run = train_into(cfg, &mut art, "", &cfg.strategy, &prepared, false)?;
            (
                entropy_performance_rows(&run, &prepared.train, &cfg.sweep_config()),
                prepared.dataset_hash,
            )
        }
    };
    let fit: EntropyPerformanceFit = fit_entropy_performance(&fit_points(&rows))?;
    art.write("fit.json", &json_bytes(&fit)?)?;
    emit_manifest(cfg, "fit-eq3", &art, &dataset_hash)
}

/// Per-strategy curves read off a metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub final_eval_accuracy: Option<f64>,
    pub eval_accuracy: Vec<Option<f64>>,
    #[serde(rename = "mean_pool_H")]
    pub mean_pool_h: Vec<f64>,
    /// Mean selected-batch entropy of each training interval.
    #[serde(rename = "mean_batch_H")]
    pub mean_batch_h: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub strategies: Vec<StrategySummary>,
}

pub fn summarize(log: &MetricsLog) -> StrategySummary {
    let mut batch_h: Vec<(usize, f64)> = Vec::new();
    for s in log.steps() {
        if batch_h.last().is_none_or(|&(k, _)| k != s.interval) {
            batch_h.push((s.interval, s.mean_batch_h));
        }
    }
    StrategySummary {
        strategy: log.steps().first().map(|s| s.strategy.clone()).unwrap_or_default(),
        final_eval_accuracy: log.intervals().last().and_then(|r| r.eval_accuracy),
        eval_accuracy: log.intervals().iter().map(|r| r.eval_accuracy).collect(),
        mean_pool_h: log.intervals().iter().map(|r| r.mean_pool_h).collect(),
        mean_batch_h: batch_h.into_iter().map(|(_, h)| h).collect(),
    }
}

fn read_log(dir: &Path) -> Result<MetricsLog, HarnessError> {
    let steps = std::fs::File::open(dir.join("steps.csv"))?;
    let intervals = std::fs::File::open(dir.join("intervals.csv"))?;
    Ok(MetricsLog::read_csv(steps, intervals)?)
}

/// Summarizes runs side by side. With `runs`, reads the metrics of earlier
/// `train` outputs; otherwise trains every configured compare strategy into
/// its own subdirectory first.
pub fn run_compare(cfg: &ExperimentConfig, out: &Path, runs: &[PathBuf]) -> Result<Manifest, HarnessError> {
    let mut art = Artifacts::new(out)?;
    let (logs, dataset_hash) = if runs.is_empty() {
        let prepared = prepare(cfg)?;
        let mut logs = Vec::new();
        for &s in &cfg.ablation.compare_strategies {
            let spec = StrategySpec {
                name: s,
                ..cfg.strategy.clone()
            };
            let run = train_into(cfg, &mut art, &format!("{s}/"), &spec, &prepared, true)?;
            logs.push(run.metrics);
        }
        (logs, prepared.dataset_hash)
    } else {
        let logs = runs.iter().map(|d| read_log(d)).collect::<Result<Vec<_>, _>>()?;
        (logs, prepare_data_only(cfg)?.3)
    };
    let summary = CompareSummary {
        strategies: logs.iter().map(summarize).collect(),
    };
    art.write("summary.json", &json_bytes(&summary)?)?;
    emit_manifest(cfg, "compare", &art, &dataset_hash)
}
