use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use edco_core::curriculum::Strategy;
use edco_core::harness::{self, ExperimentConfig, Manifest};

/// Entropy-driven curriculum experiments on a tiny causal language model.
#[derive(Parser, Debug)]
#[command(name = "edco", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML). Omitted keys take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Curriculum strategy; overrides `[strategy] name`.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the train, test and pretraining sets as JSONL.
    GenData(Common),
    /// Run one curriculum training run.
    Train(Common),
    /// Sweep the pool entropy with the starting model.
    Sweep(Common),
    /// Correlate prefix entropy with full entropy across prefix lengths.
    AblatePrefix(Common),
    /// Prefix-versus-full correlation with and without the quick-answer prompt.
    AblateQap(Common),
    /// EDCO training with each configured selection window.
    AblateWindow(Common),
    /// Starting-model accuracy on each strategy's first batch.
    ProbeDifficulty(Common),
    /// Fit accuracy against exp(entropy) over a training log.
    FitEq3 {
        #[command(flatten)]
        common: Common,
        /// Directory of an earlier `train` run; trains first when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Summarize strategies side by side.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Directories of earlier `train` runs; trains every configured
        /// compare strategy when omitted.
        #[arg(long, num_args = 1..)]
        runs: Vec<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c)
            | Command::Train(c)
            | Command::Sweep(c)
            | Command::AblatePrefix(c)
            | Command::AblateQap(c)
            | Command::AblateWindow(c)
            | Command::ProbeDifficulty(c) => c,
            Command::FitEq3 { common, .. } | Command::Compare { common, .. } => common,
        }
    }
}

fn load(common: &Common) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading config {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(name) = &common.strategy {
        cfg.strategy.name = name.parse::<Strategy>()?;
    }
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .context("no output directory: pass --out or set output_dir in the config")?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> anyhow::Result<Manifest> {
    let (cfg, out) = load(cli.command.common())?;
    let manifest = match &cli.command {
        Command::GenData(_) => harness::run_gen_data(&cfg, &out)?,
        Command::Train(_) => harness::run_train(&cfg, &out)?,
        Command::Sweep(_) => harness::run_sweep(&cfg, &out)?,
        Command::AblatePrefix(_) => harness::run_ablate_prefix(&cfg, &out)?,
        Command::AblateQap(_) => harness::run_ablate_qap(&cfg, &out)?,
        Command::AblateWindow(_) => harness::run_ablate_window(&cfg, &out)?,
        Command::ProbeDifficulty(_) => harness::run_probe_difficulty(&cfg, &out)?,
        Command::FitEq3 { log, .. } => harness::run_fit(&cfg, &out, log.as_deref())?,
        Command::Compare { runs, .. } => harness::run_compare(&cfg, &out, runs)?,
    };
    log::info!("wrote {} files to {}", manifest.files.len() + 1, out.display());
    Ok(manifest)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
