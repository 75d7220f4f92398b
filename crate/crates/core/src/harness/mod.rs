//! Experiment configuration, orchestration of the CLI subcommands, the
//! entropy-performance fit and reproducible artifact emission.

mod config;
mod experiment;
mod fit;
mod manifest;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::curriculum::CurriculumError;
use crate::entropy::EntropyError;
use crate::lm::LmError;
use crate::training::TrainError;

pub use config::{AblationSection, ExperimentConfig, PretrainSection, TaskSection};
pub use experiment::{
    ablate_prefix_lengths, ablate_qap, entropy_performance_rows, fit_points, prepare, pretrain_model, run_ablate_prefix,
    run_ablate_qap, run_ablate_window, run_compare, run_fit, run_gen_data, run_probe_difficulty, run_sweep, run_train,
    summarize, CompareSummary, EntropyPerformanceRow, PrefixAblationRow, Prepared, QapAblation, StrategySummary,
    WindowAblationRow,
};
pub use fit::{fit_entropy_performance, EntropyPerformanceFit};
pub use manifest::{config_hash, emit_manifest, sha256_hex, Artifacts, Manifest, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
