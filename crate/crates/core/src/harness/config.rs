use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::{QuestionMix, TaskKind, TaskSpec, Vocab};
use crate::curriculum::{SelectionWindow, Strategy, StrategySpec};
use crate::entropy::SweepConfig;
use crate::lm::ModelConfig;
use crate::seed::derive_seed;
use crate::training::TrainConfig;

/// The synthetic task. Train, test and pretraining sets are drawn from the
/// same generator with independent seed streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub task_kind: TaskKind,
    pub train_samples: usize,
    pub test_samples: usize,
    pub difficulty_range: [u32; 2],
    pub answer_format: QuestionMix,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            task_kind: TaskKind::KeyValueRecall,
            train_samples: 120,
            test_samples: 60,
            difficulty_range: [1, 5],
            answer_format: QuestionMix::default(),
        }
    }
}

/// Plain SFT on a separate sample set before the curriculum run, producing
/// the starting model. Zero steps starts from random initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub samples: usize,
    pub batch_size: usize,
    pub base_lr: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            steps: 0,
            samples: 200,
            batch_size: 8,
            base_lr: 2e-3,
        }
    }
}

/// Parameters of the ablation and comparison subcommands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub prefix_lengths: Vec<usize>,
    /// `[lo_frac, hi_frac]` pairs.
    pub windows: Vec<[f64; 2]>,
    pub probe_strategies: Vec<Strategy>,
    pub compare_strategies: Vec<Strategy>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            prefix_lengths: vec![4, 8, 16, 32, 64],
            windows: vec![[0.0, 1.0], [0.25, 1.0], [0.5, 1.0]],
            probe_strategies: Strategy::ALL.to_vec(),
            compare_strategies: vec![Strategy::Edco, Strategy::Random],
        }
    }
}

/// One experiment. The root `seed` drives every stochastic component
/// through named substreams; section-level seeds must be left unset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub task: TaskSection,
    pub pretrain: PretrainSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub strategy: StrategySpec,
    pub sweep: SweepConfig,
    pub ablation: AblationSection,
}


fn invalid(field: &str, reason: impl ToString) -> HarnessError {
    HarnessError::Config {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

/// Dotted `section.key` of the assignment on the line containing `offset`.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let line_start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next()?;
    let key = line.split('=').next()?.trim();
    if key.is_empty() || key.starts_with('[') {
        return None;
    }
    let section = text[..line_start]
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix('[').and_then(|l| l.strip_suffix(']')));
    Some(match section {
        Some(sec) => format!("{}.{key}", sec.trim()),
        None => key.to_string(),
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config {
            field: e.span().and_then(|s| key_at(text, s.start)).unwrap_or_else(|| "config".into()),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.model.seed != 0 {
            return Err(invalid("model.seed", "section seeds are derived from the root seed"));
        }
        if self.train.seed != 0 {
            return Err(invalid("train.seed", "section seeds are derived from the root seed"));
        }
        if self.sweep.seed != 0 {
            return Err(invalid("sweep.seed", "section seeds are derived from the root seed"));
        }
        self.train_spec().validate().map_err(|e| invalid("task", e))?;
        if self.task.test_samples == 0 {
            return Err(invalid("task.test_samples", "must be at least 1"));
        }
        if self.pretrain.steps > 0 {
            if self.pretrain.samples == 0 {
                return Err(invalid("pretrain.samples", "must be at least 1 when pretrain.steps > 0"));
            }
            if self.pretrain.batch_size == 0 {
                return Err(invalid("pretrain.batch_size", "must be at least 1"));
            }
            if !(self.pretrain.base_lr > 0.0 && self.pretrain.base_lr.is_finite()) {
                return Err(invalid("pretrain.base_lr", "must be positive"));
            }
        }
        let vocab = Vocab::new().size();
        if self.model.vocab_size != vocab {
            return Err(invalid("model.vocab_size", format!("must equal the tokenizer size {vocab}")));
        }
        self.model.validate().map_err(|e| invalid("model", e))?;
        self.train.validate().map_err(|e| invalid("train", e))?;
        self.strategy.validate().map_err(|e| invalid("strategy", e))?;
        self.sweep.validate().map_err(|e| invalid("sweep", e))?;
        let ab = &self.ablation;
        if ab.prefix_lengths.is_empty() || ab.prefix_lengths.contains(&0) {
            return Err(invalid("ablation.prefix_lengths", "must be non-empty and positive"));
        }
        if ab.prefix_lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("ablation.prefix_lengths", "must be strictly ascending"));
        }
        for [lo, hi] in &ab.windows {
            let w = SelectionWindow::new(*lo, *hi).map_err(|e| invalid("ablation.windows", e))?;
            self.check_capacity(&w, "ablation.windows")?;
        }
        self.check_capacity(&self.strategy.window().expect("validated"), "strategy.window_lo")?;
        Ok(())
    }

    /// A non-top window must hold at least `n_select` pool samples.
    fn check_capacity(&self, w: &SelectionWindow, field: &str) -> Result<(), HarnessError> {
        let m = self.task.train_samples;
        let n = self.train.n_select.min(m);
        let capacity = (w.hi_frac - w.lo_frac) * m as f64;
        if !w.is_top() && capacity + 1e-9 < n as f64 {
            return Err(invalid(
                field,
                format!(
                    "window [{}, {}] holds {capacity:.1} of {m} samples, fewer than n_select = {n}",
                    w.lo_frac, w.hi_frac
                ),
            ));
        }
        Ok(())
    }

    /// Copy with execution-only settings cleared: sweep parallelism and the
    /// output directory do not change any result.
    pub fn canonical(&self) -> Self {
        let mut c = self.clone();
        c.output_dir = None;
        c.sweep.parallelism = 1;
        c
    }

    fn spec(&self, num_samples: usize, stream: &str) -> TaskSpec {
        TaskSpec {
            task_kind: self.task.task_kind,
            num_samples,
            difficulty_range: self.task.difficulty_range,
            answer_format: self.task.answer_format,
            seed: derive_seed(self.seed, stream),
        }
    }

    pub fn train_spec(&self) -> TaskSpec {
        self.spec(self.task.train_samples, "corpus.train")
    }

    pub fn test_spec(&self) -> TaskSpec {
        self.spec(self.task.test_samples, "corpus.test")
    }

    pub fn pretrain_spec(&self) -> TaskSpec {
        self.spec(self.pretrain.samples, "corpus.pretrain")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: derive_seed(self.seed, "model.init"),
            ..self.model.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train"),
            ..self.train.clone()
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            seed: derive_seed(self.seed, "sweep"),
            ..self.sweep.clone()
        }
    }
}
