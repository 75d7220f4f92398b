//! Synthetic QA datasets: vocabulary, generators, prompt rendering and JSONL persistence.

mod jsonl;
mod prompt;
pub mod task;
pub mod vocab;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use jsonl::{load_jsonl, save_jsonl, write_jsonl};
pub use prompt::{qap_tokens, render_prompt, template_text, QUICK_ANSWER_PROMPT};
pub use task::{generate_synthetic_dataset, QuestionMix, TaskKind, TaskSpec};
pub use vocab::Vocab;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate sample id {0}")]
    DuplicateId(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    SingleChoice,
    MultiChoice,
    TrueFalse,
    Open,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One QA pair. `answer_tokens` always ends with [`vocab::EOS`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: u64,
    pub prompt_tokens: Vec<u32>,
    pub answer_tokens: Vec<u32>,
    pub question_type: QuestionType,
    pub difficulty_tag: u32,
}

impl Sample {
    /// Answer tokens without the trailing EOS.
    pub fn answer_body(&self) -> &[u32] {
        match self.answer_tokens.split_last() {
            Some((&vocab::EOS, body)) => body,
            _ => &self.answer_tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    samples: Vec<Sample>,
    split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split) -> Self {
        Self { samples, split }
    }

    /// Builds a dataset, rejecting duplicate ids.
    pub fn try_new(samples: Vec<Sample>, split: Split) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id) {
                return Err(CorpusError::DuplicateId(s.id));
            }
        }
        Ok(Self { samples, split })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    /// Samples whose id is in `ids`, in the order of `ids`.
    pub fn subset(&self, ids: &[u64]) -> Vec<&Sample> {
        ids.iter().filter_map(|&id| self.get(id)).collect()
    }

    /// Longest rendered prompt plus answer, in tokens.
    pub fn max_rendered_len(&self, with_qap: bool) -> usize {
        self.samples
            .iter()
            .map(|s| render_prompt(s, with_qap).len() + s.answer_tokens.len())
            .max()
            .unwrap_or(0)
    }
}

/// Number of sentence delimiters (`.` or `;`) in an answer text.
pub fn sentence_count(answer_text: &str) -> usize {
    answer_text.chars().filter(|&c| c == '.' || c == ';').count()
}
