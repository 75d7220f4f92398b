//! Autoregressive language models: the transformer, a bigram reference
//! model, teacher-forced scoring, sampling and checkpoints.

mod bigram;
mod checkpoint;
mod model;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::tensor::{entropy_of_logits, log_softmax_row, softmax};
use crate::autodiff::{GraphError, OptimError, Tensor};
use crate::corpus::vocab::EOS;

pub use bigram::BigramLm;
pub use checkpoint::{load_checkpoint, load_checkpoint_checked, save_checkpoint};
pub use model::{KvCache, ModelConfig, ModelParams};

#[derive(Debug, Error)]
pub enum LmError {
    #[error("sequence of length {len} exceeds context length {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("prompt must contain at least one token")]
    EmptyPrompt,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite logits")]
    NonFinite,
    #[error("checkpoint vocabulary size {found} does not match expected {expected}")]
    VocabMismatch { found: usize, expected: usize },
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A causal model that consumes tokens incrementally.
///
/// `feed` appends tokens to `state` and returns, row-major `[tokens.len(), V]`,
/// the next-token logits after each appended position. Feeding a sequence in
/// pieces gives the same logits as feeding it at once.
pub trait CausalLm: Sync {
    type State: Send;

    fn vocab_size(&self) -> usize;
    fn context_length(&self) -> usize;
    fn start(&self) -> Self::State;
    fn feed(&self, state: &mut Self::State, tokens: &[u32]) -> Result<Vec<f64>, LmError>;
}

/// Next-token logits `[len, V]` for every position of `tokens`.
pub fn forward_logits<M: CausalLm>(model: &M, tokens: &[u32]) -> Result<Tensor, LmError> {
    let mut state = model.start();
    let logits = model.feed(&mut state, tokens)?;
    Ok(Tensor::new(vec![tokens.len(), model.vocab_size()], logits).expect("feed returns len * V values"))
}

/// Teacher-forced `log p(target_t | prompt, target_<t)` for each target token.
pub fn token_log_probs<M: CausalLm>(model: &M, prompt: &[u32], target: &[u32]) -> Result<Vec<f64>, LmError> {
    if prompt.is_empty() {
        return Err(LmError::EmptyPrompt);
    }
    let total = prompt.len() + target.len();
    if total > model.context_length() {
        return Err(LmError::ContextOverflow {
            len: total,
            max: model.context_length(),
        });
    }
    if target.is_empty() {
        return Ok(Vec::new());
    }
    let mut seq = Vec::with_capacity(total - 1);
    seq.extend_from_slice(prompt);
    seq.extend_from_slice(&target[..target.len() - 1]);
    let logits = forward_logits(model, &seq)?;
    let v = model.vocab_size();
    let mut row = vec![0.0; v];
    target
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            if y as usize >= v {
                return Err(LmError::TokenOutOfRange { token: y, vocab: v });
            }
            log_softmax_row(logits.row(prompt.len() - 1 + t), &mut row);
            Ok(row[y as usize])
        })
        .collect()
}

/// Entropy in nats of the next-token distribution after `context`.
pub fn predictive_entropy_at<M: CausalLm>(model: &M, context: &[u32]) -> Result<f64, LmError> {
    if context.is_empty() {
        return Err(LmError::EmptyPrompt);
    }
    let logits = forward_logits(model, context)?;
    Ok(entropy_of_logits(logits.row(context.len() - 1)))
}

/// A sampled continuation with the log-probability of each emitted token
/// under the unscaled model distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub prompt_tokens: Vec<u32>,
    pub output_tokens: Vec<u32>,
    pub log_probs: Vec<f64>,
    pub seed: u64,
}

impl Generation {
    pub fn ended_with_eos(&self) -> bool {
        self.output_tokens.last() == Some(&EOS)
    }
}

/// Temperatures at or below this decode greedily.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

fn draw(logits: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    if temperature <= GREEDY_TEMPERATURE {
        let mut best = 0;
        for (i, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let probs = softmax(&scaled);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples up to `max_len` tokens after `prompt`, stopping after EOS or when
/// the context is full. Deterministic in `seed`.
pub fn sample<M: CausalLm>(
    model: &M,
    prompt: &[u32],
    max_len: usize,
    temperature: f64,
    seed: u64,
) -> Result<Generation, LmError> {
    if prompt.is_empty() {
        return Err(LmError::EmptyPrompt);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = model.start();
    let v = model.vocab_size();
    let mut logits = model.feed(&mut state, prompt)?;
    let budget = max_len.min(model.context_length().saturating_sub(prompt.len()));
    let mut output = Vec::new();
    let mut log_probs = Vec::new();
    let mut lp = vec![0.0; v];
    while output.len() < budget {
        let last = &logits[logits.len() - v..];
        let tok = draw(last, temperature, &mut rng);
        log_softmax_row(last, &mut lp);
        log_probs.push(lp[tok]);
        output.push(tok as u32);
        if tok as u32 == EOS || output.len() == budget {
            break;
        }
        logits = model.feed(&mut state, &[tok as u32])?;
    }
    Ok(Generation {
        prompt_tokens: prompt.to_vec(),
        output_tokens: output,
        log_probs,
        seed,
    })
}
