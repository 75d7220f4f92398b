use super::{CausalLm, LmError};
use crate::autodiff::Tensor;

/// Model whose next-token logits depend only on the current token:
/// row `t` of a `[V, V]` table.
#[derive(Clone, Debug, PartialEq)]
pub struct BigramLm {
    table: Tensor,
    context_length: usize,
}

impl BigramLm {
    pub fn new(table: Tensor, context_length: usize) -> Result<Self, LmError> {
        let shape = table.shape();
        if shape.len() != 2 || shape[0] != shape[1] || shape[0] < 2 {
            return Err(LmError::InvalidConfig(format!(
                "bigram table must be square with at least 2 rows, got {shape:?}"
            )));
        }
        if context_length == 0 {
            return Err(LmError::InvalidConfig("context_length must be positive".into()));
        }
        if !table.is_finite() {
            return Err(LmError::NonFinite);
        }
        Ok(Self { table, context_length })
    }

    /// All-zero logits: every next token has probability `1/V`.
    pub fn uniform(vocab_size: usize, context_length: usize) -> Result<Self, LmError> {
        Self::new(Tensor::zeros(&[vocab_size, vocab_size]), context_length)
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }
}

impl CausalLm for BigramLm {
    type State = usize;

    fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    fn context_length(&self) -> usize {
        self.context_length
    }

    fn start(&self) -> usize {
        0
    }

    fn feed(&self, len: &mut usize, tokens: &[u32]) -> Result<Vec<f64>, LmError> {
        let total = *len + tokens.len();
        if total > self.context_length {
            return Err(LmError::ContextOverflow {
                len: total,
                max: self.context_length,
            });
        }
        let v = self.vocab_size();
        let mut out = Vec::with_capacity(tokens.len() * v);
        for &t in tokens {
            if t as usize >= v {
                return Err(LmError::TokenOutOfRange { token: t, vocab: v });
            }
            out.extend_from_slice(self.table.row(t as usize));
        }
        *len = total;
        Ok(out)
    }
}
