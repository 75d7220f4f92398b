use std::collections::BTreeMap;

use crate::autodiff::{Adam, Graph, Tensor};
use crate::corpus::{render_prompt, Sample};
use crate::lm::{LmError, ModelParams};

use super::TrainError;

/// A teacher-forced training sequence. Position `t` predicts `targets[t]`
/// with loss weight `weights[t]`; prompt positions carry weight 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SftExample {
    pub tokens: Vec<u32>,
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
}

impl SftExample {
    pub fn new(sample: &Sample, with_qap: bool) -> Self {
        let prompt = render_prompt(sample, with_qap);
        let answer = &sample.answer_tokens;
        let mut tokens = prompt.clone();
        tokens.extend_from_slice(&answer[..answer.len().saturating_sub(1)]);
        let mut targets: Vec<usize> = tokens[1..].iter().map(|&t| t as usize).collect();
        targets.push(answer.last().map_or(0, |&t| t as usize));
        let weights = (0..tokens.len())
            .map(|i| if i + 1 >= prompt.len() { 1.0 } else { 0.0 })
            .collect();
        Self {
            tokens,
            targets,
            weights,
        }
    }
}

/// Summed answer-token NLL of one example and its parameter gradients.
pub fn example_loss_and_grads(
    params: &ModelParams,
    ex: &SftExample,
) -> Result<(f64, BTreeMap<String, Tensor>), LmError> {
    let mut g = Graph::new();
    let logits = params.forward_graph(&mut g, &ex.tokens)?;
    let loss = g.cross_entropy(logits, &ex.targets, &ex.weights)?;
    let value = g.value(loss).data()[0];
    Ok((value, g.param_grads(loss)?))
}

pub(crate) fn accumulate(total: &mut BTreeMap<String, Tensor>, grads: BTreeMap<String, Tensor>, scale: f64) {
    for (name, g) in grads {
        match total.get_mut(&name) {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
            None => {
                let data = g.data().iter().map(|v| v * scale).collect();
                total.insert(name, Tensor::new(g.shape().to_vec(), data).expect("same shape"));
            }
        }
    }
}

/// Batch-mean loss and gradient without updating the parameters.
pub fn sft_loss_and_grads(
    params: &ModelParams,
    batch: &[&Sample],
    with_qap: bool,
) -> Result<(f64, BTreeMap<String, Tensor>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = BTreeMap::new();
    let mut loss = 0.0;
    for s in batch {
        let (l, g) = example_loss_and_grads(params, &SftExample::new(s, with_qap))
            .map_err(|source| TrainError::Sample { sample_id: s.id, source })?;
        loss += l * scale;
        accumulate(&mut total, g, scale);
    }
    Ok((loss, total))
}

/// One supervised update on the batch-mean answer NLL. Returns the loss
/// before the update.
pub fn sft_step(params: &mut ModelParams, opt: &mut Adam, batch: &[&Sample], with_qap: bool) -> Result<f64, TrainError> {
    let (loss, grads) = sft_loss_and_grads(params, batch, with_qap)?;
    params.apply_gradients(opt, &grads)?;
    Ok(loss)
}
