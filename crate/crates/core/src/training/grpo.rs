use std::collections::BTreeMap;

use crate::autodiff::{Adam, Graph, Tensor};
use crate::lm::{sample, Generation, LmError, ModelParams};
use crate::seed::mix;

use super::sft::accumulate;
use super::TrainError;

/// Floor on the group reward standard deviation.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-6;

/// `min(ρ·A, clip(ρ, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_ratio: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_ratio, 1.0 + clip_ratio);
    (ratio * advantage).min(clipped * advantage)
}

/// `(r_i − mean) / max(std, floor)`; all zeros when every reward is equal.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if rewards.iter().all(|&r| r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std.max(ADVANTAGE_STD_FLOOR)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrpoOutcome {
    /// Negated token-mean surrogate before the update.
    pub surrogate_loss: f64,
    pub mean_reward: f64,
    /// Prompts whose group rewards were all equal.
    pub degenerate_groups: usize,
    /// False when every group was degenerate and no update was made.
    pub updated: bool,
    pub advantages: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrpoSettings {
    pub group_size: usize,
    pub clip_ratio: f64,
    pub max_gen_len: usize,
    pub temperature: f64,
    pub seed: u64,
}

/// Surrogate objective contribution (token sum, not yet averaged) and its
/// gradients for one completion.
fn completion_terms(
    params: &ModelParams,
    gen: &Generation,
    advantage: f64,
    clip_ratio: f64,
) -> Result<(f64, BTreeMap<String, Tensor>), LmError> {
    let p = gen.prompt_tokens.len();
    let n = gen.output_tokens.len();
    let mut tokens = gen.prompt_tokens.clone();
    tokens.extend_from_slice(&gen.output_tokens[..n - 1]);
    let mut g = Graph::new();
    let logits = params.forward_graph(&mut g, &tokens)?;
    let lp = g.log_softmax(logits)?;
    let rows = tokens.len();
    let mut index = vec![0usize; rows];
    let mut mask = vec![0.0; rows];
    for (t, &y) in gen.output_tokens.iter().enumerate() {
        index[p - 1 + t] = y as usize;
        mask[p - 1 + t] = 1.0;
    }
    let new_lp = g.gather(lp, &index)?;
    let mut old = g.value(new_lp).data().to_vec();
    for (t, &l) in gen.log_probs.iter().enumerate() {
        old[p - 1 + t] = l;
    }
    let old = g.input(Tensor::new(vec![rows], old).expect("rows"));
    let diff = g.sub(new_lp, old)?;
    let ratio = g.exp(diff)?;
    let unclipped = g.scale(ratio, advantage)?;
    let clipped = g.clamp(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)?;
    let clipped = g.scale(clipped, advantage)?;
    let obj = g.minimum(unclipped, clipped)?;
    let mask = g.input(Tensor::new(vec![rows], mask).expect("rows"));
    let obj = g.mul(obj, mask)?;
    let total = g.sum(obj)?;
    let value = g.value(total).data()[0];
    Ok((value, g.param_grads(total)?))
}

/// One group-relative policy update. For each prompt, samples `group_size`
/// completions from the current policy, scores them with `reward`, and
/// maximizes the token-mean clipped surrogate with one optimizer step.
pub fn grpo_step<F>(
    params: &mut ModelParams,
    opt: &mut Adam,
    prompts: &[Vec<u32>],
    settings: &GrpoSettings,
    mut reward: F,
) -> Result<GrpoOutcome, TrainError>
where
    F: FnMut(usize, &Generation) -> f64,
{
    if settings.group_size < 2 {
        return Err(TrainError::InvalidConfig("group_size must be at least 2".into()));
    }
    if prompts.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut groups = Vec::with_capacity(prompts.len());
    let mut reward_sum = 0.0;
    for (pi, prompt) in prompts.iter().enumerate() {
        let mut gens = Vec::with_capacity(settings.group_size);
        let mut rewards = Vec::with_capacity(settings.group_size);
        for i in 0..settings.group_size {
            let seed = mix(settings.seed, (pi * settings.group_size + i) as u64);
            let g = sample(params, prompt, settings.max_gen_len, settings.temperature, seed)?;
            rewards.push(reward(pi, &g));
            gens.push(g);
        }
        reward_sum += rewards.iter().sum::<f64>();
        groups.push((gens, group_advantages(&rewards)));
    }
    let total_tokens: usize = groups
        .iter()
        .flat_map(|(gens, _)| gens.iter().map(|g| g.output_tokens.len()))
        .sum();
    let mut degenerate = 0;
    let mut objective = 0.0;
    let mut grads = BTreeMap::new();
    let scale = -1.0 / total_tokens.max(1) as f64;
    for (gens, adv) in &groups {
        if adv.iter().all(|&a| a == 0.0) {
            degenerate += 1;
            log::debug!("degenerate group: all rewards equal, no update from this prompt");
            continue;
        }
        for (g, &a) in gens.iter().zip(adv) {
            if g.output_tokens.is_empty() || a == 0.0 {
                continue;
            }
            let (value, gr) = completion_terms(params, g, a, settings.clip_ratio)?;
            objective += value;
            accumulate(&mut grads, gr, scale);
        }
    }
    let updated = !grads.is_empty();
    if updated {
        params.apply_gradients(opt, &grads)?;
    }
    Ok(GrpoOutcome {
        surrogate_loss: -objective / total_tokens.max(1) as f64,
        mean_reward: reward_sum / (prompts.len() * settings.group_size) as f64,
        degenerate_groups: degenerate,
        updated,
        advantages: groups.into_iter().map(|(_, a)| a).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_arithmetic() {
        let eps = 0.2;
        assert!((clipped_surrogate(1.0 + 2.0 * eps, 1.5, eps) - (1.0 + eps) * 1.5).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, 1.0, eps) - 0.5).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, eps) + 0.8).abs() < 1e-15);
        assert!((clipped_surrogate(1.1, 2.0, eps) - 2.2).abs() < 1e-15);
    }

    #[test]
    fn advantages_center_and_degenerate() {
        let a = group_advantages(&[1.0, 0.0, 0.0, 1.0, 1.0]);
        assert!(a.iter().sum::<f64>().abs() <= 1e-9);
        assert_eq!(group_advantages(&[1.0; 4]), vec![0.0; 4]);
    }
}
