//! Adaptive-moment optimizer with bias correction and learning-rate schedules.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter {name}: shape {param:?} but gradient {grad:?}")]
    ShapeMismatch {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("gradient for unknown parameter {0}")]
    UnknownParam(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Cosine,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    /// Horizon of the cosine decay; ignored by the constant schedule.
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            base_lr,
            total_steps: 0,
        }
    }

    pub fn cosine(base_lr: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            base_lr,
            total_steps,
        }
    }

    pub fn rate_at(&self, step: u64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::Cosine => {
                if self.total_steps == 0 {
                    return self.base_lr;
                }
                let progress = step.min(self.total_steps) as f64 / self.total_steps as f64;
                0.5 * self.base_lr * (1.0 + (PI * progress).cos())
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip applied before the update.
    pub max_grad_norm: Option<f64>,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(schedule: LrSchedule) -> Self {
        Self {
            schedule,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn with_grad_clip(mut self, max_norm: f64) -> Self {
        self.max_grad_norm = Some(max_norm);
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Rate the next call to [`Adam::step`] will use.
    pub fn current_lr(&self) -> f64 {
        self.schedule.rate_at(self.step)
    }

    /// Applies one update and returns the learning rate it used.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<f64, OptimError> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| OptimError::UnknownParam(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(OptimError::ShapeMismatch {
                    name: name.clone(),
                    param: p.shape().to_vec(),
                    grad: g.shape().to_vec(),
                });
            }
        }
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let clip = match self.max_grad_norm {
            Some(max) => {
                let norm = grads
                    .values()
                    .flat_map(|g| g.data().iter())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gv = gv * clip;
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(lr)
    }

    pub fn moment_shapes_match(&self, params: &BTreeMap<String, Tensor>) -> bool {
        self.first
            .iter()
            .chain(self.second.iter())
            .all(|(name, m)| params.get(name).is_some_and(|p| p.len() == m.len()))
    }
}
