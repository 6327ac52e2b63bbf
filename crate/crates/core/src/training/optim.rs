use std::collections::BTreeMap;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

/// Linear warmup followed by inverse-square-root decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub warmup: usize,
}

impl Schedule {
    pub fn new(peak: f64, warmup: usize) -> Result<Self> {
        if warmup == 0 {
            return Err(Error::Config("warmup_steps must be at least 1".into()));
        }
        Ok(Schedule { peak, warmup })
    }

    /// Learning rate at 1-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup as f64;
        self.peak * (s / w).min((w / s).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient was not finite; parameters were left untouched.
    Rejected,
}

/// Adaptive-moment optimizer over the trainable entries of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    steps: u64,
    rejected: usize,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            clip: 0.0,
            moments: BTreeMap::new(),
            steps: 0,
            rejected: 0,
        }
    }

    pub fn from_config(c: &TrainConfig) -> Self {
        Adam {
            clip: c.grad_clip,
            ..Adam::new(c.adam_beta1, c.adam_beta2, c.adam_eps)
        }
    }

    pub fn rejected_steps(&self) -> usize {
        self.rejected
    }

    pub fn applied_steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Gradients for frozen or unknown parameters are
    /// an error rather than silently ignored.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<StepOutcome> {
        if grads.values().any(|g| !g.is_finite()) {
            self.rejected += 1;
            return Ok(StepOutcome::Rejected);
        }
        for name in grads.keys() {
            match store.get(name) {
                Some(p) if p.trainable => {}
                Some(_) => {
                    return Err(Error::Training(format!(
                        "gradient supplied for frozen parameter {}",
                        name
                    )))
                }
                None => return Err(Error::UnknownParam(name.clone())),
            }
        }
        let norm = grads
            .values()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let factor = if self.clip > 0.0 && norm > self.clip {
            self.clip / norm
        } else {
            1.0
        };
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = store.get_mut(name).expect("checked above");
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            for (((w, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi * factor;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}
