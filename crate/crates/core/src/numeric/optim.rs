//! SGD with momentum and coupled weight decay.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Schedule {
    /// `lr₀ · gamma^⌊step / interval⌋`
    StepDecay { gamma: f64, interval: usize },
    /// `lr₀ · ½(1 + cos(π·step / total))`. `None` spans the whole phase.
    Cosine {
        #[serde(default)]
        total_steps: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        match self.schedule {
            Schedule::StepDecay { gamma, interval } => {
                if !(gamma > 0.0) || interval == 0 {
                    return Err(Error::Config("step decay needs gamma > 0 and interval ≥ 1".into()));
                }
            }
            Schedule::Cosine { total_steps: Some(0) } => {
                return Err(Error::Config("cosine schedule needs total_steps ≥ 1".into()));
            }
            Schedule::Cosine { .. } => {}
        }
        Ok(())
    }

    /// Fills an open cosine horizon with the phase length.
    pub fn with_horizon(&self, steps: usize) -> Self {
        let mut out = self.clone();
        if let Schedule::Cosine { total_steps: None } = out.schedule {
            out.schedule = Schedule::Cosine {
                total_steps: Some(steps.max(1)),
            };
        }
        out
    }

    /// Learning rate at `step`. The cosine arm is clamped to its last step so
    /// the rate never reaches zero.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            Schedule::StepDecay { gamma, interval } => self.lr * gamma.powi((step / interval.max(1)) as i32),
            Schedule::Cosine { total_steps } => {
                let total = total_steps.unwrap_or(1).max(1);
                let s = step.min(total - 1) as f64;
                self.lr * 0.5 * (1.0 + (std::f64::consts::PI * s / total as f64).cos())
            }
        }
    }
}

/// One update of every parameter in `store`:
///
/// ```text
/// buf ← momentum·buf + grad + weight_decay·param
/// param ← param − lr(step)·buf
/// ```
pub fn sgd_step(store: &mut ParamStore, config: &OptimizerConfig, step: usize) -> Result<()> {
    if let Some(name) = store.iter().find(|(_, p)| p.grad.is_none()).map(|(n, _)| n.to_string()) {
        return Err(Error::IncompleteGradient(name));
    }
    let lr = config.lr_at(step);
    for (_, p) in store.iter_mut() {
        let grad = p.grad.as_ref().expect("checked above");
        let buf = p.momentum.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
        for ((b, &g), &w) in buf.values_mut().iter_mut().zip(grad.values()).zip(p.value.values()) {
            *b = config.momentum * *b + g + config.weight_decay * w;
        }
        for (w, &b) in p.value.values_mut().iter_mut().zip(buf.values()) {
            *w -= lr * b;
        }
    }
    Ok(())
}
