//! Adam, the step learning-rate schedule, per-tensor gradient normalization,
//! and the two training loops: sequence fitting on cell-type time series and
//! pool-based growth towards a single RGBA target.

mod generate;
mod pool;
mod timeseries;

pub use generate::{cohort_sequences, generate_cohort, Readout};
pub use pool::{seed_state, train_pool, PoolState, SeedSpec};
pub use timeseries::train_timeseries;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AutomatonModel, Gradients, StepOptions};
use crate::numerics::{ParamSet, Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

fn default_temperature() -> f32 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_grad_eps() -> f64 {
    1e-8
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Sequences per epoch (time series) or pool samples per step (pool).
    pub batch_size: usize,
    #[serde(default)]
    pub pool_size: usize,
    /// Supervised window length in steps (time series).
    #[serde(default = "default_one")]
    pub window: usize,
    /// Model steps between supervised frames (time series).
    #[serde(default = "default_one")]
    pub tau: usize,
    /// Growth-step range (pool).
    #[serde(default)]
    pub n_min: usize,
    #[serde(default)]
    pub n_max: usize,
    pub seed: u64,
    #[serde(default = "default_grad_eps")]
    pub grad_eps: f64,
    #[serde(default = "default_temperature")]
    pub gumbel_temperature: f32,
    #[serde(default = "default_true")]
    pub straight_through: bool,
}

fn default_gamma() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            milestones: Vec::new(),
            gamma: 1.0,
            batch_size: 8,
            pool_size: 64,
            window: 1,
            tau: 1,
            n_min: 30,
            n_max: 50,
            seed: 0,
            grad_eps: 1e-8,
            gumbel_temperature: 1.0,
            straight_through: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("milestones must be strictly increasing"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.tau == 0 {
            return Err(Error::config("tau must be >= 1"));
        }
        if self.n_min > self.n_max {
            return Err(Error::config("n_min must not exceed n_max"));
        }
        if !(self.grad_eps > 0.0) {
            return Err(Error::config("grad_eps must be positive"));
        }
        if !(self.gumbel_temperature > 0.0) {
            return Err(Error::config("gumbel_temperature must be positive"));
        }
        Ok(())
    }

    pub(crate) fn step_options(&self) -> StepOptions {
        StepOptions {
            train_mode: true,
            gumbel_temperature: self.gumbel_temperature,
            straight_through: self.straight_through,
            ..StepOptions::default()
        }
    }
}

/// `base · gamma^(number of milestones ≤ epoch)`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let passed = config.milestones.iter().filter(|&&m| m <= epoch).count();
    config.learning_rate * config.gamma.powi(passed as i32)
}

/// One Adam step with bias correction. Moments live in `params`.
pub fn adam_update(params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
    params.check_compatible(grads)?;
    let t = params.bump_step() as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (p, g) in params.params_mut().iter_mut().zip(grads) {
        let value = p.value.data_mut();
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        for i in 0..value.len() {
            let gi = f64::from(g.data()[i]);
            let mi = ADAM_BETA1 * f64::from(m[i]) + (1.0 - ADAM_BETA1) * gi;
            let vi = ADAM_BETA2 * f64::from(v[i]) + (1.0 - ADAM_BETA2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
            value[i] = (f64::from(value[i]) - update) as f32;
        }
    }
    Ok(())
}

/// `g ← g / (‖g‖₂ + eps)` for every tensor separately.
pub fn normalize_grads(grads: &mut [Tensor], eps: f64) {
    for g in grads {
        let norm = g.l2_norm();
        let scale = 1.0 / (norm + eps);
        for v in g.data_mut() {
            *v = (f64::from(*v) * scale) as f32;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLog {
    pub records: Vec<LossRecord>,
}

impl LossLog {
    pub fn push(&mut self, epoch: usize, loss: f64, lr: f64) {
        self.records.push(LossRecord { epoch, loss, lr });
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// Mean loss of the last `n` records.
    pub fn tail_mean(&self, n: usize) -> Option<f64> {
        let tail = &self.records[self.records.len().saturating_sub(n)..];
        (!tail.is_empty()).then(|| tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lr\n");
        for r in &self.records {
            s.push_str(&format!("{},{:.9e},{:.9e}\n", r.epoch, r.loss, r.lr));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_csv().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Model parameters wrapped with optimizer state.
pub(crate) fn param_set(model: &AutomatonModel) -> ParamSet {
    ParamSet::from_named(
        model
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone())),
    )
}

/// Normalize, step Adam, and copy the new values back into the model.
pub(crate) fn apply_update<T: Real>(
    model: &mut AutomatonModel,
    params: &mut ParamSet,
    grads: &Gradients<T>,
    config: &TrainConfig,
    lr: f64,
) -> Result<()> {
    let mut g = grads.to_tensors(model);
    normalize_grads(&mut g, config.grad_eps);
    adam_update(params, &g, lr)?;
    let values: Vec<Tensor> = params.values().cloned().collect();
    model.load_tensors(&values)
}
