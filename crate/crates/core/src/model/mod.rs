//! The four automaton variants and their dynamics.
//!
//! * `Nca`: one deterministic rule, `s' = s (+) φ(s)`.
//! * `Gca`: one rule emitting a mean and a log-variance per channel; the update
//!   is sampled with the reparameterization trick.
//! * `Mnca`: `K` rules plus a selector network giving per-cell rule
//!   probabilities from the cell's own state.
//! * `MncaNoise`: `Mnca` where each rule also sees one standard-normal input.
//!
//! `(+)` is a residual add when the model is residual, replacement otherwise.

pub(crate) mod backward;
mod step;

use serde::{Deserialize, Serialize};

pub use backward::{backward, mse_loss, record_rollout, BackwardOutput, Gradients, LossNode, Tape};
pub use step::{
    gumbel_softmax, rollout, rule_delta, select_probs, step, step_traced, GumbelSample,
    RuleAssignment, StepTrace, Stepper,
};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Nca,
    Gca,
    Mnca,
    MncaNoise,
}

impl Variant {
    pub fn is_mixture(self) -> bool {
        matches!(self, Variant::Mnca | Variant::MncaNoise)
    }

    pub fn has_noise(self) -> bool {
        self == Variant::MncaNoise
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nca => "nca",
            Variant::Gca => "gca",
            Variant::Mnca => "mnca",
            Variant::MncaNoise => "mnca_noise",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nca" => Ok(Variant::Nca),
            "gca" => Ok(Variant::Gca),
            "mnca" => Ok(Variant::Mnca),
            "mnca_noise" => Ok(Variant::MncaNoise),
            other => Err(Error::config(format!(
                "unknown model variant {other:?} (expected nca, gca, mnca or mnca_noise)"
            ))),
        }
    }
}

/// Per-pixel two-layer update network.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleNet {
    /// `[hidden, 3C]`
    pub w1: Tensor,
    /// `[hidden]`
    pub b1: Tensor,
    /// `[C_out, hidden + noise_dim]`
    pub w2: Tensor,
    /// `[C_out]`
    pub b2: Tensor,
    pub noise_dim: usize,
}

impl RuleNet {
    pub fn zeros(channels: usize, hidden: usize, out: usize, noise_dim: usize) -> Self {
        Self {
            w1: Tensor::zeros(&[hidden, 3 * channels]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[out, hidden + noise_dim]),
            b2: Tensor::zeros(&[out]),
            noise_dim,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn out_channels(&self) -> usize {
        self.b2.len()
    }

    pub fn in_features(&self) -> usize {
        self.w1.shape()[1]
    }
}

/// Rule-probability network; sees only the cell's own state.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorNet {
    /// `[hidden, C]`
    pub v1: Tensor,
    /// `[hidden]`
    pub c1: Tensor,
    /// `[K, hidden]`
    pub v2: Tensor,
    /// `[K]`
    pub c2: Tensor,
}

impl SelectorNet {
    pub fn zeros(channels: usize, hidden: usize, rules: usize) -> Self {
        Self {
            v1: Tensor::zeros(&[hidden, channels]),
            c1: Tensor::zeros(&[hidden]),
            v2: Tensor::zeros(&[rules, hidden]),
            c2: Tensor::zeros(&[rules]),
        }
    }

    pub fn rules(&self) -> usize {
        self.c2.len()
    }

    pub fn hidden(&self) -> usize {
        self.c1.len()
    }
}

/// Architecture description used to build a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub channels: usize,
    pub hidden_dim: usize,
    pub rules: usize,
    pub residual: bool,
    pub dropout: f32,
    /// Start every rule's output layer at zero ("do nothing" initial dynamics).
    #[serde(default)]
    pub zero_init_output: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutomatonModel {
    pub variant: Variant,
    pub channels: usize,
    pub rules: Vec<RuleNet>,
    pub selector: Option<SelectorNet>,
    pub residual: bool,
    pub dropout: f32,
}

/// FNV-1a, used to derive per-tensor initialization streams from names.
fn name_tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

fn init_uniform(t: &mut Tensor, fan_in: usize, rng: &RngStream, name: &str) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let stream = rng.fork(name_tag(name));
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        let u = stream.at(0, i as u64).uniform();
        *v = ((2.0 * u - 1.0) * bound) as f32;
    }
}

impl AutomatonModel {
    /// All-zero weights with the shapes implied by `spec`.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        validate_spec(spec)?;
        let k = if spec.variant.is_mixture() {
            spec.rules
        } else {
            1
        };
        let out = if spec.variant == Variant::Gca {
            2 * spec.channels
        } else {
            spec.channels
        };
        let noise_dim = usize::from(spec.variant.has_noise());
        let rules = (0..k)
            .map(|_| RuleNet::zeros(spec.channels, spec.hidden_dim, out, noise_dim))
            .collect();
        let selector = spec
            .variant
            .is_mixture()
            .then(|| SelectorNet::zeros(spec.channels, spec.hidden_dim, k));
        Ok(Self {
            variant: spec.variant,
            channels: spec.channels,
            rules,
            selector,
            residual: spec.residual,
            dropout: spec.dropout,
        })
    }

    /// Uniform `±1/sqrt(fan_in)` initialization, one independent stream per tensor.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        let rng = RngStream::new(seed);
        for (k, rule) in model.rules.iter_mut().enumerate() {
            let fan1 = rule.in_features();
            let fan2 = rule.hidden() + rule.noise_dim;
            init_uniform(&mut rule.w1, fan1, &rng, &format!("rule{k}.w1"));
            init_uniform(&mut rule.b1, fan1, &rng, &format!("rule{k}.b1"));
            if !spec.zero_init_output {
                init_uniform(&mut rule.w2, fan2, &rng, &format!("rule{k}.w2"));
                init_uniform(&mut rule.b2, fan2, &rng, &format!("rule{k}.b2"));
            }
        }
        if let Some(sel) = model.selector.as_mut() {
            let c = spec.channels;
            let hd = sel.hidden();
            init_uniform(&mut sel.v1, c, &rng, "selector.v1");
            init_uniform(&mut sel.c1, c, &rng, "selector.c1");
            init_uniform(&mut sel.v2, hd, &rng, "selector.v2");
            init_uniform(&mut sel.c2, hd, &rng, "selector.c2");
        }
        Ok(model)
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            variant: self.variant,
            channels: self.channels,
            hidden_dim: self.rules[0].hidden(),
            rules: self.num_rules(),
            residual: self.residual,
            dropout: self.dropout,
            zero_init_output: false,
        }
    }

    pub fn num_rules(&self) -> usize {
        self.rules.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.rules[0].hidden()
    }

    /// Parameters in canonical order: per rule `w1, b1, w2, b2`, then the
    /// selector's `v1, c1, v2, c2`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, r) in self.rules.iter().enumerate() {
            out.push((format!("rule{k}.w1"), &r.w1));
            out.push((format!("rule{k}.b1"), &r.b1));
            out.push((format!("rule{k}.w2"), &r.w2));
            out.push((format!("rule{k}.b2"), &r.b2));
        }
        if let Some(s) = &self.selector {
            out.push(("selector.v1".into(), &s.v1));
            out.push(("selector.c1".into(), &s.c1));
            out.push(("selector.v2".into(), &s.v2));
            out.push(("selector.c2".into(), &s.c2));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for r in self.rules.iter_mut() {
            out.push(&mut r.w1);
            out.push(&mut r.b1);
            out.push(&mut r.w2);
            out.push(&mut r.b2);
        }
        if let Some(s) = self.selector.as_mut() {
            out.push(&mut s.v1);
            out.push(&mut s.c1);
            out.push(&mut s.v2);
            out.push(&mut s.c2);
        }
        out
    }

    /// Flattened copies of all parameters in canonical order.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.named_tensors()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect()
    }

    /// Overwrite parameters from canonical-order tensors.
    pub fn load_tensors(&mut self, values: &[Tensor]) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != values.len() {
            return Err(Error::usage(format!(
                "expected {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::Shape {
                    expected: slot.shape().to_vec(),
                    actual: v.shape().to_vec(),
                });
            }
            slot.data_mut().copy_from_slice(v.data());
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Same architecture, all parameters zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.spec();
        validate_spec(&spec)?;
        if self.variant.is_mixture() != self.selector.is_some() {
            return Err(Error::config(
                "selector must be present exactly for mixture variants",
            ));
        }
        if !self.variant.is_mixture() && self.rules.len() != 1 {
            return Err(Error::config("single-rule variants hold exactly one rule"));
        }
        let out = if self.variant == Variant::Gca {
            2 * self.channels
        } else {
            self.channels
        };
        let noise_dim = usize::from(self.variant.has_noise());
        let hd = self.hidden_dim();
        for r in &self.rules {
            let ok = r.w1.shape() == [hd, 3 * self.channels]
                && r.b1.shape() == [hd]
                && r.w2.shape() == [out, hd + noise_dim]
                && r.b2.shape() == [out]
                && r.noise_dim == noise_dim;
            if !ok {
                return Err(Error::config("rule network shapes are inconsistent"));
            }
        }
        if let Some(s) = &self.selector {
            let ok = s.v1.shape() == [s.hidden(), self.channels]
                && s.v2.shape() == [self.rules.len(), s.hidden()]
                && s.c2.shape() == [self.rules.len()];
            if !ok {
                return Err(Error::config("selector network shapes are inconsistent"));
            }
        }
        Ok(())
    }
}

fn validate_spec(spec: &ModelSpec) -> Result<()> {
    if spec.channels == 0 {
        return Err(Error::config("channels must be >= 1"));
    }
    if spec.hidden_dim == 0 {
        return Err(Error::config("hidden_dim must be >= 1"));
    }
    if spec.rules == 0 {
        return Err(Error::config("rules must be >= 1"));
    }
    if !(0.0..=1.0).contains(&spec.dropout) {
        return Err(Error::config(format!(
            "dropout must lie in [0, 1), got {}",
            spec.dropout
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Draw the rule from the (steered) categorical.
    Sample,
    /// Highest (steered) probability; ties go to the lowest index.
    Argmax,
    /// Probability-weighted average of all rule updates.
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOptions {
    pub selection: SelectionMode,
    /// Per-rule nonnegative multipliers applied to the selector output.
    pub steering: Option<Vec<f32>>,
    /// Gumbel-Softmax rule selection (training) instead of `selection`.
    pub train_mode: bool,
    pub gumbel_temperature: f32,
    /// Straight-through hard Gumbel samples; soft relaxation when false.
    pub straight_through: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            selection: SelectionMode::Sample,
            steering: None,
            train_mode: false,
            gumbel_temperature: 1.0,
            straight_through: true,
        }
    }
}

impl StepOptions {
    pub fn inference() -> Self {
        Self::default()
    }

    pub fn training(temperature: f32) -> Self {
        Self {
            train_mode: true,
            gumbel_temperature: temperature,
            ..Self::default()
        }
    }

    pub fn with_selection(mut self, selection: SelectionMode) -> Self {
        self.selection = selection;
        self
    }

    pub fn with_steering(mut self, multipliers: Vec<f32>) -> Self {
        self.steering = Some(multipliers);
        self
    }

    pub(crate) fn validate(&self, rules: usize) -> Result<()> {
        if self.train_mode && !(self.gumbel_temperature > 0.0) {
            return Err(Error::usage("gumbel temperature must be positive"));
        }
        if let Some(m) = &self.steering {
            if m.len() != rules {
                return Err(Error::usage(format!(
                    "{} steering multipliers for {rules} rules",
                    m.len()
                )));
            }
            if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::usage("steering multipliers must be finite and >= 0"));
            }
            if m.iter().all(|v| *v == 0.0) {
                return Err(Error::usage("steering multipliers are all zero"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(variant: Variant) -> ModelSpec {
        ModelSpec {
            variant,
            channels: 4,
            hidden_dim: 8,
            rules: 3,
            residual: true,
            dropout: 0.0,
            zero_init_output: false,
        }
    }

    #[test]
    fn shapes_per_variant() {
        let m = AutomatonModel::init(&spec(Variant::Gca), 1).unwrap();
        assert_eq!(m.rules.len(), 1);
        assert_eq!(m.rules[0].w2.shape(), [8, 8]);
        assert!(m.selector.is_none());

        let m = AutomatonModel::init(&spec(Variant::MncaNoise), 1).unwrap();
        assert_eq!(m.rules.len(), 3);
        assert_eq!(m.rules[0].w2.shape(), [4, 9]);
        assert_eq!(m.selector.as_ref().unwrap().v2.shape(), [3, 8]);
        m.validate().unwrap();
    }

    #[test]
    fn nca_and_single_rule_mixture_share_rule_init() {
        let mut s = spec(Variant::Nca);
        let nca = AutomatonModel::init(&s, 5).unwrap();
        s.variant = Variant::Mnca;
        s.rules = 1;
        let mix = AutomatonModel::init(&s, 5).unwrap();
        assert_eq!(nca.rules[0], mix.rules[0]);
    }

    #[test]
    fn load_round_trip() {
        let m = AutomatonModel::init(&spec(Variant::Mnca), 3).unwrap();
        let mut z = m.zeros_like();
        z.load_tensors(&m.to_tensors()).unwrap();
        assert_eq!(z, m);
    }

    #[test]
    fn invalid_dropout_rejected() {
        let mut s = spec(Variant::Nca);
        s.dropout = 1.5;
        assert!(AutomatonModel::zeros(&s).is_err());
    }

    #[test]
    fn steering_validation() {
        let o = StepOptions::default().with_steering(vec![0.0, 0.0]);
        assert!(o.validate(2).is_err());
        let o = StepOptions::default().with_steering(vec![1.0, -1.0]);
        assert!(o.validate(2).is_err());
        let o = StepOptions::default().with_steering(vec![0.01, 1.0]);
        assert!(o.validate(2).is_ok());
        assert!(o.validate(3).is_err());
    }
}
