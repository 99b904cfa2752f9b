//! Experiment configuration files (TOML).
//!
//! Model and optimizer fields sit at the top level under their usual names
//! (`channels`, `hidden_dim`, `rules`, `learning_rate`, `epochs`, `residual`,
//! `dropout`, `milestones`, `gamma`, `filters`). Remaining training knobs live
//! in `[training]`; each experiment family has its own optional block.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abc::{AbcConfig, Epsilon, SummaryKind};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Variant};
use crate::perturb::Perturbation;
use crate::tissuesim::{default_params, minimal_params, SimParams};
use crate::training::{Readout, TrainConfig};

pub const PERCEPTION_FILTERS: [&str; 3] = ["identity", "sobel_x", "sobel_y"];

fn default_filters() -> Vec<String> {
    PERCEPTION_FILTERS.iter().map(|s| s.to_string()).collect()
}

fn default_gamma() -> f64 {
    1.0
}

fn default_one() -> usize {
    1
}

fn default_grad_eps() -> f64 {
    1e-8
}

fn default_temperature() -> f32 {
    1.0
}

fn default_true() -> bool {
    true
}

/// Training knobs not covered by the top-level fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub pool_size: usize,
    #[serde(default = "default_one")]
    pub window: usize,
    #[serde(default = "default_one")]
    pub tau: usize,
    #[serde(default)]
    pub n_min: usize,
    #[serde(default)]
    pub n_max: usize,
    #[serde(default = "default_grad_eps")]
    pub grad_eps: f64,
    #[serde(default = "default_temperature")]
    pub gumbel_temperature: f32,
    #[serde(default = "default_true")]
    pub straight_through: bool,
    #[serde(default)]
    pub zero_init_output: bool,
}

fn default_batch() -> usize {
    8
}

impl Default for TrainingBlock {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimPreset {
    #[default]
    Default,
    Minimal,
}

/// Tissue cohort source and size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueBlock {
    #[serde(default)]
    pub preset: SimPreset,
    /// Full parameter override; takes precedence over `preset`.
    #[serde(default)]
    pub params: Option<SimParams>,
    pub realizations: usize,
    #[serde(default)]
    pub grid_size: Option<usize>,
    #[serde(default)]
    pub steps: Option<usize>,
    /// Existing cohort file instead of simulating one.
    #[serde(default)]
    pub cohort: Option<PathBuf>,
    /// How generated tissues are read out of the model state.
    #[serde(default)]
    pub readout: Readout,
}

impl TissueBlock {
    pub fn sim_params(&self) -> SimParams {
        let mut p = self.params.clone().unwrap_or_else(|| match self.preset {
            SimPreset::Default => default_params(),
            SimPreset::Minimal => minimal_params(),
        });
        if let Some(n) = self.grid_size {
            p.grid_size = n;
        }
        if let Some(t) = self.steps {
            p.steps = t;
        }
        p
    }
}

/// Single-image growth target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageBlock {
    pub path: PathBuf,
    pub size: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default)]
    pub pad_value: f32,
    #[serde(default = "default_true")]
    pub premultiply: bool,
    #[serde(default)]
    pub seed_y: Option<usize>,
    #[serde(default)]
    pub seed_x: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbBlock {
    pub perturbations: Vec<Perturbation>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_recovery")]
    pub steps: usize,
    /// Growth steps from the seed before damage.
    #[serde(default = "default_recovery")]
    pub grow_steps: usize,
}

fn default_repeats() -> usize {
    50
}

fn default_recovery() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub rule_counts: Vec<usize>,
    #[serde(default = "default_one")]
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub channels: usize,
    pub hidden_dim: usize,
    #[serde(default = "default_one")]
    pub rules: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub residual: bool,
    #[serde(default)]
    pub dropout: f32,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_filters")]
    pub filters: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub training: TrainingBlock,
    #[serde(default)]
    pub tissue: Option<TissueBlock>,
    #[serde(default)]
    pub image: Option<ImageBlock>,
    #[serde(default)]
    pub abc: Option<AbcConfig>,
    #[serde(default)]
    pub perturb: Option<PerturbBlock>,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters != default_filters() {
            return Err(Error::config(format!(
                "filters must be {PERCEPTION_FILTERS:?}, got {:?}",
                self.filters
            )));
        }
        if !self.variant.is_mixture() && self.rules != 1 {
            return Err(Error::config(format!(
                "variant {} uses a single rule, rules = {}",
                self.variant, self.rules
            )));
        }
        if self.tissue.is_some() && self.image.is_some() {
            return Err(Error::config(
                "choose either a [tissue] or an [image] block, not both",
            ));
        }
        if let Some(t) = &self.tissue {
            if t.realizations == 0 && t.cohort.is_none() {
                return Err(Error::config("tissue.realizations must be >= 1"));
            }
            t.sim_params().validate()?;
        }
        if let Some(i) = &self.image {
            if i.size == 0 {
                return Err(Error::config("image.size must be >= 1"));
            }
        }
        if let Some(a) = &self.abc {
            a.validate()?;
        }
        crate::model::AutomatonModel::zeros(&self.model_spec())?;
        self.train_config(0).validate()
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            variant: self.variant,
            channels: self.channels,
            hidden_dim: self.hidden_dim,
            rules: self.rules,
            residual: self.residual,
            dropout: self.dropout,
            zero_init_output: self.training.zero_init_output,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            milestones: self.milestones.clone(),
            gamma: self.gamma,
            batch_size: t.batch_size,
            pool_size: t.pool_size,
            window: t.window,
            tau: t.tau,
            n_min: t.n_min,
            n_max: t.n_max,
            seed,
            grad_eps: t.grad_eps,
            gumbel_temperature: t.gumbel_temperature,
            straight_through: t.straight_through,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Built-in configurations for the three experiment families.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = match name {
        "tissue" => TISSUE_PRESET,
        "emoji" => EMOJI_PRESET,
        "microscopy" => MICROSCOPY_PRESET,
        _ => {
            return Err(Error::config(format!(
                "unknown preset {name:?} (tissue, emoji, microscopy)"
            )))
        }
    };
    ExperimentConfig::from_toml(text)
}

pub const TISSUE_PRESET: &str = r#"
variant = "mnca"
channels = 6
hidden_dim = 128
rules = 5
learning_rate = 1e-3
epochs = 800
residual = false
dropout = 0.0
milestones = [500]
gamma = 0.1

[training]
batch_size = 8
window = 35
tau = 1

[tissue]
preset = "default"
realizations = 200
"#;

pub const EMOJI_PRESET: &str = r#"
variant = "mnca_noise"
channels = 16
hidden_dim = 128
rules = 6
learning_rate = 1e-3
epochs = 8000
residual = true
dropout = 0.1
milestones = [4000, 6000, 7000]
gamma = 0.1

[training]
batch_size = 8
pool_size = 1000
n_min = 30
n_max = 50

[image]
path = "target.png"
size = 40
pad = 6
"#;

pub const MICROSCOPY_PRESET: &str = r#"
variant = "mnca"
channels = 24
hidden_dim = 128
rules = 5
learning_rate = 1e-3
epochs = 8000
residual = true
dropout = 0.2
milestones = [5000, 6000, 7000]
gamma = 0.2

[training]
batch_size = 8
pool_size = 1000
n_min = 30
n_max = 50
"#;

/// Default ABC block used when a config asks for ABC without details.
pub fn default_abc() -> AbcConfig {
    AbcConfig {
        particles: 500,
        epsilon: Epsilon::Quantile(0.1),
        kind: SummaryKind::Proportions,
        prior: Default::default(),
        realizations_per_particle: 1,
        proportion_metric: Default::default(),
    }
}
