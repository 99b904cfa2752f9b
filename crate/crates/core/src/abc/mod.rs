//! Rejection ABC over simulator parameters.

mod summary;

pub use summary::{
    abc_distance, summarize, summary_correlation, summary_neighborhood, summary_proportions,
    NeighborhoodHistogram, ProportionMetric, Summary, SummaryKind,
};

use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::tissuesim::{init_grid, simulate, SimParams, TissueCohort, NUM_TYPES};

/// How the second Gamma parameter is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaReading {
    /// `Gamma(k, θ)` with mean `kθ`.
    #[default]
    Scale,
    /// `Gamma(k, β)` with mean `k/β`.
    Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub shape: f64,
    pub b: f64,
    pub d: f64,
    pub s: f64,
    pub diff: f64,
    pub interaction_mean: f64,
    pub interaction_std: f64,
    #[serde(default)]
    pub reading: GammaReading,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            shape: 1.0,
            b: 0.1,
            d: 0.01,
            s: 0.1,
            diff: 0.1,
            interaction_mean: 0.0,
            interaction_std: 1.0,
            reading: GammaReading::Scale,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.shape, self.b, self.d, self.s, self.diff];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("Gamma prior parameters must be positive"));
        }
        if !(self.interaction_std.is_finite() && self.interaction_std >= 0.0)
            || !self.interaction_mean.is_finite()
        {
            return Err(Error::config(
                "interaction prior must have finite mean and std >= 0",
            ));
        }
        Ok(())
    }

    fn gamma(&self, theta: f64) -> Gamma<f64> {
        let scale = match self.reading {
            GammaReading::Scale => theta,
            GammaReading::Rate => 1.0 / theta,
        };
        Gamma::new(self.shape, scale).expect("validated prior")
    }
}

/// Draw rates and matrices from the prior; grid geometry comes from `base`.
pub fn sample_prior(spec: &PriorSpec, base: &SimParams, rng: &RngStream) -> Result<SimParams> {
    spec.validate()?;
    let mut r = rng.at(0, 0);
    let mut p = base.clone();
    let (gb, gd, gs, gdiff) = (
        spec.gamma(spec.b),
        spec.gamma(spec.d),
        spec.gamma(spec.s),
        spec.gamma(spec.diff),
    );
    let normal = Normal::new(spec.interaction_mean, spec.interaction_std)
        .map_err(|e| Error::config(format!("interaction prior: {e}")))?;
    for i in 0..NUM_TYPES {
        p.b[i] = gb.sample(&mut r);
    }
    for i in 0..NUM_TYPES {
        p.d[i] = gd.sample(&mut r);
    }
    for i in 0..NUM_TYPES {
        p.s[i] = gs.sample(&mut r);
    }
    for row in p.diff.iter_mut() {
        for v in row.iter_mut() {
            *v = gdiff.sample(&mut r);
        }
    }
    for row in p.interaction.iter_mut() {
        for v in row.iter_mut() {
            *v = normal.sample(&mut r);
        }
    }
    Ok(p)
}

/// Fixed tolerance, or the given quantile of all particle distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epsilon {
    Fixed(f64),
    Quantile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcConfig {
    pub particles: usize,
    pub epsilon: Epsilon,
    pub kind: SummaryKind,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default = "one")]
    pub realizations_per_particle: usize,
    #[serde(default)]
    pub proportion_metric: ProportionMetric,
}

fn one() -> usize {
    1
}

impl AbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::config("particles must be >= 1"));
        }
        if self.realizations_per_particle == 0 {
            return Err(Error::config("realizations_per_particle must be >= 1"));
        }
        match self.epsilon {
            Epsilon::Fixed(e) if !(e > 0.0) => Err(Error::config("epsilon must be > 0")),
            Epsilon::Quantile(q) if !(q > 0.0 && q <= 1.0) => {
                Err(Error::config("epsilon quantile must lie in (0, 1]"))
            }
            _ => self.prior.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Particle {
    pub params: SimParams,
    pub distance: f64,
    pub accepted: bool,
    /// Normalized over the accepted set; zero for rejected particles.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbcResult {
    pub posterior: SimParams,
    pub particles: Vec<Particle>,
    pub epsilon: f64,
    pub acceptance_rate: f64,
}

/// `w_i ∝ 1/δ_i`. Zero distances take all the mass, shared equally.
pub fn distance_weights(distances: &[f64]) -> Vec<f64> {
    let zeros = distances.iter().filter(|d| **d == 0.0).count();
    let raw: Vec<f64> = if zeros > 0 {
        distances.iter().map(|d| f64::from(*d == 0.0)).collect()
    } else {
        distances.iter().map(|d| 1.0 / d).collect()
    };
    let z: f64 = raw.iter().sum();
    raw.iter().map(|w| w / z).collect()
}

/// Component-wise weighted mean of the rates and matrices.
pub fn weighted_mean(particles: &[(&SimParams, f64)], base: &SimParams) -> SimParams {
    let mut out = base.clone();
    out.b = [0.0; NUM_TYPES];
    out.d = [0.0; NUM_TYPES];
    out.s = [0.0; NUM_TYPES];
    out.diff = [[0.0; NUM_TYPES]; NUM_TYPES];
    out.interaction = [[0.0; NUM_TYPES]; NUM_TYPES];
    for (p, w) in particles {
        for i in 0..NUM_TYPES {
            out.b[i] += w * p.b[i];
            out.d[i] += w * p.d[i];
            out.s[i] += w * p.s[i];
            for j in 0..NUM_TYPES {
                out.diff[i][j] += w * p.diff[i][j];
                out.interaction[i][j] += w * p.interaction[i][j];
            }
        }
    }
    out
}

fn simulate_cohort(params: &SimParams, count: usize, rng: &RngStream) -> Result<TissueCohort> {
    let runs = (0..count)
        .map(|r| {
            let s = rng.fork(r as u64);
            Ok(simulate(init_grid(params, &s)?, params, &s, params.steps))
        })
        .collect::<Result<Vec<_>>>()?;
    TissueCohort::new(runs)
}

/// Rejection ABC against an observed cohort.
///
/// Particle `i` samples its parameters and simulations from `rng.fork(i)`.
/// Grid size and step count follow the observed cohort; the stem-count range
/// and interaction semantics come from `base`.
pub fn abc_run(
    observed: &TissueCohort,
    base: &SimParams,
    config: &AbcConfig,
    rng: &RngStream,
) -> Result<AbcResult> {
    config.validate()?;
    let mut base = base.clone();
    base.grid_size = observed.grid_size();
    base.steps = observed.steps();
    base.validate()?;
    let target = summarize(observed, config.kind);
    let scored: Vec<(SimParams, f64)> = (0..config.particles)
        .into_par_iter()
        .map(|i| {
            let stream = rng.fork(i as u64);
            let params = sample_prior(&config.prior, &base, &stream)?;
            let cohort =
                simulate_cohort(&params, config.realizations_per_particle, &stream.fork(1))?;
            let dist = abc_distance(
                &summarize(&cohort, config.kind),
                &target,
                config.proportion_metric,
            )?;
            Ok((params, dist))
        })
        .collect::<Result<Vec<_>>>()?;

    let epsilon = match config.epsilon {
        Epsilon::Fixed(e) => e,
        Epsilon::Quantile(q) => {
            let mut d: Vec<f64> = scored.iter().map(|(_, d)| *d).collect();
            d.sort_by(f64::total_cmp);
            let k = ((q * d.len() as f64).ceil() as usize).clamp(1, d.len());
            d[k - 1].next_up()
        }
    };
    let accepted: Vec<usize> = (0..scored.len())
        .filter(|&i| scored[i].1 < epsilon)
        .collect();
    if accepted.is_empty() {
        let min = scored.iter().map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
        return Err(Error::usage(format!(
            "no particle accepted at epsilon {epsilon}; smallest distance was {min}"
        )));
    }
    let weights = distance_weights(&accepted.iter().map(|&i| scored[i].1).collect::<Vec<_>>());
    let mut particles: Vec<Particle> = scored
        .into_iter()
        .map(|(params, distance)| Particle {
            params,
            distance,
            accepted: false,
            weight: 0.0,
        })
        .collect();
    for (&i, &w) in accepted.iter().zip(&weights) {
        particles[i].accepted = true;
        particles[i].weight = w;
    }
    let posterior = weighted_mean(
        &particles
            .iter()
            .filter(|p| p.accepted)
            .map(|p| (&p.params, p.weight))
            .collect::<Vec<_>>(),
        &base,
    );
    Ok(AbcResult {
        posterior,
        acceptance_rate: accepted.len() as f64 / particles.len() as f64,
        particles,
        epsilon,
    })
}

fn param_header() -> Vec<String> {
    let mut h = Vec::new();
    for name in ["b", "d", "s"] {
        h.extend((0..NUM_TYPES).map(|i| format!("{name}{i}")));
    }
    for name in ["D", "I"] {
        for i in 0..NUM_TYPES {
            h.extend((0..NUM_TYPES).map(|j| format!("{name}{i}{j}")));
        }
    }
    h
}

fn param_values(p: &SimParams) -> Vec<f64> {
    let mut v: Vec<f64> = p.b.iter().chain(&p.d).chain(&p.s).copied().collect();
    v.extend(p.diff.iter().flatten());
    v.extend(p.interaction.iter().flatten());
    v
}

pub fn particles_csv(result: &AbcResult) -> String {
    let mut s = format!(
        "index,{},distance,accepted,weight\n",
        param_header().join(",")
    );
    for (i, p) in result.particles.iter().enumerate() {
        let vals: Vec<String> = param_values(&p.params)
            .iter()
            .map(|v| format!("{v:.9e}"))
            .collect();
        s.push_str(&format!(
            "{i},{},{:.9e},{},{:.9e}\n",
            vals.join(","),
            p.distance,
            u8::from(p.accepted),
            p.weight
        ));
    }
    s
}

pub fn write_particles_csv(path: impl AsRef<Path>, result: &AbcResult) -> Result<()> {
    let path = path.as_ref();
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(particles_csv(result).as_bytes()))
        .map_err(|e| Error::io(path, e))
}
