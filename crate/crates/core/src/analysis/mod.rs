//! Rule-assignment maps, spectral Lipschitz bounds, noise partitioning and
//! the rule-count sweep.

mod spectral;
mod sweep;

pub use spectral::{
    lipschitz_report, perception_gain, spectral_norm, spectral_norm_raw, LipschitzReport,
    SpectralEstimate,
};
pub use sweep::{rules_sweep, sweep_csv, sweep_summary, SweepConfig, SweepRow};

use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{select_probs, AutomatonModel, SelectionMode, StepOptions, Stepper, Variant};
use crate::numerics::{RngStream, Tensor};
use crate::tissuesim::CellGrid;

/// Selector probabilities at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleMap {
    /// `[K,H,W]`
    pub probs: Tensor,
    /// Row-major most probable rule (lowest index on ties).
    pub argmax: Vec<u16>,
}

pub fn rule_map(
    model: &AutomatonModel,
    grid: &Tensor,
    steering: Option<&[f32]>,
) -> Result<RuleMap> {
    let selector = model.selector.as_ref().ok_or_else(|| {
        Error::usage(format!(
            "rule_map needs a mixture model, got {}",
            model.variant
        ))
    })?;
    let probs = select_probs(selector, grid, steering)?;
    let (k, h, w) = probs.dims3("rule map")?;
    let plane = h * w;
    let argmax = (0..plane)
        .map(|p| {
            let mut best = 0;
            for r in 1..k {
                if probs.data()[r * plane + p] > probs.data()[best * plane + p] {
                    best = r;
                }
            }
            best as u16
        })
        .collect();
    Ok(RuleMap { probs, argmax })
}

/// For each label present in `labels`: `(label, modal rule, share of that
/// label's pixels whose argmax is the modal rule)`.
pub fn modal_rule_share(map: &RuleMap, labels: &CellGrid, rules: usize) -> Vec<(u8, usize, f64)> {
    let mut counts = std::collections::BTreeMap::<u8, Vec<usize>>::new();
    for (&lab, &r) in labels.cells().iter().zip(&map.argmax) {
        counts.entry(lab).or_insert_with(|| vec![0; rules])[r as usize] += 1;
    }
    counts
        .into_iter()
        .map(|(lab, c)| {
            let total: usize = c.iter().sum();
            let (best, n) = c
                .iter()
                .enumerate()
                .fold((0, 0), |acc, (i, &n)| if n > acc.1 { (i, n) } else { acc });
            (lab, best, n as f64 / total as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub draw: usize,
    pub pixel: usize,
    pub noise: f32,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePartition {
    pub classes: usize,
    pub records: Vec<NoiseRecord>,
}

impl NoisePartition {
    pub fn class_frequencies(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.classes];
        for r in &self.records {
            f[r.class] += 1.0;
        }
        let n = self.records.len() as f64;
        f.iter_mut().for_each(|v| *v /= n);
        f
    }

    /// Mean injected noise per class (NaN for empty classes).
    pub fn class_noise_means(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.classes];
        let mut n = vec![0usize; self.classes];
        for r in &self.records {
            s[r.class] += f64::from(r.noise);
            n[r.class] += 1;
        }
        s.iter().zip(&n).map(|(s, &n)| s / n as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("draw,pixel,noise,class\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{:.9e},{}\n",
                r.draw, r.pixel, r.noise, r.class
            ));
        }
        s
    }
}

/// Repeat one step from the same state `n_draws` times with argmax rule
/// selection. Draw `d` uses step index `d` of `rng`. For every listed pixel the
/// injected noise and the argmax over `class_channels` of the next state are
/// recorded.
pub fn noise_partition(
    model: &AutomatonModel,
    state: &Tensor,
    pixels: &[usize],
    class_channels: Range<usize>,
    n_draws: usize,
    rng: &RngStream,
) -> Result<NoisePartition> {
    if !model.variant.has_noise() || model.variant == Variant::Gca {
        return Err(Error::usage(format!(
            "noise_partition needs a model with intrinsic noise, got {}",
            model.variant
        )));
    }
    let (c, h, w) = state.dims3("state")?;
    if class_channels.is_empty() || class_channels.end > c {
        return Err(Error::usage(format!(
            "class channels {class_channels:?} out of range"
        )));
    }
    if let Some(p) = pixels.iter().find(|&&p| p >= h * w) {
        return Err(Error::usage(format!("pixel {p} outside a {h}x{w} grid")));
    }
    let stepper = Stepper::<f32>::new(model)?;
    let opts = StepOptions::inference().with_selection(SelectionMode::Argmax);
    let rows = state.chw_to_rows();
    let mut records = Vec::with_capacity(n_draws * pixels.len());
    for d in 0..n_draws {
        let (next, tr) = stepper.step_rows(&rows, h, w, &opts, rng, d as u64, false)?;
        for &p in pixels {
            let cell = &next[p * c..(p + 1) * c];
            let mut best = class_channels.start;
            for ch in class_channels.clone() {
                if cell[ch] > cell[best] {
                    best = ch;
                }
            }
            records.push(NoiseRecord {
                draw: d,
                pixel: p,
                noise: tr.noise[p],
                class: best - class_channels.start,
            });
        }
    }
    Ok(NoisePartition {
        classes: class_channels.len(),
        records,
    })
}

/// Between-class sum of squares of `values` grouped by `labels`.
fn between_ss(values: &[f64], labels: &[usize], classes: usize) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut s = vec![0.0; classes];
    let mut m = vec![0usize; classes];
    for (&v, &l) in values.iter().zip(labels) {
        s[l] += v;
        m[l] += 1;
    }
    s.iter()
        .zip(&m)
        .filter(|(_, &m)| m > 0)
        .map(|(s, &m)| {
            let d = s / m as f64 - mean;
            m as f64 * d * d
        })
        .sum()
}

/// Permutation test for dependence between injected noise and outcome class.
/// Statistic: between-class sum of squares of the noise. Returns
/// `(statistic, p-value)` with `p = (1 + #{perm ≥ observed}) / (1 + n_perm)`.
pub fn noise_permutation_test(part: &NoisePartition, n_perm: usize, rng: &RngStream) -> (f64, f64) {
    let values: Vec<f64> = part.records.iter().map(|r| f64::from(r.noise)).collect();
    let mut labels: Vec<usize> = part.records.iter().map(|r| r.class).collect();
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let observed = between_ss(&values, &labels, part.classes);
    let mut r = rng.at(0, 0);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        labels.shuffle(&mut r);
        if between_ss(&values, &labels, part.classes) >= observed {
            hits += 1;
        }
    }
    (observed, (1 + hits) as f64 / (1 + n_perm) as f64)
}
