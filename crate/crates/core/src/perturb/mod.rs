//! Damage families applied to grown states and the recovery protocol.

use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean_std, rgba_mse};
use crate::model::{AutomatonModel, StepOptions, Stepper};
use crate::numerics::{RngStream, Tensor};

fn default_sigma() -> f32 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    /// Zero a `side × side` box whose center is a uniformly drawn pixel.
    /// Side 0 leaves the grid untouched.
    Chunk { side: usize },
    /// Add `sigma · N(0,1)` to a random `⌈fraction · H · W⌉` pixels.
    Noise {
        fraction: f64,
        #[serde(default = "default_sigma")]
        sigma: f32,
        /// Only perturb the four RGBA channels.
        #[serde(default)]
        visible_only: bool,
    },
    /// Zero `count` distinct random pixels.
    Sparse { count: usize },
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::Chunk { side } => write!(f, "chunk{side}x{side}"),
            Perturbation::Noise { fraction, .. } => write!(f, "noise{fraction}"),
            Perturbation::Sparse { count } => write!(f, "sparse{count}"),
        }
    }
}

impl Perturbation {
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        match *self {
            Perturbation::Noise {
                fraction, sigma, ..
            } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::config("noise fraction must lie in (0, 1]"));
                }
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(Error::config("noise sigma must be finite and >= 0"));
                }
            }
            Perturbation::Sparse { count } if count > h * w => {
                return Err(Error::config(format!(
                    "sparse count {count} exceeds {} pixels",
                    h * w
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Pixels (row-major indices) touched by a chunk centered at `(cy, cx)`.
pub fn chunk_pixels(h: usize, w: usize, side: usize, cy: usize, cx: usize) -> Vec<usize> {
    if side == 0 {
        return Vec::new();
    }
    let half = (side / 2) as isize;
    let y0 = (cy as isize - half).max(0) as usize;
    let x0 = (cx as isize - half).max(0) as usize;
    let y1 = ((cy as isize - half + side as isize) as usize).min(h);
    let x1 = ((cx as isize - half + side as isize) as usize).min(w);
    (y0..y1)
        .flat_map(|y| (x0..x1).map(move |x| y * w + x))
        .collect()
}

/// Apply a perturbation to a `[C,H,W]` grid (`C ≥ 4`). Draws come from `rng.at(0, 0)`.
pub fn apply_perturbation(grid: &Tensor, p: &Perturbation, rng: &RngStream) -> Result<Tensor> {
    let (c, h, w) = grid.dims3("perturbation grid")?;
    if c < 4 {
        return Err(Error::usage(format!(
            "perturbation needs >= 4 channels, got {c}"
        )));
    }
    p.validate(h, w)?;
    let plane = h * w;
    let mut out = grid.clone();
    let data = out.data_mut();
    let mut r = rng.at(0, 0);
    let zero = |data: &mut [f32], pixels: &[usize]| {
        for &px in pixels {
            for ch in 0..c {
                data[ch * plane + px] = 0.0;
            }
        }
    };
    match *p {
        Perturbation::Chunk { side } => {
            let center = r.gen_range(0..plane);
            zero(data, &chunk_pixels(h, w, side, center / w, center % w));
        }
        Perturbation::Sparse { count } => {
            zero(data, &sample(&mut r, plane, count).into_vec());
        }
        Perturbation::Noise {
            fraction,
            sigma,
            visible_only,
        } => {
            let n = ((fraction * plane as f64).ceil() as usize).min(plane);
            let chans = if visible_only { 4 } else { c };
            for px in sample(&mut r, plane, n).into_vec() {
                for ch in 0..chans {
                    data[ch * plane + px] += sigma * r.normal() as f32;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub perturbation: Perturbation,
    /// Per repeat: MSE against the target at steps `0..=steps`, or `None` if
    /// the rollout diverged.
    pub curves: Vec<Option<Vec<f64>>>,
    pub final_mean: f64,
    /// Half-width of the 95% normal interval at the final step.
    pub final_ci95: f64,
    pub diverged: usize,
}

impl RecoveryResult {
    pub fn final_values(&self) -> Vec<f64> {
        self.curves
            .iter()
            .flatten()
            .map(|c| *c.last().expect("curves are non-empty"))
            .collect()
    }

    /// Long-format curve table: `repeat,step,mse`.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("repeat,step,mse\n");
        for (i, c) in self.curves.iter().enumerate() {
            if let Some(c) = c {
                for (t, v) in c.iter().enumerate() {
                    s.push_str(&format!("{i},{t},{v:.9e}\n"));
                }
            }
        }
        s
    }
}

/// Perturb `repeats` copies of `state` and let the model regrow each for `steps` steps.
///
/// Repeat `i` draws its damage from `rng.fork(i)` and its rollout from
/// `rng.fork(i).fork(1)`. Step 0 of each curve is the damaged state.
#[allow(clippy::too_many_arguments)]
pub fn recovery_experiment(
    model: &AutomatonModel,
    state: &Tensor,
    target: &Tensor,
    p: &Perturbation,
    repeats: usize,
    steps: usize,
    opts: &StepOptions,
    rng: &RngStream,
) -> Result<RecoveryResult> {
    let (c, h, w) = state.dims3("state")?;
    if c != model.channels {
        return Err(Error::Shape {
            expected: vec![model.channels, h, w],
            actual: state.shape().to_vec(),
        });
    }
    if repeats == 0 {
        return Err(Error::usage("recovery needs at least one repeat"));
    }
    // Surface shape problems before spawning work.
    rgba_mse(state, target)?;
    let stepper = Stepper::<f32>::new(model)?;
    let curves = (0..repeats)
        .into_par_iter()
        .map(|i| {
            let stream = rng.fork(i as u64);
            let damaged = apply_perturbation(state, p, &stream)?;
            let roll = stream.fork(1);
            let mut rows = damaged.chw_to_rows();
            let mut curve = Vec::with_capacity(steps + 1);
            curve.push(rgba_mse(&damaged, target)?);
            for t in 0..steps {
                match stepper.step_rows(&rows, h, w, opts, &roll, t as u64, false) {
                    Ok((next, _)) => rows = next,
                    Err(Error::Divergence { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
                curve.push(rgba_mse(&Tensor::from_rows(&rows, c, h, w), target)?);
            }
            Ok(Some(curve))
        })
        .collect::<Result<Vec<_>>>()?;
    let diverged = curves.iter().filter(|c| c.is_none()).count();
    let mut result = RecoveryResult {
        perturbation: *p,
        curves,
        final_mean: f64::NAN,
        final_ci95: f64::NAN,
        diverged,
    };
    let finals = result.final_values();
    if !finals.is_empty() {
        let (mean, sd) = mean_std(&finals);
        result.final_mean = mean;
        result.final_ci95 = 1.96 * sd / (finals.len() as f64).sqrt();
    }
    Ok(result)
}

/// Table rows: `model,perturbation,mean,ci95,completed,diverged`.
pub fn summary_csv(rows: &[(String, RecoveryResult)]) -> String {
    let mut s = String::from("model,perturbation,mean,ci95,completed,diverged\n");
    for (name, r) in rows {
        s.push_str(&format!(
            "{name},{},{:.9e},{:.9e},{},{}\n",
            r.perturbation,
            r.final_mean,
            r.final_ci95,
            r.curves.len() - r.diverged,
            r.diverged
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        let n = c * h * w;
        Tensor::from_vec(&[c, h, w], (0..n).map(|i| 1.0 + i as f32).collect()).unwrap()
    }

    #[test]
    fn chunk_geometry() {
        assert_eq!(chunk_pixels(10, 10, 3, 5, 5).len(), 9);
        assert_eq!(chunk_pixels(10, 10, 5, 0, 0).len(), 9);
        assert_eq!(chunk_pixels(4, 6, 12, 2, 3).len(), 24);
        assert!(chunk_pixels(4, 4, 0, 1, 1).is_empty());
    }

    #[test]
    fn huge_chunk_clears_grid() {
        let g = ramp(5, 4, 6);
        let out =
            apply_perturbation(&g, &Perturbation::Chunk { side: 12 }, &RngStream::new(1)).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sparse_exact_count() {
        let g = ramp(4, 8, 8);
        let out = apply_perturbation(&g, &Perturbation::Sparse { count: 20 }, &RngStream::new(3))
            .unwrap();
        let zeroed = (0..64).filter(|&p| out.data()[p] == 0.0).count();
        assert_eq!(zeroed, 20);
        assert!(
            apply_perturbation(&g, &Perturbation::Sparse { count: 65 }, &RngStream::new(3))
                .is_err()
        );
    }

    #[test]
    fn full_noise_touches_every_pixel() {
        let g = ramp(4, 3, 3);
        let p = Perturbation::Noise {
            fraction: 1.0,
            sigma: 1.0,
            visible_only: false,
        };
        let out = apply_perturbation(&g, &p, &RngStream::new(9)).unwrap();
        assert!(out.data().iter().zip(g.data()).all(|(a, b)| a != b));
    }
}
