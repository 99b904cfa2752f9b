use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{select_probs, AutomatonModel};
use crate::numerics::{RngStream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit first.
    pub converged: bool,
}

/// Largest singular value of a row-major `rows × cols` matrix by power
/// iteration on `MᵀM`, in f64. Stops when successive estimates differ by
/// less than `tol` relative to the current one.
pub fn spectral_norm_raw(
    m: &[f64],
    rows: usize,
    cols: usize,
    iters: usize,
    tol: f64,
) -> SpectralEstimate {
    assert_eq!(m.len(), rows * cols);
    if m.iter().all(|v| *v == 0.0) {
        return SpectralEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    // Fixed pseudo-random start so no singular direction is missed by symmetry.
    let mut r = RngStream::new(0x5eed).at(0, 0);
    let mut v: Vec<f64> = (0..cols).map(|_| r.uniform() + 0.5).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n0 = norm(&v);
    v.iter_mut().for_each(|a| *a /= n0);
    let mut mv = vec![0.0; rows];
    let mut prev = 0.0;
    for it in 1..=iters {
        for i in 0..rows {
            mv[i] = (0..cols).map(|j| m[i * cols + j] * v[j]).sum();
        }
        let sigma = norm(&mv);
        if sigma == 0.0 {
            // Start vector in the null space: restart along the first nonzero row.
            let i = (0..rows)
                .find(|&i| m[i * cols..(i + 1) * cols].iter().any(|x| *x != 0.0))
                .unwrap();
            v.copy_from_slice(&m[i * cols..(i + 1) * cols]);
            let n = norm(&v);
            v.iter_mut().for_each(|a| *a /= n);
            continue;
        }
        for j in 0..cols {
            v[j] = (0..rows).map(|i| m[i * cols + j] * mv[i]).sum();
        }
        let n = norm(&v);
        v.iter_mut().for_each(|a| *a /= n);
        if (sigma - prev).abs() <= tol * sigma {
            return SpectralEstimate {
                value: sigma,
                iterations: it,
                converged: true,
            };
        }
        prev = sigma;
    }
    log::warn!("spectral_norm: no convergence after {iters} iterations");
    SpectralEstimate {
        value: prev,
        iterations: iters,
        converged: false,
    }
}

/// [`spectral_norm_raw`] for a 2-D tensor.
pub fn spectral_norm(m: &Tensor, iters: usize, tol: f64) -> Result<SpectralEstimate> {
    let (rows, cols) = m.dims2("spectral_norm")?;
    if rows == 0 || cols == 0 {
        return Err(Error::usage("spectral_norm: empty matrix"));
    }
    let data: Vec<f64> = m.data().iter().map(|v| f64::from(*v)).collect();
    Ok(spectral_norm_raw(&data, rows, cols, iters, tol))
}

const ITERS: usize = 20_000;
const TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// `σ(W1)·σ(W2)` per rule, `W2` restricted to its hidden-unit columns.
    pub rule_bounds: Vec<f64>,
    /// Spatially averaged selector probabilities (uniform without a state).
    pub weights: Vec<f64>,
    pub mixture_bound: f64,
    /// Operator-norm bound of the fixed perception stage, kept separate.
    pub perception_gain: f64,
    pub all_converged: bool,
}

impl LipschitzReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rule,weight,bound\n");
        for (k, (w, b)) in self.weights.iter().zip(&self.rule_bounds).enumerate() {
            s.push_str(&format!("{k},{w:.9e},{b:.9e}\n"));
        }
        s.push_str(&format!("mixture,1,{:.9e}\n", self.mixture_bound));
        s.push_str(&format!("perception,,{:.9e}\n", self.perception_gain));
        s
    }
}

/// Per-rule bound and the mixture average weighted by mean selector output at
/// `state`. Mixtures without a state use uniform weights.
pub fn lipschitz_report(model: &AutomatonModel, state: Option<&Tensor>) -> Result<LipschitzReport> {
    let mut all_converged = true;
    let mut rule_bounds = Vec::with_capacity(model.rules.len());
    for rule in &model.rules {
        let s1 = spectral_norm(&rule.w1, ITERS, TOL)?;
        let (rows, cols) = rule.w2.dims2("w2")?;
        let hidden = cols - rule.noise_dim;
        let w2: Vec<f64> = (0..rows)
            .flat_map(|i| (0..hidden).map(move |j| (i, j)))
            .map(|(i, j)| f64::from(rule.w2.data()[i * cols + j]))
            .collect();
        let s2 = spectral_norm_raw(&w2, rows, hidden, ITERS, TOL);
        all_converged &= s1.converged && s2.converged;
        rule_bounds.push(s1.value * s2.value);
    }
    let k = rule_bounds.len();
    let weights: Vec<f64> = match (&model.selector, state) {
        (Some(sel), Some(s)) => {
            let p = select_probs(sel, s, None)?;
            let plane = p.len() / k;
            (0..k)
                .map(|r| {
                    p.data()[r * plane..(r + 1) * plane]
                        .iter()
                        .map(|v| f64::from(*v))
                        .sum::<f64>()
                        / plane as f64
                })
                .collect()
        }
        _ => vec![1.0 / k as f64; k],
    };
    let mixture_bound = weights.iter().zip(&rule_bounds).map(|(w, b)| w * b).sum();
    Ok(LipschitzReport {
        rule_bounds,
        weights,
        mixture_bound,
        perception_gain: perception_gain(),
        all_converged,
    })
}

/// Upper bound on the l2 gain of the per-channel perception map
/// `x ↦ (x, Sobel_x x, Sobel_y x)`: the maximum over frequencies of
/// `sqrt(1 + |Ŝx|² + |Ŝy|²)`, scanned on a fine grid.
pub fn perception_gain() -> f64 {
    let n = 512;
    let mut best: f64 = 0.0;
    for i in 0..=n {
        let a = std::f64::consts::PI * i as f64 / n as f64;
        for j in 0..=n {
            let b = std::f64::consts::PI * j as f64 / n as f64;
            let sx = 2.0 * a.sin() * (2.0 + 2.0 * b.cos());
            let sy = 2.0 * b.sin() * (2.0 + 2.0 * a.cos());
            best = best.max(1.0 + sx * sx + sy * sy);
        }
    }
    best.sqrt()
}
