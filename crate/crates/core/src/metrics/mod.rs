//! Cohort comparison metrics and RGBA reconstruction error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tissuesim::{CellGrid, TissueCohort, NUM_LABELS, NUM_TYPES};

/// Additive smoothing applied to the generated-side proportions.
pub const KL_SMOOTHING: f64 = 1e-9;
pub const BORDER_THRESHOLD: f64 = 0.1;

/// Proportions of the five non-empty types over the final grids of a cohort.
/// All zeros if the cohort has no occupied cells.
pub fn type_proportions(cohort: &TissueCohort) -> [f64; NUM_TYPES] {
    let mut counts = [0u64; NUM_TYPES];
    for g in cohort.final_grids() {
        for &v in g.cells() {
            if v > 0 {
                counts[v as usize - 1] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    let mut p = [0.0; NUM_TYPES];
    if total > 0 {
        for i in 0..NUM_TYPES {
            p[i] = counts[i] as f64 / total as f64;
        }
    }
    p
}

/// `Σ P ln(P/Q)`; terms with `P = 0` contribute nothing. When `Q` misses a
/// type that `P` has, `Q` is smoothed by [`KL_SMOOTHING`] and renormalized.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let needs_smoothing = p.iter().zip(q).any(|(pi, qi)| *pi > 0.0 && *qi <= 0.0);
    let eps = if needs_smoothing { KL_SMOOTHING } else { 0.0 };
    let qs: Vec<f64> = q.iter().map(|v| v + eps).collect();
    let z: f64 = qs.iter().sum();
    p.iter()
        .zip(&qs)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / (qi / z)).ln())
        .sum()
}

/// KL divergence of the generated cohort's type proportions from the real one's.
pub fn kl_proportions(real: &TissueCohort, generated: &TissueCohort) -> f64 {
    kl_divergence(&type_proportions(real), &type_proportions(generated))
}

/// Exact 1-Wasserstein distance between two empirical distributions:
/// `∫ |F_u − F_v|`, evaluated between consecutive pooled sample values.
pub fn wasserstein1(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.is_empty() || v.is_empty() {
        return Err(Error::usage("wasserstein1: empty sample"));
    }
    let mut a = u.to_vec();
    let mut b = v.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut total = 0.0;
    for w in pooled.windows(2) {
        let x = w[0];
        while ia < a.len() && a[ia] <= x {
            ia += 1;
        }
        while ib < b.len() && b[ib] <= x {
            ib += 1;
        }
        total += (ia as f64 / na - ib as f64 / nb).abs() * (w[1] - w[0]);
    }
    Ok(total)
}

pub fn tissue_size(grid: &CellGrid) -> usize {
    grid.occupied()
}

/// Number of sites where the normalized Laplacian of the occupancy mask
/// (zero padded) exceeds [`BORDER_THRESHOLD`] in magnitude.
pub fn border_complexity(grid: &CellGrid) -> usize {
    let n = grid.size();
    let m = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= n as isize || x >= n as isize {
            0.0
        } else {
            f64::from(grid.cells()[y as usize * n + x as usize] != 0)
        }
    };
    let mut count = 0;
    for y in 0..n as isize {
        for x in 0..n as isize {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dy != 0 || dx != 0 {
                        s += m(y + dy, x + dx);
                    }
                }
            }
            let lap = (8.0 * m(y, x) - s) / 8.0;
            if lap.abs() > BORDER_THRESHOLD {
                count += 1;
            }
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kl_div: f64,
    pub size_w: f64,
    pub border_w: f64,
}

/// KL on type proportions plus W1 on size and border-complexity
/// distributions, all on each realization's final grid.
pub fn evaluate_cohorts(real: &TissueCohort, generated: &TissueCohort) -> Result<MetricReport> {
    let sizes = |c: &TissueCohort| {
        c.final_grids()
            .map(|g| tissue_size(g) as f64)
            .collect::<Vec<_>>()
    };
    let borders = |c: &TissueCohort| {
        c.final_grids()
            .map(|g| border_complexity(g) as f64)
            .collect::<Vec<_>>()
    };
    Ok(MetricReport {
        kl_div: kl_proportions(real, generated),
        size_w: wasserstein1(&sizes(real), &sizes(generated))?,
        border_w: wasserstein1(&borders(real), &borders(generated))?,
    })
}

/// Mean squared error over the first four channels.
pub fn rgba_mse(grid: &Tensor, target: &Tensor) -> Result<f64> {
    let (c, h, w) = grid.dims3("rgba_mse grid")?;
    let (ct, ht, wt) = target.dims3("rgba_mse target")?;
    if c < 4 || ct < 4 || h != ht || w != wt {
        return Err(Error::usage(format!(
            "rgba_mse: incompatible shapes {:?} and {:?}",
            grid.shape(),
            target.shape()
        )));
    }
    let n = 4 * h * w;
    let s: f64 = grid.data()[..n]
        .iter()
        .zip(&target.data()[..n])
        .map(|(a, b)| {
            let d = f64::from(*a) - f64::from(*b);
            d * d
        })
        .sum();
    Ok(s / n as f64)
}

/// Label histogram of a grid (EMPTY first).
pub fn label_counts(grid: &CellGrid) -> [usize; NUM_LABELS] {
    let mut c = [0; NUM_LABELS];
    for &v in grid.cells() {
        c[v as usize] += 1;
    }
    c
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
