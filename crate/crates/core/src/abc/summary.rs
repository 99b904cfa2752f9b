use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tissuesim::{CellGrid, TissueCohort, NUM_LABELS, NUM_TYPES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryKind {
    Proportions,
    Neighborhood,
    Correlation,
}

/// Distance used between two label-proportion vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProportionMetric {
    /// `½ Σ |p − q|`: W1 under the unit (0/1) ground metric.
    #[default]
    TotalVariation,
    /// W1 on the label index line, `Σ |F_p − F_q|`.
    OrdinalW1,
}

/// Per-label histograms of 3×3 neighborhood counts (0..=9 of 9 sites).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodHistogram {
    pub counts: [[u64; 10]; NUM_LABELS],
    pub sites: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Summary {
    Proportions([f64; NUM_LABELS]),
    Neighborhood(NeighborhoodHistogram),
    Correlation([[f64; NUM_TYPES]; NUM_TYPES]),
}

impl Summary {
    pub fn kind(&self) -> SummaryKind {
        match self {
            Summary::Proportions(_) => SummaryKind::Proportions,
            Summary::Neighborhood(_) => SummaryKind::Neighborhood,
            Summary::Correlation(_) => SummaryKind::Correlation,
        }
    }
}

/// Label proportions over all sites of all final grids, EMPTY included.
pub fn summary_proportions(cohort: &TissueCohort) -> [f64; NUM_LABELS] {
    let mut counts = [0u64; NUM_LABELS];
    for g in cohort.final_grids() {
        for &v in g.cells() {
            counts[v as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    counts.map(|c| c as f64 / total as f64)
}

/// Label counts in the 3×3 block around `(y, x)`, padding counted as EMPTY.
pub fn neighborhood_counts(g: &CellGrid, y: usize, x: usize) -> [u8; NUM_LABELS] {
    let n = g.size() as isize;
    let mut c = [0u8; NUM_LABELS];
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            let label = if yy < 0 || xx < 0 || yy >= n || xx >= n {
                0
            } else {
                g.cells()[(yy * n + xx) as usize]
            };
            c[label as usize] += 1;
        }
    }
    c
}

pub fn summary_neighborhood(cohort: &TissueCohort) -> NeighborhoodHistogram {
    let mut h = NeighborhoodHistogram {
        counts: [[0; 10]; NUM_LABELS],
        sites: 0,
    };
    for g in cohort.final_grids() {
        let n = g.size();
        for y in 0..n {
            for x in 0..n {
                let c = neighborhood_counts(g, y, x);
                for (t, &k) in c.iter().enumerate() {
                    h.counts[t][k as usize] += 1;
                }
                h.sites += 1;
            }
        }
    }
    h
}

/// Pearson correlation between the binary masks of the five cell types,
/// pooled over all sites of all final grids. Entries involving a constant
/// mask are 0.
pub fn summary_correlation(cohort: &TissueCohort) -> [[f64; NUM_TYPES]; NUM_TYPES] {
    let mut n = 0.0f64;
    let mut sum = [0.0f64; NUM_TYPES];
    let mut joint = [[0.0f64; NUM_TYPES]; NUM_TYPES];
    for g in cohort.final_grids() {
        for &v in g.cells() {
            n += 1.0;
            if v > 0 {
                let t = v as usize - 1;
                sum[t] += 1.0;
                // Masks are disjoint: only the diagonal of the joint count grows.
                joint[t][t] += 1.0;
            }
        }
    }
    let var: Vec<f64> = (0..NUM_TYPES)
        .map(|i| joint[i][i] / n - (sum[i] / n).powi(2))
        .collect();
    let mut r = [[0.0; NUM_TYPES]; NUM_TYPES];
    for i in 0..NUM_TYPES {
        for j in 0..NUM_TYPES {
            if var[i] <= 0.0 || var[j] <= 0.0 {
                continue;
            }
            let cov = joint[i][j] / n - (sum[i] / n) * (sum[j] / n);
            r[i][j] = cov / (var[i] * var[j]).sqrt();
        }
    }
    if var.iter().any(|v| *v <= 0.0) {
        log::debug!("correlation summary: constant mask for some type, entries set to 0");
    }
    r
}

pub fn summarize(cohort: &TissueCohort, kind: SummaryKind) -> Summary {
    match kind {
        SummaryKind::Proportions => Summary::Proportions(summary_proportions(cohort)),
        SummaryKind::Neighborhood => Summary::Neighborhood(summary_neighborhood(cohort)),
        SummaryKind::Correlation => Summary::Correlation(summary_correlation(cohort)),
    }
}

fn histogram_w1(a: &[u64; 10], na: u64, b: &[u64; 10], nb: u64) -> f64 {
    let (mut fa, mut fb, mut total) = (0u64, 0u64, 0.0);
    for k in 0..9 {
        fa += a[k];
        fb += b[k];
        total += (fa as f64 / na as f64 - fb as f64 / nb as f64).abs();
    }
    total / 9.0
}

/// Distance between two summaries of the same kind.
pub fn abc_distance(a: &Summary, b: &Summary, metric: ProportionMetric) -> Result<f64> {
    match (a, b) {
        (Summary::Proportions(p), Summary::Proportions(q)) => Ok(match metric {
            ProportionMetric::TotalVariation => {
                0.5 * p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>()
            }
            ProportionMetric::OrdinalW1 => {
                let (mut fp, mut fq, mut total) = (0.0, 0.0, 0.0);
                for i in 0..NUM_LABELS - 1 {
                    fp += p[i];
                    fq += q[i];
                    total += (fp - fq).abs();
                }
                total
            }
        }),
        (Summary::Neighborhood(x), Summary::Neighborhood(y)) => {
            if x.sites == 0 || y.sites == 0 {
                return Err(Error::usage("neighborhood summary without sites"));
            }
            Ok((0..NUM_LABELS)
                .map(|t| histogram_w1(&x.counts[t], x.sites, &y.counts[t], y.sites))
                .sum::<f64>()
                / NUM_LABELS as f64)
        }
        (Summary::Correlation(x), Summary::Correlation(y)) => {
            let f: f64 = x
                .iter()
                .flatten()
                .zip(y.iter().flatten())
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            Ok(f.sqrt() / std::f64::consts::SQRT_2)
        }
        _ => Err(Error::usage(format!(
            "summary kind mismatch: {:?} vs {:?}",
            a.kind(),
            b.kind()
        ))),
    }
}
