//! Independent slow reference computations for metric checks.

#![allow(dead_code)]

/// W1 as `∫|F_u − F_v|`, with both CDFs recounted from scratch on every
/// interval between consecutive distinct breakpoints.
pub fn w1_breakpoints(u: &[f64], v: &[f64]) -> f64 {
    let mut pts: Vec<f64> = u.iter().chain(v).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let cdf = |s: &[f64], t: f64| s.iter().filter(|&&x| x <= t).count() as f64 / s.len() as f64;
    pts.windows(2)
        .map(|w| (cdf(u, w[0]) - cdf(v, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

/// Border count via an explicit 3×3 Laplacian kernel over a zero-padded mask.
pub fn border_by_convolution(mask: &[Vec<u8>], threshold: f64) -> usize {
    let kernel = [[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]];
    let n = mask.len() as isize;
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= n || x >= n {
            0.0
        } else {
            f64::from(mask[y as usize][x as usize])
        }
    };
    let mut count = 0;
    for y in 0..n {
        for x in 0..n {
            let mut s = 0.0;
            for (ky, row) in kernel.iter().enumerate() {
                for (kx, k) in row.iter().enumerate() {
                    s += k * at(y + ky as isize - 1, x + kx as isize - 1);
                }
            }
            if (s / 8.0).abs() > threshold {
                count += 1;
            }
        }
    }
    count
}
