//! Per-pixel linear algebra and Sobel perception.
//!
//! Internally every state is held pixel-major (`[P, C]` rows, `P = H*W`), which
//! keeps the per-pixel dense layers contiguous. The public wrappers at the
//! bottom take and return channel-major `[C, H, W]` tensors.
//!
//! Dense layers always sum in ascending input index, starting from the bias,
//! and never fuse multiply-adds, so results are reproducible bit-for-bit
//! against a naive loop.

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Sobel x-derivative kernel, applied as a cross-correlation.
pub const SOBEL_X: [[f32; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Transpose of [`SOBEL_X`].
pub const SOBEL_Y: [[f32; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// `out = b + x · wt` for one pixel. `wt` is `[cin][cout]`.
#[inline]
pub(crate) fn dense_row<T: Real>(x: &[T], wt: &[T], b: &[T], out: &mut [T]) {
    let cout = b.len();
    debug_assert_eq!(wt.len(), x.len() * cout);
    debug_assert_eq!(out.len(), cout);
    out.copy_from_slice(b);
    for (xv, wrow) in x.iter().zip(wt.chunks_exact(cout)) {
        let xv = *xv;
        for (o, w) in out.iter_mut().zip(wrow) {
            *o += xv * *w;
        }
    }
}

/// Four pixels at once sharing one weight matrix; identical arithmetic to
/// four calls of [`dense_row`].
#[inline]
pub(crate) fn dense_row4<T: Real>(x: [&[T]; 4], wt: &[T], b: &[T], out: [&mut [T]; 4]) {
    let cout = b.len();
    let [o0, o1, o2, o3] = out;
    o0.copy_from_slice(b);
    o1.copy_from_slice(b);
    o2.copy_from_slice(b);
    o3.copy_from_slice(b);
    for (j, wrow) in wt.chunks_exact(cout).enumerate() {
        let (x0, x1, x2, x3) = (x[0][j], x[1][j], x[2][j], x[3][j]);
        for c in 0..cout {
            let w = wrow[c];
            o0[c] += x0 * w;
            o1[c] += x1 * w;
            o2[c] += x2 * w;
            o3[c] += x3 * w;
        }
    }
}

/// Row-wise dense layer over `n = x.len() / cin` pixels.
pub(crate) fn dense_rows<T: Real>(x: &[T], cin: usize, wt: &[T], b: &[T], out: &mut [T]) {
    let cout = b.len();
    let n = x.len() / cin;
    debug_assert_eq!(out.len(), n * cout);
    let mut xs = x.chunks_exact(cin);
    let mut os = out.chunks_exact_mut(cout);
    let blocks = n / 4;
    for _ in 0..blocks {
        let xb = [
            xs.next().unwrap(),
            xs.next().unwrap(),
            xs.next().unwrap(),
            xs.next().unwrap(),
        ];
        let ob = [
            os.next().unwrap(),
            os.next().unwrap(),
            os.next().unwrap(),
            os.next().unwrap(),
        ];
        dense_row4(xb, wt, b, ob);
    }
    for (xr, or) in xs.zip(os) {
        dense_row(xr, wt, b, or);
    }
}

/// Accumulate `gx += w^T g` for one pixel. `w` is `[cout][cin]`.
#[inline]
pub(crate) fn dense_row_grad_input<T: Real>(g: &[T], w: &[T], gx: &mut [T]) {
    let cin = gx.len();
    for (gv, wrow) in g.iter().zip(w.chunks_exact(cin)) {
        let gv = *gv;
        if gv == T::zero() {
            continue;
        }
        for (o, wv) in gx.iter_mut().zip(wrow) {
            *o += gv * *wv;
        }
    }
}

/// Accumulate `gw += g ⊗ x`, `gb += g` for one pixel. `gw` is `[cout][cin]`.
#[inline]
pub(crate) fn dense_row_grad_params<T: Real>(x: &[T], g: &[T], gw: &mut [T], gb: &mut [T]) {
    let cin = x.len();
    for ((gv, gwrow), gbv) in g.iter().zip(gw.chunks_exact_mut(cin)).zip(gb.iter_mut()) {
        let gv = *gv;
        *gbv += gv;
        if gv == T::zero() {
            continue;
        }
        for (o, xv) in gwrow.iter_mut().zip(x) {
            *o += gv * *xv;
        }
    }
}

/// Transpose a row-major `[rows][cols]` matrix.
pub(crate) fn transpose<T: Real>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// Sobel perception on pixel-major rows: `[P][C]` in, `[P][3C]` out with the
/// layout `[identity | d/dx | d/dy]` per pixel. Zero padding outside the grid.
pub(crate) fn perceive_rows<T: Real>(state: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    debug_assert_eq!(state.len(), c * h * w);
    debug_assert_eq!(out.len(), 3 * c * h * w);
    out.iter_mut().for_each(|v| *v = T::zero());
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let o = &mut out[p * 3 * c..(p + 1) * 3 * c];
            o[..c].copy_from_slice(&state[p * c..(p + 1) * c]);
            for dy in 0..3usize {
                let yy = y as isize + dy as isize - 1;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in 0..3usize {
                    let xx = x as isize + dx as isize - 1;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let (kx, ky) = (SOBEL_X[dy][dx], SOBEL_Y[dy][dx]);
                    if kx == 0.0 && ky == 0.0 {
                        continue;
                    }
                    let (kx, ky) = (T::from_f32(kx), T::from_f32(ky));
                    let q = yy as usize * w + xx as usize;
                    let s = &state[q * c..(q + 1) * c];
                    let (gx, gy) = o[c..].split_at_mut(c);
                    for ch in 0..c {
                        gx[ch] += kx * s[ch];
                        gy[ch] += ky * s[ch];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`perceive_rows`]: accumulates `g_state += Pᵀ g_features`.
pub(crate) fn perceive_rows_adjoint<T: Real>(
    g_features: &[T],
    c: usize,
    h: usize,
    w: usize,
    g_state: &mut [T],
) {
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let gf = &g_features[p * 3 * c..(p + 1) * 3 * c];
            {
                let gs = &mut g_state[p * c..(p + 1) * c];
                for ch in 0..c {
                    gs[ch] += gf[ch];
                }
            }
            for dy in 0..3usize {
                let yy = y as isize + dy as isize - 1;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in 0..3usize {
                    let xx = x as isize + dx as isize - 1;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let (kx, ky) = (SOBEL_X[dy][dx], SOBEL_Y[dy][dx]);
                    if kx == 0.0 && ky == 0.0 {
                        continue;
                    }
                    let (kx, ky) = (T::from_f32(kx), T::from_f32(ky));
                    let q = yy as usize * w + xx as usize;
                    let gs = &mut g_state[q * c..(q + 1) * c];
                    for ch in 0..c {
                        gs[ch] += kx * gf[c + ch] + ky * gf[2 * c + ch];
                    }
                }
            }
        }
    }
}

/// Sobel perception of a `[C,H,W]` grid: `[identity, d/dx, d/dy]` → `[3C,H,W]`.
pub fn sobel_perceive(grid: &Tensor) -> Result<Tensor> {
    let (c, h, w) = grid.dims3("sobel_perceive")?;
    let rows = grid.chw_to_rows();
    let mut out = vec![0.0; 3 * c * h * w];
    perceive_rows(&rows, c, h, w, &mut out);
    Ok(Tensor::from_rows(&out, 3 * c, h, w))
}

/// 1×1 convolution: `out[c,y,x] = bias[c] + Σ_j weights[c,j]·input[j,y,x]`.
pub fn dense_per_pixel(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (cin, h, w) = input.dims3("dense_per_pixel")?;
    let (cout, wcin) = weights.dims2("dense_per_pixel weights")?;
    if wcin != cin {
        return Err(Error::config(format!(
            "dense_per_pixel: weights expect {wcin} input channels, input has {cin}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::config(format!(
            "dense_per_pixel: bias shape {:?} does not match {cout} outputs",
            bias.shape()
        )));
    }
    let rows = input.chw_to_rows();
    let wt = transpose(weights.data(), cout, cin);
    let mut out = vec![0.0; cout * h * w];
    dense_rows(&rows, cin, &wt, bias.data(), &mut out);
    Ok(Tensor::from_rows(&out, cout, h, w))
}
