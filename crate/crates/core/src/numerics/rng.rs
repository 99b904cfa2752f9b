//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, step, cell, draw)`, so evaluating
//! cells in any order, on any number of threads, yields the same values.

use rand::RngCore;

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A keyed family of random streams addressed by (step, cell, draw).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream for a sub-task (realization, batch slot, particle...).
    pub fn fork(&self, tag: u64) -> RngStream {
        RngStream {
            seed: mix(self.seed ^ mix(tag.wrapping_add(GOLDEN))),
        }
    }

    /// Draw generator positioned at draw index 0 of `(step, cell)`.
    pub fn at(&self, step: u64, cell: u64) -> CellRng {
        let key = mix(mix(self.seed.wrapping_add(step.wrapping_mul(GOLDEN))) ^ cell);
        CellRng { key, draw: 0 }
    }
}

/// Sequential draws at fixed `(seed, step, cell)` coordinates.
#[derive(Debug, Clone)]
pub struct CellRng {
    key: u64,
    draw: u64,
}

impl CellRng {
    /// Jump to an absolute draw index.
    pub fn with_draw(mut self, draw: u64) -> Self {
        self.draw = draw;
        self
    }

    pub fn draw_index(&self) -> u64 {
        self.draw
    }

    #[inline]
    fn next(&mut self) -> u64 {
        let v = mix(self.key ^ mix(self.draw.wrapping_add(GOLDEN)));
        self.draw += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller (consumes two draws).
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

impl RngCore for CellRng {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

pub fn sample_uniform(rng: &mut CellRng, low: f64, high: f64) -> f64 {
    low + (high - low) * rng.uniform()
}

pub fn sample_normal(rng: &mut CellRng, mean: f64, std: f64) -> f64 {
    mean + std * rng.normal()
}

/// Index drawn from a probability vector by inverse CDF.
pub fn sample_categorical(rng: &mut CellRng, probs: &[f64]) -> Result<usize> {
    validate_probs(probs)?;
    Ok(categorical_unchecked(rng.uniform(), probs))
}

pub(crate) fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::usage("categorical: empty probability vector"));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::usage(format!(
            "categorical: probabilities must be finite and nonnegative, got {probs:?}"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::usage(format!(
            "categorical: probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Inverse-CDF lookup; never returns an index whose probability is zero.
#[inline]
pub(crate) fn categorical_unchecked<T: Copy + Into<f64>>(u: f64, probs: &[T]) -> usize {
    let total: f64 = probs.iter().map(|&p| p.into()).sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        let p: f64 = p.into();
        if p <= 0.0 {
            continue;
        }
        last = k;
        acc += p;
        if target < acc {
            return k;
        }
    }
    last
}
