//! Fixtures shared by the benchmarks.

use mnca_core::{AutomatonModel, ModelSpec, Tensor, Variant};

pub fn model(variant: Variant, channels: usize, hidden: usize, rules: usize) -> AutomatonModel {
    let spec = ModelSpec {
        variant,
        channels,
        hidden_dim: hidden,
        rules,
        residual: true,
        dropout: 0.0,
        zero_init_output: false,
    };
    AutomatonModel::init(&spec, 1).expect("valid bench spec")
}

/// Deterministic, non-constant `[C,H,W]` grid.
pub fn grid(c: usize, h: usize, w: usize) -> Tensor {
    let data = (0..c * h * w)
        .map(|i| ((i * 7919) % 100) as f32 / 100.0)
        .collect();
    Tensor::from_vec(&[c, h, w], data).expect("shape matches data")
}
