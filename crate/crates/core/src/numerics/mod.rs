//! Tensor arithmetic, Sobel perception, counter-based sampling and parameter
//! containers for the fixed per-pixel network architecture.

pub mod kernels;
pub mod params;
pub mod real;
pub mod rng;
pub mod tensor;

pub use kernels::{dense_per_pixel, sobel_perceive, SOBEL_X, SOBEL_Y};
pub use params::{Param, ParamSet};
pub use real::Real;
pub use rng::{sample_categorical, sample_normal, sample_uniform, CellRng, RngStream};
pub use tensor::Tensor;
