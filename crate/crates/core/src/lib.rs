//! Mixtures of neural cellular automata.
//!
//! A grid state is a `[C,H,W]` [`Tensor`]. Models step grids forward with
//! learned per-cell rules; a mixture model picks one of several rules per cell
//! from a state-dependent categorical distribution. The crate also contains
//! the stochastic tissue simulator that produces training cohorts, the
//! evaluation metrics, rejection ABC for the simulator's parameters, and
//! perturbation and analysis tooling.

pub mod abc;
pub mod analysis;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod perturb;
pub mod tissuesim;
pub mod training;

pub use error::{Error, Result};
pub use model::{AutomatonModel, ModelSpec, SelectionMode, StepOptions, Variant};
pub use numerics::{ParamSet, RngStream, Tensor};
