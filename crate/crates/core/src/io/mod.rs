//! Configuration files, checkpoints, images and run manifests.

pub mod checkpoint;
pub mod config;
pub mod imaging;
pub mod manifest;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, Manifest};
pub use config::{parse_config, preset, ExperimentConfig};
pub use imaging::{ingest_image, render_gray, render_rgba, render_tissue, save_png};
pub use manifest::RunManifest;
