//! Assessment harness for image downscaling.
//!
//! A downscaler is scored by how far a blind stochastic upscaler's
//! reconstructions land from the original, averaged over reconstructions and
//! images. Lower scores mean the low-resolution image kept more of what the
//! upscaler needs.

pub mod config;
pub mod datatools;
pub mod degrade;
pub mod error;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod plugin;
pub mod protocol;
pub mod resample;
pub mod rng;
pub mod synth;
pub mod upscale;

pub use config::{idard_score, RunConfig};
pub use error::{Error, Result};
pub use image::{ImageId, Raster};
pub use metrics::Distortion;
pub use pipeline::{score_images, Downscaler, ImageSource, ScoreReport, ScoreSettings, SweepResult};
pub use resample::{KernelKind, ScaleFactor};
pub use rng::StreamKey;
pub use upscale::Upscaler;
