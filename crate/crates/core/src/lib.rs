//! Diffusion-based reconstruction and segmentation for visual anomaly detection.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: tensors, a reverse-mode tape, Adam, seeded RNG streams and checkpoints.
//! - [`schedule`]: the linear noise schedule plus every closed-form sampling formula
//!   (forward diffusion, one-step denoising, DDPM steps, norm guidance).
//! - [`synth`]: Perlin masks, foreground gating and synthetic anomaly blending.
//! - [`models`]: the noise-predicting U-Net and the segmentation U-Net.
//! - [`losses`]: masked two-scale noise loss, smooth-L1 + focal mask loss.
//! - [`pipeline`]: joint training, norm-guided inference, top-K scoring, paradigm benchmark.
//! - [`metrics`]: AUROC, average precision, PRO and the evaluation report.

pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod pipeline;
pub mod schedule;
pub mod synth;

pub use error::{Error, Result};
