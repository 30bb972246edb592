//! Differentiable multi-scale texture analysis.
//!
//! The loss path runs image → soft GLCM per `(d, θ)` offset → contrast
//! descriptor matrix → elementwise L1 deviation → self-attention aggregation
//! → scalar loss, with hand-written backward passes at every stage. The
//! evaluation side provides hard-binned Haralick-style features, Welch's
//! t-test, the before/after alignment report and the Fréchet distance
//! between Gaussian feature distributions.
//!
//! Per-offset work is data-parallel through rayon when the `parallel`
//! feature is enabled (the default). Reductions always run in a fixed order,
//! so results are bitwise identical with or without it.

pub mod attnloss;
pub mod config;
pub mod error;
pub mod evalstats;
pub mod gradcheck;
pub mod imaging;
pub mod io;
pub mod mste;
mod par;
pub mod softglcm;
pub mod texopt;

pub use attnloss::{
    attention_forward, deviation, texture_loss, texture_loss_backward, AttentionParams,
    LossGradients, LossOutput, TextureLoss,
};
pub use error::{Error, Result};
pub use imaging::{Domain, GrayImage, PreprocessConfig};
pub use mste::{
    contrast_descriptor, texture_matrix, texture_matrix_backward, OffsetGrid, TextureMatrix,
};
pub use softglcm::{
    soft_assignment, soft_glcm_backward, soft_glcm_forward, Angle, BinningConfig, Offset, SoftGlcm,
};
