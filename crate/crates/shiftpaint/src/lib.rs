//! Expression-aware facial video inpainting at desk scale.
//!
//! The crate fills occluded regions of short face clips with a gated
//! temporal-shift GAN: a 13-layer generator conditioned on masked frames,
//! facial-landmark heatmaps, and one occlusion-free reference frame, plus a
//! temporal-shift Wasserstein critic. Every mechanism — shift semantics,
//! online causality, gating, gradients, the five-term loss, and the metric
//! formulas — is small enough to verify directly, and the test suites do.
//!
//! Entry points:
//! - [`video_data`]: synthetic face clips, masks, landmark heatmaps, samples
//! - [`temporal_shift`]: fixed and learnable channel shifting
//! - [`neural_blocks`]: gated TSM convolutions and spatial self-attention
//! - [`generator`] / [`discriminator`]: the two networks
//! - [`losses`]: L1, perceptual, style, Wasserstein, expression losses
//! - [`training`]: alternating optimization, checkpoints, the overfit probe
//! - [`evaluation`]: MSE/PSNR/SSIM/LPIPS-style/FID reporting
//! - [`cli`]: the `shiftpaint` command-line pipeline
//!
//! See the crate examples for one runnable program per capability.

pub mod autodiff;
pub mod cli;
pub mod neural_blocks;
pub mod temporal_shift;
pub mod video_data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod losses;
pub mod numcheck;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
