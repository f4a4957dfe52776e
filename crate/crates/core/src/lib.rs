//! Semantic image inpainting by searching the latent space of a trained
//! generative adversarial network.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a small reverse-mode differentiation engine over dense
//!   `f64` tensors, with finite-difference gradient checking and Adam.
//! - [`gan`]: DCGAN-style generator and discriminator, adversarial training
//!   and the binary checkpoint format.
//! - [`data`]: procedural datasets, PNG I/O and dataset manifests.
//! - [`mask`]: the four corruption mask families.
//! - [`inpaint`]: importance-weighted context loss, prior loss and projected
//!   Adam inversion of the generator.
//! - [`blend`]: overlay and Poisson (gradient-domain) reconstruction.
//! - [`eval`]: PSNR/SSIM, error images, fill baselines and the evaluation grid.

pub mod autodiff;
pub mod blend;
pub mod data;
pub mod error;
pub mod eval;
pub mod gan;
pub mod inpaint;
pub mod mask;
pub mod rng;

pub use error::{Error, Result};
