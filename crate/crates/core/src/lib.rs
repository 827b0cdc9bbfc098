//! faceveil: parametric face fitting, identity replacement, and head
//! inpainting at desk scale.
//!
//! The pipeline has two stages. Stage I fits an affine parametric face model
//! to an image by damped Gauss-Newton minimization of landmark, photometric,
//! and statistical-regularization energies, optionally swaps the identity
//! block of the parameter vector against cluster representatives, and renders
//! the result. Stage II obfuscates the head surroundings and inpaints a
//! realistic composite with a small conditional adversarial network. SSIM,
//! masked SSIM, and a parameter-space proxy recognizer provide evaluation.

pub mod container;
pub mod error;
pub mod eval;
pub mod fit;
pub mod identity;
pub mod image;
pub mod imageops;
pub mod inpaint;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod scenes;

pub use error::{Error, Result};
