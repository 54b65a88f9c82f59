//! Identity-preserving editing of neural implicit surfaces.
//!
//! A source SDF field is fitted to calibrated images, then a residual target
//! field is optimized with posterior-latent distillation against a pluggable
//! diffusion denoiser.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose, and the
// numeric kernels index several parallel arrays per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod diffusion;
pub mod distill;
pub mod fields;
pub mod geometry;
pub mod imageio;
pub mod render;
pub mod tensor;
pub mod train;

pub use tensor::Tensor;
