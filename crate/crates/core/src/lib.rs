//! Differentiable visual prompting around a small frozen classifier.
//!
//! The central transform warps an image with a constrained affine prompt,
//! multiplies it by a bounded per-pixel colour field, and adds a pattern in
//! the region the warp left empty:
//!
//! ```text
//! x̃ = Affine(x, A) ⊙ σ̂ + M ⊙ δ
//! ```
//!
//! Every stage has a hand-derived backward pass so prompts can be trained by
//! SGD against a frozen model that only exposes input gradients.

pub mod affine;
pub mod augment;
pub mod color;
pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod model;
pub mod pipeline;
pub mod ppm;
pub mod rng;
pub mod tensorfile;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{Image, Mask};
