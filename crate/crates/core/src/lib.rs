//! Mask-guided eyeglasses removal, end to end on the CPU.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`synth`] builds paired training data by compositing eyewear templates
//!   onto glasses-free faces (alignment, pose labeling, tint/glare/refraction
//!   augmentation, deterministic dataset emission).
//! - [`nn`] is a small explicit-backprop layer library (conv, transposed conv,
//!   instance norm, activations, Adam) generic over `f32`/`f64`.
//! - [`netarch`] wires those layers into the dual-decoder generator, the two
//!   patch discriminators, and the identity embedder.
//! - [`losses`] implements the training objective: least-squares GAN terms,
//!   global/local L1, segmentation BCE, identity MSE, and the weighted total.
//! - [`trainer`] runs alternating discriminator/generator optimization with
//!   checkpointing and the inference path.
//! - [`evalkit`] computes Frechet distance between embedding distributions and
//!   the face-verification protocols (TAR@FAR, Rank-1, cosine improvement).

pub mod error;
pub mod evalkit;
pub mod imgio;
pub mod losses;
pub mod netarch;
pub mod nn;
pub mod synth;
pub mod trainer;

pub use error::CoreError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
