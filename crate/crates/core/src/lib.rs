//! Desk-scale engine for self-supervised pretext training, indoor-scene
//! fine-tuning, manifest-driven dataset construction and Bayesian
//! two-group comparison of model variants.

pub mod augment;
pub mod best;
pub mod data;
pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
pub use numerics::{Rng, Tensor};
