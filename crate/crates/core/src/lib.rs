//! Teacher–student laboratory for length and compositional generalization of
//! deep sets, decomposable-attention transformers, linear state-space models
//! and vanilla RNNs.
//!
//! - [`numerics`]: dense matrices, reverse-mode autodiff, seeded streams
//! - [`arch`]: the model families, teachers and students
//! - [`datagen`]: token distributions and teacher labelling
//! - [`training`]: AdamW with plateau schedule, label-only and CoT objectives
//! - [`eval`]: per-length risk, linear identification `R²`, permutation recovery
//! - [`theory`]: finite-class thresholds, ε-covers, Lipschitz and Rademacher bounds

pub mod arch;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
