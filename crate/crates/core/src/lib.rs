//! Two-step transfer learning for multi-class patch classification.
//!
//! The crate covers the full experiment: a procedural two-domain benchmark,
//! the patch pipeline (extraction, whitening, augmentation, fragment-level
//! splitting, balancing), a small CNN with explicit backward passes, the
//! scratch / one-step / two-step training strategies, metrics aggregation and
//! feature-space projections.

pub mod data;
pub mod embed;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod transfer;

pub use error::{Error, ErrorCategory, Result};
pub use tensor::{Precision, Scalar, Tensor};
