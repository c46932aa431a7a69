//! Learning chaotic vector fields from noisy series with a combined
//! weak-form and short-rollout loss, and scoring the learned models by
//! valid prediction time and invariant-measure divergence.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod presets;
pub mod training;
pub mod weakform;

pub use error::{Error, Result};
