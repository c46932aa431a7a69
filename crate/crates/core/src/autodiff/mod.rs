//! Reverse-mode differentiation over dense matrices, the GELU network it
//! differentiates, and the Adam optimizer.

pub mod adam;
pub mod matrix;
pub mod mlp;
pub mod tape;

pub use adam::{adam_step, AdamConfig, OptimizerState, ReduceOnPlateau};
pub use matrix::Matrix;
pub use mlp::{BoundParams, Checkpoint, GradSet, Layer, ParamSet};
pub use tape::{gelu, gelu_derivative, Tape, Var, WindowPlan};
