//! Benchmark systems, integrators and reference data.

pub mod integrate;
pub mod ks;
pub mod systems;
pub mod trajectory;

pub use integrate::{integrate, integrate_partial, rk4_step, Solver, Tableau, Tolerance, VectorField};
pub use ks::{ks_step, KsSpectral, KsStepper};
pub use systems::{lorenz63_rhs, lorenz96_rhs, AnalyticField, System, SystemSpec};
pub use trajectory::{add_noise, default_burn_in, generate_dataset, reference_run, Trajectory};
