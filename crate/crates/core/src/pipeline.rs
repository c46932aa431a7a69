//! Data generation, fitting and scoring glued together for one experiment.

use crate::autodiff::ParamSet;
use crate::data::MinMaxScaler;
use crate::dynamics::{add_noise, default_burn_in, generate_dataset, SystemSpec, Trajectory};
use crate::error::Result;
use crate::evaluation::{evaluate_model, EvalSettings, Evaluation, PhysicalModel};
use crate::training::{train, TrainConfig, TrainReport};

/// Training series plus the clean continuation used for scoring.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub clean: Trajectory,
    pub noisy: Trajectory,
    /// Starts one step after the last training row.
    pub reference: Trajectory,
}

/// Generates `duration` time units of training data at relative noise
/// `noise`, followed by `reference_duration` of clean continuation.
pub fn prepare_dataset(
    spec: &SystemSpec,
    duration: f64,
    reference_duration: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    let n_train = (duration / spec.dt).round() as usize;
    let n_ref = (reference_duration / spec.dt).round() as usize;
    let full = generate_dataset(
        spec,
        (n_train + n_ref) as f64 * spec.dt,
        default_burn_in(spec),
        seed,
    )?;
    let clean = full.slice(0, n_train);
    let reference = full.slice(n_train, full.len());
    let noisy = add_noise(&clean, noise, seed.wrapping_add(1))?;
    Ok(Dataset {
        clean,
        noisy,
        reference,
    })
}

/// A trained network with the scaling it was trained under.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: ParamSet,
    pub scaler: MinMaxScaler,
}

impl TrainedModel {
    pub fn field(&self) -> PhysicalModel<'_> {
        PhysicalModel {
            params: &self.params,
            scaler: &self.scaler,
        }
    }
}

/// Fits the scaler on `observed` and trains on the scaled series.
pub fn fit(config: &TrainConfig, observed: &Trajectory) -> Result<(TrainedModel, TrainReport)> {
    let scaler = MinMaxScaler::fit(&observed.states)?;
    let scaled = scaler.apply_matrix(&observed.states);
    let (params, report) = train(config, &scaled, observed.dt)?;
    Ok((TrainedModel { params, scaler }, report))
}

/// Scores a trained model against the clean continuation.
pub fn score(model: &TrainedModel, reference: &Trajectory, settings: &EvalSettings) -> Result<Evaluation> {
    evaluate_model(&model.field(), reference, settings)
}
