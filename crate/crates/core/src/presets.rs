//! Named experiment configurations `<system>-noise<pct>-<mode>`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{System, SystemSpec};
use crate::error::{Error, Result};
use crate::evaluation::EvalSettings;
use crate::training::{LossMode, TrainConfig};

pub const NOISE_LEVELS: [u32; 5] = [0, 1, 5, 10, 20];
pub const SYSTEMS: [&str; 3] = ["l63", "l96", "ks"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPreset {
    pub eps: f64,
    pub lyapunov_exponent: f64,
    pub n_starts: usize,
    /// Lyapunov times.
    pub horizon: f64,
    /// Clean continuation generated after the training interval, in time units.
    pub reference_duration: f64,
    /// Free-run length per start for the invariant measure, in time units.
    pub kl_duration: f64,
}

impl EvalPreset {
    pub fn settings(&self) -> EvalSettings {
        EvalSettings {
            n_starts: self.n_starts,
            horizon: self.horizon,
            kl_duration: self.kl_duration,
            ..EvalSettings::new(self.eps)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPreset {
    pub name: String,
    pub system: SystemSpec,
    /// Noise standard deviation relative to the per-dimension RMS.
    pub noise: f64,
    /// Training signal length in time units.
    pub duration: f64,
    pub train: TrainConfig,
    pub eval: EvalPreset,
}

impl ExperimentPreset {
    /// Training samples `round(duration/dt)`.
    pub fn samples(&self) -> usize {
        (self.duration / self.system.dt).round() as usize
    }

    /// Subdomain count actually used: the configured `K` or half the samples.
    pub fn effective_subdomains(&self) -> usize {
        self.train.subdomains.unwrap_or(self.samples() / 2)
    }
}

fn wp_rollouts(system: &str, pct: u32) -> usize {
    let row: [usize; 5] = match system {
        "l63" => [1, 2, 2, 1, 2],
        "l96" => [1, 1, 2, 2, 1],
        _ => [1, 1, 1, 1, 5],
    };
    row[NOISE_LEVELS.iter().position(|&n| n == pct).unwrap_or(0)]
}

/// Every registered preset name.
pub fn preset_names() -> Vec<String> {
    let mut out = Vec::new();
    for s in SYSTEMS {
        for n in NOISE_LEVELS {
            for m in LossMode::ALL {
                out.push(format!("{s}-noise{n}-{m}"));
            }
        }
    }
    out
}

/// Looks up a preset by name.
pub fn preset(name: &str) -> Result<ExperimentPreset> {
    let unknown = || Error::UnknownPreset {
        name: name.to_string(),
        available: format!(
            "<system>-noise<pct>-<mode> with system in {{{}}}, pct in {{{}}}, mode in {{strong, weak, wp}}",
            SYSTEMS.join(", "),
            NOISE_LEVELS.map(|n| n.to_string()).join(", ")
        ),
    };
    let parts: Vec<&str> = name.split('-').collect();
    let [sys, noise, mode] = parts[..] else {
        return Err(unknown());
    };
    if !SYSTEMS.contains(&sys) {
        return Err(unknown());
    }
    let pct: u32 = noise
        .strip_prefix("noise")
        .and_then(|n| n.parse().ok())
        .filter(|n| NOISE_LEVELS.contains(n))
        .ok_or_else(unknown)?;
    let mode: LossMode = mode.parse().map_err(|_| unknown())?;
    let system = SystemSpec::by_name(sys)?;

    let mut train = TrainConfig::defaults(mode);
    let (duration, strong_epochs, reference_duration, kl_duration) = match system.system {
        System::L63 { .. } => (100.0, 150, 200.0, 100.0),
        System::L96 { .. } => (1000.0, 200, 100.0, 20.0),
        System::Ks { .. } => (25_000.0, 300, 5000.0, 600.0),
    };
    train.subdomain_size = match system.system {
        System::L96 { .. } => 80,
        _ => 60,
    };
    if matches!(system.system, System::Ks { .. }) {
        train.batch_size = 2048;
    }
    match mode {
        LossMode::Strong => {
            train.rollout_t = 25;
            train.max_epochs = strong_epochs;
        }
        LossMode::Wp => train.rollout_t = wp_rollouts(sys, pct),
        LossMode::Weak => {}
    }
    let eval = EvalPreset {
        eps: system.vpt_threshold,
        lyapunov_exponent: system.lyapunov_exponent,
        n_starts: 30,
        horizon: 10.0,
        reference_duration,
        kl_duration,
    };
    Ok(ExperimentPreset {
        name: name.to_string(),
        system,
        noise: pct as f64 / 100.0,
        duration,
        train,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_examples() {
        let p = preset("l63-noise5-wp").unwrap();
        assert_eq!(p.train.subdomain_size, 60);
        assert_eq!(p.effective_subdomains(), 5000);
        assert_eq!((p.train.p, p.train.rollout_t, p.train.batch_size), (16, 2, 1024));
        assert_eq!((p.train.lambda, p.train.lr), (0.5, 0.02));
        assert_eq!((p.eval.eps, p.eval.lyapunov_exponent), (0.3, 0.91));
        assert_eq!(preset("ks-noise20-wp").unwrap().train.rollout_t, 5);
        let l96 = preset("l96-noise0-wp").unwrap();
        assert_eq!((l96.train.rollout_t, l96.train.subdomain_size), (1, 80));
        assert_eq!((l96.eval.eps, l96.eval.lyapunov_exponent), (0.5, 1.68));
    }

    #[test]
    fn unknown_names_list_the_registry() {
        for bad in ["l63-noise3-wp", "l64-noise5-wp", "l63-noise5", "l63-noise5-adjoint"] {
            match preset(bad) {
                Err(Error::UnknownPreset { available, .. }) => assert!(available.contains("l96")),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }
}
