//! Effective experiment configuration: preset, then JSON file, then flags.

use std::path::Path;

use clap::Args;
use serde_json::Value;
use wpnode::dynamics::Solver;
use wpnode::presets::{preset, ExperimentPreset};
use wpnode::training::LossMode;
use wpnode::{Error, Result};

/// Flags that override individual configuration fields.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Loss: strong, weak or wp.
    #[arg(long = "loss")]
    pub loss_mode: Option<LossMode>,
    /// Rollout steps per window.
    #[arg(long = "rollout")]
    pub rollout_t: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Subdomain size M.
    #[arg(long = "subdomain-size", short = 'M')]
    pub subdomain_size: Option<usize>,
    /// Subdomain count K.
    #[arg(long = "subdomains", short = 'K')]
    pub subdomains: Option<usize>,
    /// Test-function order p.
    #[arg(long)]
    pub p: Option<u32>,
    #[arg(long = "batch")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "epochs")]
    pub max_epochs: Option<usize>,
    /// Early-stopping patience in epochs.
    #[arg(long = "patience")]
    pub early_stop_patience: Option<usize>,
    /// Learning-rate plateau patience in epochs.
    #[arg(long = "lr-patience")]
    pub lr_patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rollout solver.
    #[arg(long)]
    pub solver: Option<Solver>,
    /// Hidden widths, e.g. 64,64.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Training signal length in time units.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Relative observation noise, e.g. 0.05.
    #[arg(long)]
    pub noise: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, p: &mut ExperimentPreset) {
        let t = &mut p.train;
        macro_rules! set {
            ($src:ident => $dst:expr) => {
                if let Some(v) = self.$src.clone() {
                    $dst = v;
                }
            };
        }
        set!(loss_mode => t.loss_mode);
        set!(rollout_t => t.rollout_t);
        set!(lambda => t.lambda);
        set!(subdomain_size => t.subdomain_size);
        set!(p => t.p);
        set!(batch_size => t.batch_size);
        set!(lr => t.lr);
        set!(max_epochs => t.max_epochs);
        set!(early_stop_patience => t.early_stop_patience);
        set!(lr_patience => t.scheduler.patience);
        set!(seed => t.seed);
        set!(solver => t.solver);
        set!(hidden => t.hidden);
        set!(duration => p.duration);
        set!(noise => p.noise);
        if let Some(k) = self.subdomains {
            t.subdomains = Some(k);
        }
    }
}

/// Recursively overlays `patch` onto `base`; objects merge, anything else
/// replaces.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Preset named on the command line or by the file's `"preset"` key, with
/// the remaining file fields and then the flags layered on top.
pub fn resolve(name: Option<&str>, file: Option<&Path>, overrides: &Overrides) -> Result<ExperimentPreset> {
    let mut patch = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            let v: Value = serde_json::from_str(&text)?;
            if !v.is_object() {
                return Err(Error::Config("config file must hold a JSON object".into()));
            }
            v
        }
        None => Value::Object(Default::default()),
    };
    let from_file = patch
        .as_object_mut()
        .and_then(|o| o.remove("preset"))
        .and_then(|v| v.as_str().map(str::to_string));
    let base_name = match (name, from_file.as_deref()) {
        (Some(n), _) => n.to_string(),
        (None, Some(n)) => n.to_string(),
        (None, None) => {
            return Err(Error::Config(
                "give --preset or a config file with a \"preset\" key".into(),
            ))
        }
    };
    let mut value = serde_json::to_value(preset(&base_name)?)?;
    merge(&mut value, &patch);
    let mut p: ExperimentPreset = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("config file: {e}")))?;
    overrides.apply(&mut p);
    p.train.validate()?;
    if !(p.noise >= 0.0 && p.duration > 0.0) {
        return Err(Error::Config("noise must be ≥ 0 and duration > 0".into()));
    }
    Ok(p)
}
