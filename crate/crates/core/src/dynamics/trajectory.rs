//! Uniformly sampled trajectories: generation, observation noise and the
//! raw-binary + JSON sidecar file format.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::integrate::{integrate, Solver, Tolerance};
use super::ks::KsStepper;
use super::systems::{System, SystemSpec};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `[N × D]`, row `n` sampled at `t0 + n·dt`.
    pub states: Matrix,
    pub dt: f64,
    pub t0: f64,
    pub system: SystemSpec,
    pub noise_level: f64,
    pub seed: u64,
    /// Steps discarded before row 0.
    pub burn_in: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn row(&self, n: usize) -> &[f64] {
        self.states.row(n)
    }

    /// Rows `[start, end)` as a new trajectory with shifted `t0`.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        let d = self.dim();
        let data = self.states.as_slice()[start * d..end * d].to_vec();
        Trajectory {
            states: Matrix::from_vec(end - start, d, data),
            t0: self.time(start),
            ..self.clone()
        }
    }

    /// Per-dimension root mean square over all rows.
    pub fn rms(&self) -> Vec<f64> {
        column_stat(&self.states, |col| {
            (col.iter().map(|x| x * x).sum::<f64>() / col.len() as f64).sqrt()
        })
    }

    /// Per-dimension population standard deviation.
    pub fn std(&self) -> Vec<f64> {
        column_std(&self.states)
    }

    fn validate(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::config("trajectory needs at least two rows"));
        }
        if !self.states.is_finite() {
            return Err(Error::config("trajectory has non-finite states"));
        }
        Ok(())
    }

    /// Writes `<stem>.f64` (little-endian, row-major) and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let bin = dir.join(format!("{stem}.f64"));
        let mut bytes = Vec::with_capacity(self.states.as_slice().len() * 8);
        for v in self.states.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let side = sidecar_path(dir, stem);
        let text = serde_json::to_string_pretty(&Sidecar::from(self))?;
        fs::write(&side, text).map_err(|e| Error::io(&side, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let side = sidecar_path(dir, stem);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: Sidecar = serde_json::from_str(&text)?;
        let bin = dir.join(format!("{stem}.f64"));
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != meta.n * meta.d * 8 {
            return Err(Error::config(format!(
                "{}: {} bytes, sidecar says {}×{}",
                bin.display(),
                bytes.len(),
                meta.n,
                meta.d
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let (n, d) = (meta.n, meta.d);
        let traj = meta.into_trajectory(Matrix::from_vec(n, d, data))?;
        traj.validate()?;
        Ok(traj)
    }
}

fn sidecar_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.json"))
}

pub(crate) fn column_stat(m: &Matrix, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..m.cols())
        .map(|j| {
            let col: Vec<f64> = (0..m.rows()).map(|r| m.get(r, j)).collect();
            f(&col)
        })
        .collect()
}

pub(crate) fn column_std(m: &Matrix) -> Vec<f64> {
    column_stat(m, |col| {
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
    })
}

/// JSON sidecar of a trajectory file.
#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    system: String,
    params: serde_json::Value,
    dt: f64,
    t0: f64,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "D")]
    d: usize,
    sigma_nr: f64,
    seed: u64,
    burn_in: usize,
    lyapunov_exponent: f64,
    vpt_threshold: f64,
}

impl From<&Trajectory> for Sidecar {
    fn from(t: &Trajectory) -> Self {
        let mut params = serde_json::to_value(&t.system.system).expect("system serializes");
        if let Some(obj) = params.as_object_mut() {
            obj.remove("kind");
        }
        Sidecar {
            system: t.system.system.name().to_string(),
            params,
            dt: t.dt,
            t0: t.t0,
            n: t.len(),
            d: t.dim(),
            sigma_nr: t.noise_level,
            seed: t.seed,
            burn_in: t.burn_in,
            lyapunov_exponent: t.system.lyapunov_exponent,
            vpt_threshold: t.system.vpt_threshold,
        }
    }
}

impl Sidecar {
    fn into_trajectory(self, states: Matrix) -> Result<Trajectory> {
        let mut params = self.params;
        let obj = params
            .as_object_mut()
            .ok_or_else(|| Error::config("sidecar params must be an object"))?;
        obj.insert("kind".into(), serde_json::Value::String(self.system));
        let system: System = serde_json::from_value(params)?;
        Ok(Trajectory {
            states,
            dt: self.dt,
            t0: self.t0,
            system: SystemSpec {
                system,
                dt: self.dt,
                lyapunov_exponent: self.lyapunov_exponent,
                vpt_threshold: self.vpt_threshold,
            },
            noise_level: self.sigma_nr,
            seed: self.seed,
            burn_in: self.burn_in,
        })
    }
}

/// Adds zero-mean Gaussian noise with per-dimension standard deviation
/// `sigma_nr · RMS_j` of the clean series.
pub fn add_noise(traj: &Trajectory, sigma_nr: f64, seed: u64) -> Result<Trajectory> {
    if !(sigma_nr >= 0.0) {
        return Err(Error::config("noise level must be non-negative"));
    }
    let mut out = traj.clone();
    out.noise_level = sigma_nr;
    if sigma_nr == 0.0 {
        return Ok(out);
    }
    let scale: Vec<f64> = traj.rms().iter().map(|r| sigma_nr * r).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = traj.dim();
    for (i, v) in out.states.as_mut_slice().iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        *v += scale[i % d] * z;
    }
    Ok(out)
}

/// Default transient removal, in steps.
pub fn default_burn_in(spec: &SystemSpec) -> usize {
    match spec.system {
        System::Ks { .. } => 2000,
        _ => 1000,
    }
}

fn initial_condition(spec: &SystemSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match spec.system {
        System::L63 { .. } => (0..3).map(|_| 1.0 + rng.random_range(-0.5..0.5)).collect(),
        System::L96 { dim, forcing } => {
            let mut x: Vec<f64> = (0..dim)
                .map(|_| forcing + rng.random_range(-1e-3..1e-3))
                .collect();
            let j = rng.random_range(0..dim);
            x[j] += 1.0;
            x
        }
        System::Ks { length, modes } => {
            let amps: Vec<(f64, f64)> = (1..=4)
                .map(|_| {
                    (
                        rng.random_range(0.01..0.1),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            (0..modes)
                .map(|j| {
                    let x = length * j as f64 / modes as f64;
                    amps.iter()
                        .enumerate()
                        .map(|(m, (a, ph))| {
                            a * (std::f64::consts::TAU * (m + 1) as f64 * x / length + ph).cos()
                        })
                        .sum()
                })
                .collect()
        }
    }
}

/// Advances `u0` by `n_steps` grid steps of `spec.dt` with the reference
/// integrator (strict dopri5 for the ODEs, ETDRK4 for KS). Row 0 is `u0`.
pub fn reference_run(spec: &SystemSpec, u0: &[f64], n_steps: usize) -> Result<Matrix> {
    match spec.system {
        System::Ks { length, modes } => {
            let stepper = KsStepper::new(modes, length, spec.dt);
            let mut data = Vec::with_capacity((n_steps + 1) * modes);
            data.extend_from_slice(u0);
            let mut cur = u0.to_vec();
            for n in 0..n_steps {
                cur = stepper.step(&cur).map_err(|_| Error::Integration {
                    last_valid: n,
                    reason: "KS blowup".into(),
                })?;
                data.extend_from_slice(&cur);
            }
            Ok(Matrix::from_vec(n_steps + 1, modes, data))
        }
        _ => {
            let field = spec.vector_field();
            integrate(&field, u0, n_steps, spec.dt, Solver::Dopri5, Tolerance::STRICT)
        }
    }
}

/// Clean attractor-resident trajectory of `round(duration/dt)` rows.
pub fn generate_dataset(
    spec: &SystemSpec,
    duration: f64,
    burn_in: usize,
    seed: u64,
) -> Result<Trajectory> {
    spec.validate()?;
    if !(duration > 0.0) {
        return Err(Error::config("duration must be positive"));
    }
    let n = (duration / spec.dt).round() as usize;
    if n < 2 {
        return Err(Error::config("duration shorter than two samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u0 = initial_condition(spec, &mut rng);
    let start = if burn_in > 0 {
        let warm = reference_run(spec, &u0, burn_in).map_err(|e| {
            Error::Integration {
                last_valid: 0,
                reason: format!("blowup during burn-in: {e}"),
            }
        })?;
        warm.row(burn_in).to_vec()
    } else {
        u0
    };
    let states = reference_run(spec, &start, n - 1)?;
    Ok(Trajectory {
        states,
        dt: spec.dt,
        t0: burn_in as f64 * spec.dt,
        system: spec.clone(),
        noise_level: 0.0,
        seed,
        burn_in,
    })
}
