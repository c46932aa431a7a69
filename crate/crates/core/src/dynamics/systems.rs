//! The three benchmark systems and their right-hand sides.

use serde::{Deserialize, Serialize};

use super::ks::KsSpectral;
use crate::error::{Error, Result};

/// Lorenz-63: `(σ(y−x), x(ρ−z)−y, xy−βz)`.
#[inline]
pub fn lorenz63_rhs(state: &[f64], sigma: f64, rho: f64, beta: f64) -> [f64; 3] {
    let (x, y, z) = (state[0], state[1], state[2]);
    [sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
}

/// Lorenz-96 with cyclic indices: `(x_{i+1} − x_{i−2}) x_{i−1} − x_i + F`.
pub fn lorenz96_rhs(state: &[f64], forcing: f64) -> Vec<f64> {
    let mut out = vec![0.0; state.len()];
    lorenz96_rhs_into(state, forcing, &mut out);
    out
}

pub fn lorenz96_rhs_into(state: &[f64], forcing: f64, out: &mut [f64]) {
    let d = state.len();
    debug_assert!(d >= 4);
    // interior without wraparound, then the three wrapped indices
    for i in 2..d - 1 {
        out[i] = (state[i + 1] - state[i - 2]) * state[i - 1] - state[i] + forcing;
    }
    out[0] = (state[1] - state[d - 2]) * state[d - 1] - state[0] + forcing;
    out[1] = (state[2] - state[d - 1]) * state[0] - state[1] + forcing;
    out[d - 1] = (state[0] - state[d - 3]) * state[d - 2] - state[d - 1] + forcing;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum System {
    L63 { sigma: f64, rho: f64, beta: f64 },
    L96 { dim: usize, forcing: f64 },
    Ks { length: f64, modes: usize },
}

impl System {
    pub fn dim(&self) -> usize {
        match *self {
            System::L63 { .. } => 3,
            System::L96 { dim, .. } => dim,
            System::Ks { modes, .. } => modes,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::L63 { .. } => "l63",
            System::L96 { .. } => "l96",
            System::Ks { .. } => "ks",
        }
    }
}

/// A benchmark system together with its sampling step and the constants
/// used to score forecasts on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub system: System,
    pub dt: f64,
    /// Maximal Lyapunov exponent Λ; one Lyapunov time is `1/Λ`.
    pub lyapunov_exponent: f64,
    pub vpt_threshold: f64,
}

impl SystemSpec {
    pub fn lorenz63() -> Self {
        SystemSpec {
            system: System::L63 {
                sigma: 10.0,
                rho: 28.0,
                beta: 8.0 / 3.0,
            },
            dt: 0.01,
            lyapunov_exponent: 0.91,
            vpt_threshold: 0.3,
        }
    }

    pub fn lorenz96() -> Self {
        SystemSpec {
            system: System::L96 {
                dim: 40,
                forcing: 10.0,
            },
            dt: 0.01,
            lyapunov_exponent: 1.68,
            vpt_threshold: 0.5,
        }
    }

    pub fn kuramoto_sivashinsky() -> Self {
        SystemSpec {
            system: System::Ks {
                length: 22.0,
                modes: 64,
            },
            dt: 0.25,
            lyapunov_exponent: 0.05,
            vpt_threshold: 0.5,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "l63" | "lorenz63" => Ok(Self::lorenz63()),
            "l96" | "lorenz96" => Ok(Self::lorenz96()),
            "ks" | "kuramoto-sivashinsky" => Ok(Self::kuramoto_sivashinsky()),
            other => Err(Error::config(format!(
                "unknown system `{other}` (expected l63, l96 or ks)"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn lyapunov_time(&self) -> f64 {
        1.0 / self.lyapunov_exponent
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.lyapunov_exponent > 0.0) || !(self.vpt_threshold > 0.0) {
            return Err(Error::config("dt, Λ and ε must all be positive"));
        }
        match self.system {
            System::L96 { dim, .. } if dim < 4 => {
                Err(Error::config("Lorenz-96 needs at least 4 components"))
            }
            System::Ks { length, modes } if modes % 2 != 0 || modes == 0 || !(length > 0.0) => {
                Err(Error::config("KS needs an even number of modes and a positive length"))
            }
            _ => Ok(()),
        }
    }

    /// The analytic vector field as an integrable closure.
    pub fn vector_field(&self) -> AnalyticField {
        let ks = match self.system {
            System::Ks { length, modes } => Some(KsSpectral::new(modes, length)),
            _ => None,
        };
        AnalyticField {
            system: self.system.clone(),
            ks,
        }
    }
}

/// Physical-units right-hand side of a [`System`].
pub struct AnalyticField {
    system: System,
    ks: Option<KsSpectral>,
}

impl AnalyticField {
    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn eval(&self, u: &[f64], out: &mut [f64]) {
        match self.system {
            System::L63 { sigma, rho, beta } => {
                out.copy_from_slice(&lorenz63_rhs(u, sigma, rho, beta));
            }
            System::L96 { forcing, .. } => lorenz96_rhs_into(u, forcing, out),
            System::Ks { .. } => {
                self.ks
                    .as_ref()
                    .expect("KS field carries its spectral operator")
                    .rhs(u, out);
            }
        }
    }
}
