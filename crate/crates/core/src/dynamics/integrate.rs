//! Explicit Runge–Kutta integrators on a uniform output grid.
//!
//! Fixed-step methods take exactly one step per grid interval. The embedded
//! pairs (`bosh3`, `dopri5`) integrate each grid interval adaptively and
//! land on its end point, so no dense output is needed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, ParamSet};
use crate::dynamics::systems::AnalyticField;
use crate::error::{Error, Result};

/// Autonomous vector field `du/dt = f(u)`.
pub trait VectorField {
    fn eval(&self, u: &[f64], out: &mut [f64]);
}

impl<F: Fn(&[f64], &mut [f64])> VectorField for F {
    fn eval(&self, u: &[f64], out: &mut [f64]) {
        self(u, out)
    }
}

impl VectorField for ParamSet {
    fn eval(&self, u: &[f64], out: &mut [f64]) {
        self.apply_into(u, out)
    }
}

impl VectorField for AnalyticField {
    fn eval(&self, u: &[f64], out: &mut [f64]) {
        AnalyticField::eval(self, u, out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Euler,
    Midpoint,
    Rk4,
    Bosh3,
    Dopri5,
}

impl Solver {
    pub const ALL: [Solver; 5] = [
        Solver::Euler,
        Solver::Midpoint,
        Solver::Rk4,
        Solver::Bosh3,
        Solver::Dopri5,
    ];

    pub fn is_adaptive(self) -> bool {
        matches!(self, Solver::Bosh3 | Solver::Dopri5)
    }

    pub fn tableau(self) -> &'static Tableau {
        match self {
            Solver::Euler => &EULER,
            Solver::Midpoint => &MIDPOINT,
            Solver::Rk4 => &RK4,
            Solver::Bosh3 => &BOSH3,
            Solver::Dopri5 => &DOPRI5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Solver::Euler => "euler",
            Solver::Midpoint => "midpoint",
            Solver::Rk4 => "rk4",
            Solver::Bosh3 => "bosh3",
            Solver::Dopri5 => "dopri5",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Solver::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown solver `{s}`")))
    }
}

/// Butcher tableau of an explicit method. `a` is strictly lower triangular,
/// row `i` holding the coefficients of stages `0..i`.
#[derive(Debug)]
pub struct Tableau {
    pub a: &'static [&'static [f64]],
    pub b: &'static [f64],
    /// `b − b̂` of the embedded lower-order solution.
    pub err: Option<&'static [f64]>,
    /// Order of the embedded estimate; sets the step-size exponent.
    pub err_order: u32,
    /// Last stage is evaluated at the accepted solution.
    pub fsal: bool,
}

impl Tableau {
    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

static EULER: Tableau = Tableau {
    a: &[&[]],
    b: &[1.0],
    err: None,
    err_order: 0,
    fsal: false,
};

static MIDPOINT: Tableau = Tableau {
    a: &[&[], &[0.5]],
    b: &[0.0, 1.0],
    err: None,
    err_order: 0,
    fsal: false,
};

static RK4: Tableau = Tableau {
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    err: None,
    err_order: 0,
    fsal: false,
};

static BOSH3: Tableau = Tableau {
    a: &[&[], &[0.5], &[0.0, 0.75], &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0]],
    b: &[2.0 / 9.0, 1.0 / 3.0, 4.0 / 9.0, 0.0],
    err: Some(&[
        2.0 / 9.0 - 7.0 / 24.0,
        1.0 / 3.0 - 1.0 / 4.0,
        4.0 / 9.0 - 1.0 / 3.0,
        -1.0 / 8.0,
    ]),
    err_order: 2,
    fsal: true,
};

static DOPRI5: Tableau = Tableau {
    a: &[
        &[],
        &[1.0 / 5.0],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
        ],
        &[
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
        ],
        &[
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ],
    b: &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ],
    err: Some(&[
        35.0 / 384.0 - 5179.0 / 57600.0,
        0.0,
        500.0 / 1113.0 - 7571.0 / 16695.0,
        125.0 / 192.0 - 393.0 / 640.0,
        -2187.0 / 6784.0 + 92097.0 / 339200.0,
        11.0 / 84.0 - 187.0 / 2100.0,
        -1.0 / 40.0,
    ]),
    err_order: 4,
    fsal: true,
};

/// Scratch space for one explicit RK step.
struct Stepper<'a, F: VectorField + ?Sized> {
    f: &'a F,
    tab: &'static Tableau,
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    /// `k[0]` already holds `f(u)` from the previous accepted step.
    k0_valid: bool,
}

impl<'a, F: VectorField + ?Sized> Stepper<'a, F> {
    fn new(f: &'a F, tab: &'static Tableau, dim: usize) -> Self {
        Stepper {
            f,
            tab,
            k: vec![vec![0.0; dim]; tab.stages()],
            tmp: vec![0.0; dim],
            k0_valid: false,
        }
    }

    /// Writes the step result into `out`; returns the weighted error norm
    /// for embedded pairs.
    fn step(&mut self, u: &[f64], h: f64, out: &mut [f64], rtol: f64, atol: f64) -> Option<f64> {
        let s = self.tab.stages();
        if !self.k0_valid {
            self.f.eval(u, &mut self.k[0]);
        }
        for i in 1..s {
            self.tmp.copy_from_slice(u);
            for (j, &aij) in self.tab.a[i].iter().enumerate() {
                if aij != 0.0 {
                    for (t, kj) in self.tmp.iter_mut().zip(&self.k[j]) {
                        *t += h * aij * kj;
                    }
                }
            }
            self.f.eval(&self.tmp, &mut self.k[i]);
        }
        out.copy_from_slice(u);
        for (j, &bj) in self.tab.b.iter().enumerate() {
            if bj != 0.0 {
                for (o, kj) in out.iter_mut().zip(&self.k[j]) {
                    *o += h * bj * kj;
                }
            }
        }
        let err = self.tab.err?;
        // for FSAL pairs the last stage was evaluated at `out` itself
        let mut acc = 0.0;
        for d in 0..u.len() {
            let mut e = 0.0;
            for (j, &ej) in err.iter().enumerate() {
                e += ej * self.k[j][d];
            }
            let sc = atol + rtol * u[d].abs().max(out[d].abs());
            let r = h * e / sc;
            acc += r * r;
        }
        Some((acc / u.len() as f64).sqrt())
    }

    fn accept(&mut self) {
        if self.tab.fsal {
            let last = self.k.len() - 1;
            self.k.swap(0, last);
            self.k0_valid = true;
        } else {
            self.k0_valid = false;
        }
    }

    fn reject(&mut self) {
        // k[0] = f(u) is still valid; u did not change
        self.k0_valid = true;
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F: VectorField + ?Sized>(f: &F, u: &[f64], dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::config("rk4_step needs dt > 0"));
    }
    let mut st = Stepper::new(f, &RK4, u.len());
    let mut out = vec![0.0; u.len()];
    st.step(u, dt, &mut out, 0.0, 0.0);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            last_valid: 0,
            reason: "rk4 step produced non-finite values".into(),
        });
    }
    Ok(out)
}

/// Tolerances for the adaptive methods; ignored by fixed-step ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    pub const STRICT: Tolerance = Tolerance {
        rtol: 1e-8,
        atol: 1e-8,
    };
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::STRICT
    }
}

/// States on the grid up to the first failure, and the failure if any.
pub struct Integration {
    /// Rows `0..=k` of the requested grid.
    pub states: Matrix,
    pub failure: Option<Error>,
}

const MAX_SUBSTEPS_PER_INTERVAL: usize = 100_000;

/// Integrates `n_steps` grid intervals of width `dt` from `u0`, stopping at
/// the first blowup or step-size underflow.
pub fn integrate_partial<F: VectorField + ?Sized>(
    f: &F,
    u0: &[f64],
    n_steps: usize,
    dt: f64,
    solver: Solver,
    tol: Tolerance,
) -> Integration {
    let dim = u0.len();
    let mut data = Vec::with_capacity((n_steps + 1) * dim);
    data.extend_from_slice(u0);
    let mut st = Stepper::new(f, solver.tableau(), dim);
    let mut u = u0.to_vec();
    let mut next = vec![0.0; dim];
    let mut h = dt;
    let mut failure = None;

    'grid: for n in 0..n_steps {
        if !solver.is_adaptive() {
            st.step(&u, dt, &mut next, 0.0, 0.0);
            st.accept();
        } else {
            let exponent = -1.0 / (solver.tableau().err_order as f64 + 1.0);
            let mut t = 0.0;
            let mut substeps = 0;
            loop {
                let remaining = dt - t;
                let landing = h >= remaining * (1.0 - 1e-12);
                let step = if landing { remaining } else { h };
                let err = st
                    .step(&u, step, &mut next, tol.rtol, tol.atol)
                    .expect("adaptive tableau has an error estimate");
                substeps += 1;
                let finite = err.is_finite() && next.iter().all(|v| v.is_finite());
                let factor = if finite && err > 0.0 {
                    (0.9 * err.powf(exponent)).clamp(0.2, 5.0)
                } else if finite {
                    5.0
                } else {
                    0.2
                };
                if finite && err <= 1.0 {
                    st.accept();
                    if landing {
                        // a clipped landing step says nothing about the proposal
                        if step >= h {
                            h = step * factor;
                        }
                        break;
                    }
                    t += step;
                    u.copy_from_slice(&next);
                    h = step * factor;
                } else {
                    st.reject();
                    h = step * factor;
                }
                if h < dt * 1e-12 || substeps > MAX_SUBSTEPS_PER_INTERVAL {
                    failure = Some(Error::Integration {
                        last_valid: n,
                        reason: format!("{solver}: step size underflow"),
                    });
                    break 'grid;
                }
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            failure = Some(Error::Integration {
                last_valid: n,
                reason: format!("{solver}: non-finite state"),
            });
            break;
        }
        u.copy_from_slice(&next);
        data.extend_from_slice(&u);
    }
    let rows = data.len() / dim.max(1);
    Integration {
        states: Matrix::from_vec(rows, dim, data),
        failure,
    }
}

/// Like [`integrate_partial`] but fails on any blowup.
pub fn integrate<F: VectorField + ?Sized>(
    f: &F,
    u0: &[f64],
    n_steps: usize,
    dt: f64,
    solver: Solver,
    tol: Tolerance,
) -> Result<Matrix> {
    if n_steps == 0 {
        return Err(Error::config("integrate needs at least one step"));
    }
    if !(dt > 0.0) {
        return Err(Error::config("integrate needs dt > 0"));
    }
    let out = integrate_partial(f, u0, n_steps, dt, solver, tol);
    match out.failure {
        Some(e) => Err(e),
        None => Ok(out.states),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(u: &[f64], out: &mut [f64]) {
        out[0] = -u[0];
    }

    #[test]
    fn rk4_hand_value() {
        let u = rk4_step(&decay, &[1.0], 0.1).unwrap();
        // 1 - h + h²/2 - h³/6 + h⁴/24 at h = 0.1
        assert!((u[0] - 0.904_837_5).abs() < 1e-12);
    }

    #[test]
    fn zero_field_is_constant() {
        let zero = |_: &[f64], out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0);
        for s in Solver::ALL {
            let traj = integrate(&zero, &[1.0, -2.0], 10, 0.1, s, Tolerance::STRICT).unwrap();
            assert_eq!(traj.rows(), 11);
            for r in 0..11 {
                assert_eq!(traj.row(r), &[1.0, -2.0]);
            }
        }
    }

    #[test]
    fn dopri5_decay_matches_exponential() {
        let traj = integrate(&decay, &[1.0], 1, 1.0, Solver::Dopri5, Tolerance::STRICT).unwrap();
        assert!((traj.get(1, 0) - (-1.0f64).exp()).abs() < 1e-7);
        let traj = integrate(&decay, &[1.0], 100, 0.01, Solver::Bosh3, Tolerance::STRICT).unwrap();
        assert!((traj.get(100, 0) - (-1.0f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn fixed_step_orders() {
        let err = |s: Solver, n: usize| {
            let traj = integrate(&decay, &[1.0], n, 1.0 / n as f64, s, Tolerance::STRICT).unwrap();
            (traj.get(n, 0) - (-1.0f64).exp()).abs()
        };
        for (s, order) in [(Solver::Euler, 1.0), (Solver::Midpoint, 2.0), (Solver::Rk4, 4.0)] {
            let slope = (err(s, 20) / err(s, 40)).log2();
            assert!((slope - order).abs() < 0.15, "{s}: {slope}");
        }
    }

    #[test]
    fn blowup_reports_last_valid_index() {
        let explode = |u: &[f64], out: &mut [f64]| out[0] = u[0] * u[0];
        let res = integrate_partial(&explode, &[1.0], 200, 0.01, Solver::Rk4, Tolerance::STRICT);
        let Some(Error::Integration { last_valid, .. }) = res.failure else {
            panic!("expected blowup");
        };
        assert_eq!(res.states.rows(), last_valid + 1);
        assert!(last_valid < 200);
    }

    #[test]
    fn solver_names_round_trip() {
        for s in Solver::ALL {
            assert_eq!(s.name().parse::<Solver>().unwrap(), s);
            let js = serde_json::to_string(&s).unwrap();
            assert_eq!(js, format!("\"{}\"", s.name()));
        }
    }
}
