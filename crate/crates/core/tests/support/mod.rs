#![allow(dead_code)]

pub mod props;
pub mod quadrature;

use wpnode::autodiff::{Matrix, ParamSet, Tape};
use wpnode::data::{make_subdomains, MinMaxScaler};
use wpnode::dynamics::{generate_dataset, Solver, SystemSpec};
use wpnode::training::{combined_loss, strong_loss, strong_loss_value, Rollout};
use wpnode::weakform::{weak_loss, weak_loss_value, weak_weights, SubdomainWeights};

/// A short min-max scaled L63 series.
pub fn l63_scaled(rows: usize) -> (Matrix, f64) {
    let spec = SystemSpec::lorenz63();
    let t = generate_dataset(&spec, rows as f64 * spec.dt, 500, 11).unwrap();
    let s = MinMaxScaler::fit(&t.states).unwrap();
    (s.apply_matrix(&t.states), spec.dt)
}

pub fn weights(m: usize, p: u32, dt: f64) -> SubdomainWeights {
    let layout = make_subdomains(m * 4, m, 2, dt).unwrap();
    weak_weights(&layout.nodes, p, layout.length).unwrap()
}

/// Richardson-extrapolated central differences of `f` at `params`.
pub fn fd_gradient(params: &ParamSet, f: &dyn Fn(&ParamSet) -> f64) -> Vec<f64> {
    let n = params.num_params();
    let mut out = Vec::with_capacity(n);
    let mut work = params.clone();
    let base: Vec<f64> = params.iter().copied().collect();
    for (i, &x) in base.iter().enumerate() {
        let mut at = |v: f64| {
            *work.iter_mut().nth(i).unwrap() = v;
            let r = f(&work);
            *work.iter_mut().nth(i).unwrap() = x;
            r
        };
        let h = 1e-3 * x.abs().max(1.0);
        let d1 = (at(x + h) - at(x - h)) / (2.0 * h);
        let d2 = (at(x + h / 2.0) - at(x - h / 2.0)) / h;
        out.push((4.0 * d2 - d1) / 3.0);
    }
    out
}

/// `‖a − b‖₂ / ‖b‖₂`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

pub enum LossKind {
    Weak,
    Strong(usize, Solver),
    Combined(f64, usize, Solver),
}

/// Reverse-mode and finite-difference gradients of one loss on a D=3 net.
pub fn gradient_pair(kind: &LossKind, hidden: &[usize], seed: u64) -> (Vec<f64>, Vec<f64>) {
    let (series, dt) = l63_scaled(200);
    let params = ParamSet::init(3, hidden, seed);
    let w = weights(10, 4, dt);
    let weak_starts = [0, 17, 60, 133];
    let strong_starts = [5, 40, 99, 150, 180];
    let rollout = |t: usize, solver: Solver| Rollout { steps: t, solver, dt };

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = match *kind {
        LossKind::Weak => weak_loss(&mut tape, &bound, &series, &weak_starts, &w).unwrap(),
        LossKind::Strong(t, s) => {
            let l = strong_loss(&mut tape, &bound, &series, &strong_starts, &rollout(t, s)).unwrap();
            assert!(!l.blowup);
            l.loss
        }
        LossKind::Combined(lambda, t, s) => {
            let l = combined_loss(&mut tape, &bound, &series, &weak_starts, &w, &strong_starts, lambda, &rollout(t, s))
                .unwrap();
            assert!(!l.blowup);
            l.loss
        }
    };
    let ad: Vec<f64> = bound.grad(&tape, loss).unwrap().iter().copied().collect();

    let value = |p: &ParamSet| -> f64 {
        let weak = || weak_loss_value(p, &series, &weak_starts, &w).unwrap();
        let strong = |t, s| strong_loss_value(p, &series, &strong_starts, &rollout(t, s)).unwrap().unwrap();
        match *kind {
            LossKind::Weak => weak(),
            LossKind::Strong(t, s) => strong(t, s),
            LossKind::Combined(lambda, t, s) => weak() + lambda * strong(t, s),
        }
    };
    let fd = fd_gradient(&params, &value);
    (ad, fd)
}

/// Every gradient case of the finite-difference suite with its error.
pub fn gradient_cases() -> Vec<(String, f64)> {
    let mut cases = vec![("weak [8]".to_string(), LossKind::Weak, vec![8])];
    cases.push(("weak [4,4]".into(), LossKind::Weak, vec![4, 4]));
    for t in 1..=3 {
        for s in [Solver::Euler, Solver::Midpoint, Solver::Rk4, Solver::Dopri5] {
            cases.push((format!("strong T={t} {}", s.name()), LossKind::Strong(t, s), vec![8]));
        }
    }
    cases.push(("strong T=3 rk4 [4,4]".into(), LossKind::Strong(3, Solver::Rk4), vec![4, 4]));
    cases.push(("combined λ=0.5 T=2".into(), LossKind::Combined(0.5, 2, Solver::Rk4), vec![8]));
    cases.push(("combined λ=2 T=3 [4,4]".into(), LossKind::Combined(2.0, 3, Solver::Rk4), vec![4, 4]));
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, kind, hidden))| {
            let (ad, fd) = gradient_pair(&kind, &hidden, 100 + i as u64);
            (name, relative_error(&ad, &fd))
        })
        .collect()
}

/// `u(t) = e^{-t}` solved to `t = 1` with `n` steps; absolute error at the end.
pub fn decay_error(solver: Solver, n: usize) -> f64 {
    use wpnode::dynamics::{integrate, Tolerance};
    let f = |u: &[f64], out: &mut [f64]| out[0] = -u[0];
    let m = integrate(&f, &[1.0], n, 1.0 / n as f64, solver, Tolerance::STRICT).unwrap();
    (m.get(n, 0) - (-1.0f64).exp()).abs()
}

/// Least-squares slope of `log err` against `log n`, negated.
pub fn convergence_slope(solver: Solver, ns: &[usize]) -> f64 {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .map(|&n| ((n as f64).ln(), decay_error(solver, n).ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -sxy / sxx
}
