mod support;

use support::{gradient_pair, relative_error, LossKind};
use wpnode::autodiff::{ParamSet, Tape};
use wpnode::dynamics::Solver;
use wpnode::training::{combined_loss, Rollout};
use wpnode::weakform::weak_loss;

const TOL: f64 = 1e-5;

fn check(kind: LossKind, hidden: &[usize]) {
    let (ad, fd) = gradient_pair(&kind, hidden, 5);
    let err = relative_error(&ad, &fd);
    assert!(err < TOL, "relative error {err:e}");
}

#[test]
fn weak_loss_matches_finite_differences() {
    check(LossKind::Weak, &[8]);
    check(LossKind::Weak, &[4, 4]);
}

#[test]
fn strong_loss_matches_finite_differences() {
    for t in 1..=3 {
        for s in [Solver::Euler, Solver::Midpoint, Solver::Rk4, Solver::Bosh3, Solver::Dopri5] {
            check(LossKind::Strong(t, s), &[8]);
        }
    }
}

#[test]
fn combined_loss_matches_finite_differences() {
    check(LossKind::Combined(0.5, 2, Solver::Rk4), &[8]);
    check(LossKind::Combined(3.0, 3, Solver::Midpoint), &[4, 4]);
}

#[test]
fn zero_lambda_is_the_weak_loss() {
    let (series, dt) = support::l63_scaled(120);
    let w = support::weights(10, 4, dt);
    let params = ParamSet::init(3, &[6], 9);
    let rollout = Rollout { steps: 2, solver: Solver::Rk4, dt };

    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let weak = weak_loss(&mut tape, &b, &series, &[0, 30], &w).unwrap();
    let g_weak: Vec<f64> = b.grad(&tape, weak).unwrap().iter().copied().collect();

    let mut tape2 = Tape::new();
    let b2 = params.bind(&mut tape2);
    let c = combined_loss(&mut tape2, &b2, &series, &[0, 30], &w, &[1, 2], 0.0, &rollout).unwrap();
    let g_comb: Vec<f64> = b2.grad(&tape2, c.loss).unwrap().iter().copied().collect();

    assert_eq!(tape.scalar(weak), tape2.scalar(c.loss));
    assert_eq!(g_weak, g_comb);
}
