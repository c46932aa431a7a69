use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use wpnode::autodiff::{Matrix, ParamSet, Tape};
use wpnode::data::{make_subdomains, reference_nodes, sliding_windows, MinMaxScaler};
use wpnode::dynamics::{integrate, Solver, Tolerance};
use wpnode::evaluation::{
    histogram_pdf, kl_divergence, normalized_error, union_range, vpt_with_sigma, RangePolicy,
};
use wpnode::presets::{preset, preset_names, ExperimentPreset};
use wpnode::weakform::{weak_residual, weak_weights};

pub type Property = fn(u32) -> Result<(), String>;

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-50.0f64..50.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

fn shape() -> impl Strategy<Value = (usize, usize)> {
    (2usize..40, 1usize..6)
}

pub fn weights_are_symmetric(cases: u32) -> Result<(), String> {
    run(cases, (1u32..=20, 2usize..=200, 0.01f64..10.0), |(p, m, l)| {
        let w = weak_weights(&reference_nodes(m), p, l).unwrap();
        for i in 0..m {
            prop_assert!((w.rhs[i] - w.rhs[m - 1 - i]).abs() < 1e-12 * l.max(1.0));
            prop_assert!((w.lhs[i] + w.lhs[m - 1 - i]).abs() < 1e-12);
        }
        Ok(())
    })
}

pub fn residual_vanishes_on_linear_trajectories(cases: u32) -> Result<(), String> {
    let s = (-5.0f64..5.0, -5.0f64..5.0, 1u32..=12, 3usize..=80, 0.001f64..0.1);
    run(cases, s, |(a, b, p, m, dt)| {
        let length = (m - 1) as f64 * dt;
        let w = weak_weights(&reference_nodes(m), p, length).unwrap();
        let u = Matrix::from_vec(m, 1, (0..m).map(|i| a + b * i as f64 * dt).collect());
        let f = Matrix::from_vec(m, 1, vec![b; m]);
        let r = weak_residual(&u, &f, &w).unwrap()[0];
        prop_assert!(r.abs() < 1e-9 * (1.0 + a.abs() + b.abs()), "{r:e}");
        Ok(())
    })
}

pub fn time_reversal_negates_residual(cases: u32) -> Result<(), String> {
    run(cases, (1u32..=10, 3usize..=40, 0u64..1000), |(p, m, seed)| {
        let w = weak_weights(&reference_nodes(m), p, 1.0).unwrap();
        let vals: Vec<f64> = (0..m).map(|i| ((i as f64 + seed as f64) * 0.37).sin()).collect();
        let fv: Vec<f64> = (0..m).map(|i| ((i as f64 * seed as f64) * 0.11).cos()).collect();
        let rev = |v: &[f64]| v.iter().rev().cloned().collect::<Vec<_>>();
        let r = weak_residual(&Matrix::from_vec(m, 1, vals.clone()), &Matrix::from_vec(m, 1, fv.clone()), &w)
            .unwrap()[0];
        let f_r: Vec<f64> = rev(&fv).iter().map(|x| -x).collect();
        let r_r = weak_residual(&Matrix::from_vec(m, 1, rev(&vals)), &Matrix::from_vec(m, 1, f_r), &w).unwrap()[0];
        prop_assert!((r + r_r).abs() < 1e-10);
        Ok(())
    })
}

pub fn vpt_is_monotone_in_threshold(cases: u32) -> Result<(), String> {
    let s = shape().prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c), 0.01f64..2.0, 0.0f64..2.0));
    run(cases, s, |(pred, truth, e1, extra)| {
        let sigma = vec![1.0; truth.cols()];
        let a = vpt_with_sigma(&pred, &truth, &sigma, e1, 0.01, 0.9).unwrap();
        let b = vpt_with_sigma(&pred, &truth, &sigma, e1 + extra, 0.01, 0.9).unwrap();
        prop_assert!(a <= b);
        let full = vpt_with_sigma(&truth, &truth, &sigma, e1, 0.01, 0.9).unwrap();
        prop_assert!((full - 0.9 * 0.01 * (truth.rows() - 1) as f64).abs() < 1e-12);
        prop_assert!(b <= full + 1e-12);
        Ok(())
    })
}

pub fn normalized_error_is_affine_invariant(cases: u32) -> Result<(), String> {
    let s = (1usize..10).prop_flat_map(|d| {
        (
            prop::collection::vec(-10.0f64..10.0, d),
            prop::collection::vec(-10.0f64..10.0, d),
            prop::collection::vec(0.1f64..5.0, d),
            -100.0f64..100.0,
            prop_oneof![-20.0f64..-0.05, 0.05f64..20.0],
        )
    });
    run(cases, s, |(x, y, sigma, shift, scale)| {
        let e = normalized_error(&x, &y, &sigma).unwrap();
        let map = |v: &[f64]| v.iter().map(|a| scale * a + shift).collect::<Vec<_>>();
        let s2: Vec<f64> = sigma.iter().map(|s| s * scale.abs()).collect();
        let e2 = normalized_error(&map(&x), &map(&y), &s2).unwrap();
        prop_assert!((e - e2).abs() <= 1e-9 * (1.0 + e), "{e} vs {e2}");
        prop_assert!(e >= 0.0);
        Ok(())
    })
}

pub fn histograms_are_densities(cases: u32) -> Result<(), String> {
    let s = shape().prop_flat_map(|(r, c)| (matrix(r, c), 1usize..80));
    run(cases, s, |(m, bins)| {
        for h in histogram_pdf(&m, bins, &RangePolicy::Data).unwrap() {
            prop_assert_eq!(h.masses.len(), bins);
            prop_assert_eq!(h.edges.len(), bins + 1);
            prop_assert!(h.masses.iter().all(|&x| x >= 0.0));
            prop_assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(h.edges.windows(2).all(|w| w[1] > w[0]));
        }
        Ok(())
    })
}

pub fn kl_is_nonnegative_and_zero_on_self(cases: u32) -> Result<(), String> {
    let s = shape().prop_flat_map(|(r, c)| (matrix(r, c), matrix(r + 3, c), 2usize..60));
    run(cases, s, |(a, b, bins)| {
        let range = RangePolicy::Fixed(union_range(&[&a, &b]));
        let pa = histogram_pdf(&a, bins, &range).unwrap();
        let pb = histogram_pdf(&b, bins, &range).unwrap();
        for (p, q) in pa.iter().zip(&pb) {
            prop_assert!(kl_divergence(p, q).unwrap() >= 0.0);
            prop_assert!(kl_divergence(p, p).unwrap().abs() < 1e-12);
        }
        Ok(())
    })
}

pub fn scaler_round_trips(cases: u32) -> Result<(), String> {
    let s = shape().prop_flat_map(|(r, c)| matrix(r, c));
    run(cases, s, |m| {
        let sc = MinMaxScaler::fit(&m).unwrap();
        let scaled = sc.apply_matrix(&m);
        prop_assert!(scaled.as_slice().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        let back = sc.invert_matrix(&scaled);
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let json = serde_json::to_string(&sc).unwrap();
        prop_assert_eq!(serde_json::from_str::<MinMaxScaler>(&json).unwrap(), sc);
        Ok(())
    })
}

pub fn presets_round_trip_through_json(cases: u32) -> Result<(), String> {
    let names = preset_names();
    run(cases, prop::sample::select(names), |name| {
        let p = preset(&name).unwrap();
        p.train.validate().unwrap();
        let back: ExperimentPreset = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        prop_assert_eq!(back, p);
        Ok(())
    })
}

pub fn tape_forward_matches_direct_evaluation(cases: u32) -> Result<(), String> {
    let s = (1usize..6, prop::collection::vec(1usize..12, 0..3), 1usize..20, 0u64..1000);
    run(cases, s, |(dim, hidden, rows, seed)| {
        let params = ParamSet::init(dim, &hidden, seed);
        let x = Matrix::from_vec(rows, dim, (0..rows * dim).map(|i| ((i as f64) * 0.731).sin()).collect());
        let direct = params.apply_batch(&x).unwrap();
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = b.forward(&mut tape, xv).unwrap();
        for (a, c) in tape.value(y).as_slice().iter().zip(direct.as_slice()) {
            prop_assert!((a - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
        for r in 0..rows {
            let single = params.apply(x.row(r)).unwrap();
            for (a, c) in single.iter().zip(direct.row(r)) {
                prop_assert!((a - c).abs() <= 1e-12 * (1.0 + c.abs()));
            }
        }
        Ok(())
    })
}

pub fn solvers_are_exact_on_constant_fields(cases: u32) -> Result<(), String> {
    let s = (prop::collection::vec(-5.0f64..5.0, 1..5), 1usize..30, 0.001f64..0.5);
    run(cases, s, |(c, n, dt)| {
        let d = c.len();
        let field = |_: &[f64], out: &mut [f64]| out.copy_from_slice(&c);
        for solver in Solver::ALL {
            let m = integrate(&field, &vec![0.0; d], n, dt, solver, Tolerance::STRICT).unwrap();
            prop_assert_eq!(m.rows(), n + 1);
            for (j, &cj) in c.iter().enumerate() {
                let want = cj * n as f64 * dt;
                prop_assert!((m.get(n, j) - want).abs() <= 1e-9 * (1.0 + want.abs()), "{solver:?}");
            }
        }
        Ok(())
    })
}

pub fn layouts_stay_in_bounds(cases: u32) -> Result<(), String> {
    let s = (10usize..5000, 2usize..200, 1usize..3000, 2usize..30);
    run(cases, s, |(n, m, k, t)| {
        if m <= n {
            let l = make_subdomains(n, m, k, 0.01).unwrap();
            prop_assert!(l.count() <= k);
            prop_assert!(l.starts.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(l.starts.iter().all(|&s| s + m <= n));
            prop_assert_eq!(*l.starts.last().unwrap(), if l.count() > 1 { n - m } else { 0 });
        }
        if t <= n {
            let w = sliding_windows(n, t, 1).unwrap();
            prop_assert_eq!(w.len(), n - t + 1);
            let (a, b) = w.split_tail(0.1);
            prop_assert_eq!(a.len() + b.len(), w.len());
        }
        Ok(())
    })
}

/// Every property with its default case count.
pub fn all() -> Vec<(&'static str, Property, u32)> {
    vec![
        ("weights_are_symmetric", weights_are_symmetric as Property, 256),
        ("residual_vanishes_on_linear_trajectories", residual_vanishes_on_linear_trajectories, 256),
        ("time_reversal_negates_residual", time_reversal_negates_residual, 256),
        ("vpt_is_monotone_in_threshold", vpt_is_monotone_in_threshold, 256),
        ("normalized_error_is_affine_invariant", normalized_error_is_affine_invariant, 256),
        ("histograms_are_densities", histograms_are_densities, 256),
        ("kl_is_nonnegative_and_zero_on_self", kl_is_nonnegative_and_zero_on_self, 256),
        ("scaler_round_trips", scaler_round_trips, 256),
        ("presets_round_trip_through_json", presets_round_trip_through_json, 64),
        ("tape_forward_matches_direct_evaluation", tape_forward_matches_direct_evaluation, 256),
        ("solvers_are_exact_on_constant_fields", solvers_are_exact_on_constant_fields, 128),
        ("layouts_stay_in_bounds", layouts_stay_in_bounds, 256),
    ]
}
