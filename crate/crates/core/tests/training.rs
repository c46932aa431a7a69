mod support;

use wpnode::autodiff::ParamSet;
use wpnode::dynamics::{SystemSpec, Solver};
use wpnode::evaluation::EvalSettings;
use wpnode::pipeline::{fit, prepare_dataset, score};
use wpnode::presets::{preset, preset_names, NOISE_LEVELS, SYSTEMS};
use wpnode::training::{train, train_from, LossMode, TrainConfig};
use wpnode::Error;

fn tiny(mode: LossMode) -> TrainConfig {
    let mut c = TrainConfig::defaults(mode);
    c.hidden = vec![8];
    c.max_epochs = 4;
    c.batch_size = 32;
    c.subdomain_size = 10;
    c.subdomains = Some(60);
    c.rollout_t = if mode == LossMode::Strong { 3 } else { 2 };
    c
}

#[test]
fn every_preset_constructs_and_validates() {
    let names = preset_names();
    assert_eq!(names.len(), SYSTEMS.len() * NOISE_LEVELS.len() * 3);
    for n in names {
        let p = preset(&n).unwrap();
        p.train.validate().unwrap();
        assert_eq!(p.name, n);
        assert!(p.samples() > p.train.subdomain_size);
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let (series, dt) = support::l63_scaled(400);
    for mode in LossMode::ALL {
        let (a, ra) = train(&tiny(mode), &series, dt).unwrap();
        let (b, rb) = train(&tiny(mode), &series, dt).unwrap();
        assert_eq!(a, b, "{mode}");
        assert_eq!(ra.val_loss, rb.val_loss);
        let mut other = tiny(mode);
        other.seed += 1;
        let (c, _) = train(&other, &series, dt).unwrap();
        assert_ne!(a, c);
    }
}

#[test]
fn zero_learning_rate_freezes_the_model() {
    let (series, dt) = support::l63_scaled(400);
    for mode in LossMode::ALL {
        let mut c = tiny(mode);
        c.lr = 0.0;
        let init = ParamSet::init(3, &c.hidden, 77);
        let (p, r) = train_from(&c, &series, dt, init.clone()).unwrap();
        assert_eq!(p, init);
        assert!(r.val_loss.windows(2).all(|w| w[0] == w[1]), "{mode}: {:?}", r.val_loss);
        assert!(r.lr.iter().all(|&l| l == 0.0));
    }
}

#[test]
fn losses_decrease_on_clean_data() {
    let (series, dt) = support::l63_scaled(1000);
    for mode in LossMode::ALL {
        let mut c = tiny(mode);
        c.hidden = vec![16, 16];
        c.max_epochs = 30;
        c.subdomains = None;
        c.lr = 0.005;
        let (_, r) = train(&c, &series, dt).unwrap();
        let last = *r.train_loss.last().unwrap();
        assert!(last < 0.2 * r.train_loss[0], "{mode}: {:?}", r.train_loss);
        assert!(r.best_val_loss <= r.val_loss[0]);
        assert_eq!(r.epochs(), 30);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let (series, dt) = support::l63_scaled(100);
    let mut bad = Vec::new();
    let mut c = tiny(LossMode::Wp);
    c.p = 0;
    bad.push(c);
    let mut c = tiny(LossMode::Wp);
    c.subdomain_size = 500;
    bad.push(c);
    let mut c = tiny(LossMode::Strong);
    c.rollout_t = 0;
    bad.push(c);
    let mut c = tiny(LossMode::Wp);
    c.lambda = -1.0;
    bad.push(c);
    let mut c = tiny(LossMode::Wp);
    c.val_fraction = 1.0;
    bad.push(c);
    for c in bad {
        let e = train(&c, &series, dt).unwrap_err();
        assert!(!e.is_numerical(), "{e}");
    }
}

#[test]
fn divergence_is_a_numerical_failure() {
    let (series, dt) = support::l63_scaled(400);
    let mut c = tiny(LossMode::Strong);
    c.lr = 1e300;
    c.solver = Solver::Euler;
    let e = train(&c, &series, dt).unwrap_err();
    assert!(e.is_numerical(), "{e}");
    if let Error::Diverged { report, .. } = e {
        assert!(!report.val_loss.is_empty());
    }
}

#[test]
fn history_csv_has_one_row_per_epoch() {
    let (series, dt) = support::l63_scaled(400);
    let (_, r) = train(&tiny(LossMode::Wp), &series, dt).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    r.write_history_csv(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next(), Some("epoch,train_loss,val_loss,lr"));
    assert_eq!(text.lines().count(), r.epochs() + 1);
}

#[test]
fn pipeline_scores_a_fitted_model() {
    let spec = SystemSpec::lorenz63();
    let ds = prepare_dataset(&spec, 8.0, 30.0, 0.05, 4).unwrap();
    assert_eq!(ds.noisy.len(), 800);
    assert_eq!(ds.reference.len(), 3000);
    assert_eq!(ds.clean.states.row(0), ds.clean.row(0));
    let (model, _) = fit(&tiny(LossMode::Wp), &ds.noisy).unwrap();
    let mut s = EvalSettings::new(spec.vpt_threshold);
    s.n_starts = 4;
    s.horizon = 2.0;
    let ev = score(&model, &ds.reference, &s).unwrap();
    assert_eq!(ev.report.vpt.len(), 4);
    assert!(ev.report.vpt.iter().all(|v| (0.0..=2.0).contains(v)));
}
