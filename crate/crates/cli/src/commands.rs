use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use wpnode::autodiff::{Checkpoint, ParamSet};
use wpnode::data::MinMaxScaler;
use wpnode::dynamics::{default_burn_in, System, SystemSpec, Trajectory};
use wpnode::evaluation::{
    evaluate_model, histogram_pdf, ks_joint_kl, solver_sweep, union_range, write_histograms_csv,
    EvalReport, EvalSettings, RangePolicy,
};
use wpnode::pipeline::{fit, prepare_dataset, score, TrainedModel};
use wpnode::presets::{preset, ExperimentPreset};
use wpnode::training::{LossMode, TrainReport};
use wpnode::{Error, Result};

use crate::config::resolve;
use crate::manifest::RunManifest;
use crate::{CompareArgs, EvaluateArgs, GenerateArgs, SweepArgs, SweepAxis, TrainArgs};

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Default durations of a system's `*-noise0-wp` preset.
fn system_defaults(system: &str) -> Result<ExperimentPreset> {
    let spec = SystemSpec::by_name(system)?;
    preset(&format!("{}-noise0-wp", spec.system.name()))
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let start = Instant::now();
    let defaults = system_defaults(&a.system)?;
    let spec = defaults.system.clone();
    let duration = a.duration.unwrap_or(defaults.duration);
    let reference_duration = a.reference_duration.unwrap_or(defaults.eval.reference_duration);
    if !(duration > 0.0 && reference_duration > 0.0 && a.noise >= 0.0) {
        return Err(Error::Config("durations must be positive and noise ≥ 0".into()));
    }
    ensure_dir(&a.out)?;
    let ds = prepare_dataset(&spec, duration, reference_duration, a.noise, a.seed)?;
    let name = spec.system.name();
    let stems = [
        (format!("{name}_clean"), &ds.clean),
        (format!("{name}_noisy"), &ds.noisy),
        (format!("{name}_reference"), &ds.reference),
    ];
    let mut m = RunManifest::new(
        "generate",
        json!({
            "system": spec,
            "duration": duration,
            "reference_duration": reference_duration,
            "noise": a.noise,
            "burn_in": default_burn_in(&spec),
        }),
        vec![a.seed],
    );
    for (stem, traj) in &stems {
        traj.save(&a.out, stem)?;
        m.outputs.push(PathBuf::from(format!("{stem}.f64")));
        m.outputs.push(PathBuf::from(format!("{stem}.json")));
    }
    m.wall_time_s = start.elapsed().as_secs_f64();
    m.write(&a.out)
}

fn load_series(data: &Path, spec: &SystemSpec, kind: &str) -> Result<Trajectory> {
    let t = Trajectory::load(data, &format!("{}_{kind}", spec.system.name()))?;
    if t.system.system != spec.system || (t.dt - spec.dt).abs() > 1e-15 {
        return Err(Error::Config(format!(
            "{} holds {} data sampled at {}, configuration expects {} at {}",
            data.display(),
            t.system.system.name(),
            t.dt,
            spec.system.name(),
            spec.dt
        )));
    }
    Ok(t)
}

/// The first `samples` rows of `t`, or all of it when shorter.
fn truncate(t: Trajectory, samples: usize) -> Trajectory {
    if t.len() > samples {
        t.slice(0, samples)
    } else {
        if t.len() < samples {
            log::warn!("data has {} rows, configuration asks for {samples}; using all", t.len());
        }
        t
    }
}

fn checkpoint_meta(p: &ExperimentPreset, scaler: &MinMaxScaler, noise: f64, data_seed: u64) -> Value {
    json!({
        "preset": p.name,
        "method": p.train.loss_mode,
        "noise": noise,
        "system": p.system,
        "train": p.train,
        "scaler": scaler,
        "data_seed": data_seed,
    })
}

fn train_summary(r: &TrainReport) -> Value {
    json!({
        "epochs": r.epochs(),
        "best_epoch": r.best_epoch,
        "best_val_loss": r.best_val_loss,
        "stopped_epoch": r.stopped_epoch,
        "blowups": r.blowups,
    })
}

/// Trains one configuration on `observed` and writes checkpoint, history
/// and manifest into `out`.
fn train_into(p: &ExperimentPreset, observed: &Trajectory, out: &Path, inputs: Vec<PathBuf>) -> Result<TrainedModel> {
    let start = Instant::now();
    ensure_dir(out)?;
    let mut m = RunManifest::new("train", serde_json::to_value(p)?, vec![p.train.seed, observed.seed]);
    m.inputs = inputs;
    match fit(&p.train, observed) {
        Ok((model, report)) => {
            let meta = checkpoint_meta(p, &model.scaler, observed.noise_level, observed.seed);
            model.params.to_checkpoint(meta).save(&out.join("checkpoint.json"))?;
            report.write_history_csv(&out.join("history.csv"))?;
            m.outputs = vec!["checkpoint.json".into(), "history.csv".into()];
            m.summary = train_summary(&report);
            m.wall_time_s = start.elapsed().as_secs_f64();
            m.write(out)?;
            Ok(model)
        }
        Err(e) => {
            if let Error::Diverged { report, .. } = &e {
                report.write_history_csv(&out.join("history.csv"))?;
                m.outputs = vec!["history.csv".into()];
                m.summary = train_summary(report);
            }
            m.summary["error"] = json!(e.to_string());
            m.wall_time_s = start.elapsed().as_secs_f64();
            m.write(out)?;
            Err(e)
        }
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let p = resolve(a.preset.as_deref(), a.config.as_deref(), &a.overrides)?;
    if a.dry_run {
        println!("{}", serde_json::to_string_pretty(&p)?);
        return Ok(());
    }
    let (Some(data), Some(out)) = (a.data, a.out) else {
        return Err(Error::Config("train needs --data and --out".into()));
    };
    let observed = truncate(load_series(&data, &p.system, "noisy")?, p.samples());
    if (observed.noise_level - p.noise).abs() > 1e-12 {
        log::warn!(
            "data noise {} differs from configured {}; the data wins",
            observed.noise_level,
            p.noise
        );
    }
    let input = data.join(format!("{}_noisy.f64", p.system.system.name()));
    train_into(&p, &observed, &out, vec![input]).map(|_| ())
}

/// Checkpoint plus the metadata needed to use it.
struct LoadedModel {
    model: TrainedModel,
    system: SystemSpec,
    meta: Value,
}

fn load_model(path: &Path) -> Result<LoadedModel> {
    let ck = Checkpoint::load(path)?;
    let params = ParamSet::from_checkpoint(&ck)?;
    let field = |k: &str| {
        ck.meta
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Config(format!("{}: checkpoint meta lacks `{k}`", path.display())))
    };
    let scaler: MinMaxScaler = serde_json::from_value(field("scaler")?)?;
    let system: SystemSpec = serde_json::from_value(field("system")?)?;
    if scaler.dim() != params.input_dim() || system.dim() != params.input_dim() {
        return Err(Error::Config(format!("{}: inconsistent dimensions", path.display())));
    }
    Ok(LoadedModel {
        model: TrainedModel { params, scaler },
        system,
        meta: ck.meta,
    })
}

fn checkpoint_path(run: &Path) -> PathBuf {
    if run.is_dir() {
        run.join("checkpoint.json")
    } else {
        run.to_path_buf()
    }
}

fn eval_settings(a: &EvaluateArgs, defaults: &ExperimentPreset) -> EvalSettings {
    let mut s = defaults.eval.settings();
    s.solver = a.solver;
    s.seed = a.seed;
    s.bins = a.bins;
    if let Some(n) = a.n_starts {
        s.n_starts = n;
    }
    if let Some(h) = a.horizon {
        s.horizon = h;
    }
    if let Some(e) = a.eps {
        s.eps = e;
    }
    if let Some(k) = a.kl_duration {
        s.kl_duration = k;
    }
    s
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let loaded = match (&a.checkpoint, a.oracle) {
        (Some(ck), false) => Some(load_model(ck)?),
        (None, true) => None,
        _ => return Err(Error::Config("give exactly one of --checkpoint and --oracle".into())),
    };
    let system = match (&loaded, &a.system) {
        (Some(l), None) => l.system.clone(),
        (Some(l), Some(name)) => {
            let s = SystemSpec::by_name(name)?;
            if s.system != l.system.system {
                return Err(Error::Config("--system disagrees with the checkpoint".into()));
            }
            l.system.clone()
        }
        (None, Some(name)) => SystemSpec::by_name(name)?,
        (None, None) => return Err(Error::Config("--oracle needs --system".into())),
    };
    let out = match (&a.out, &a.checkpoint) {
        (Some(o), _) => o.clone(),
        (None, Some(ck)) => ck.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
        (None, None) => return Err(Error::Config("--oracle needs --out".into())),
    };
    ensure_dir(&out)?;
    let defaults = system_defaults(system.system.name())?;
    let settings = eval_settings(&a, &defaults);
    let reference = load_series(&a.data, &system, "reference")?;

    let oracle_field = system.vector_field();
    let physical = loaded.as_ref().map(|l| l.model.field());
    let field: &(dyn wpnode::dynamics::VectorField + Sync) = match &physical {
        Some(f) => f,
        None => &oracle_field,
    };
    let ev = evaluate_model(field, &reference, &settings)?;
    if !ev.report.blowups.is_empty() {
        log::warn!("{} of {} runs blew up", ev.report.blowups.len(), ev.report.starts.len());
    }
    ev.report.save(&out.join("report.json"))?;
    let mut outputs: Vec<PathBuf> = vec!["report.json".into()];
    let mut summary = json!({
        "vpt_mean": ev.report.vpt_mean,
        "vpt_std": ev.report.vpt_std,
        "kl_mean": ev.report.kl_mean,
        "blowups": ev.report.blowups.len(),
    });

    if ev.samples.rows() > 0 {
        let range = RangePolicy::Fixed(union_range(&[&reference.states, &ev.samples]));
        let h_ref = histogram_pdf(&reference.states, settings.bins, &range)?;
        let h_pred = histogram_pdf(&ev.samples, settings.bins, &range)?;
        write_histograms_csv(&out.join("histograms.csv"), &["reference", "prediction"], &[&h_ref, &h_pred])?;
        outputs.push("histograms.csv".into());
        if let System::Ks { length, .. } = system.system {
            let kl = ks_joint_kl(&reference.states, &ev.samples, length, settings.bins)?;
            summary["ks_joint_kl"] = json!(kl);
        }
    }

    if a.solver_sweep {
        let duration = a.sweep_duration.unwrap_or(defaults.eval.kl_duration);
        let sweep = solver_sweep(
            field,
            reference.row(0),
            reference.dt,
            duration,
            &a.sweep_solvers,
            settings.bins,
            settings.tolerance,
        )?;
        let mut csv = String::from("solver_a,solver_b,kl\n");
        for (x, y, k) in sweep.all_pairs() {
            csv.push_str(&format!("{x},{y},{k:e}\n"));
        }
        write_text(&out.join("sweep.csv"), &csv)?;
        if !sweep.solvers.is_empty() {
            let labels: Vec<&str> = sweep.solvers.iter().map(|s| s.name()).collect();
            let sets: Vec<&[_]> = sweep.pdfs.iter().map(Vec::as_slice).collect();
            write_histograms_csv(&out.join("sweep_histograms.csv"), &labels, &sets)?;
            outputs.push("sweep_histograms.csv".into());
        }
        outputs.push("sweep.csv".into());
        summary["sweep_failures"] = json!(sweep.failures);
    }

    let mut config = serde_json::to_value(&settings)?;
    config["system"] = serde_json::to_value(&system)?;
    config["model"] = match (&a.checkpoint, &loaded) {
        (Some(ck), Some(l)) => json!({ "checkpoint": ck, "meta": l.meta }),
        _ => json!("oracle"),
    };
    let mut m = RunManifest::new("evaluate", config, vec![settings.seed]);
    m.inputs.push(a.data.join(format!("{}_reference.f64", system.system.name())));
    if let Some(ck) = &a.checkpoint {
        m.inputs.push(ck.clone());
    }
    m.outputs = outputs;
    m.summary = summary;
    m.wall_time_s = start.elapsed().as_secs_f64();
    // evaluating into a training directory keeps a single manifest there
    if out.join(crate::manifest::FILE_NAME).exists() {
        if let Ok(mut prev) = RunManifest::read(&out) {
            if prev.command == "train" {
                prev.outputs.extend(m.outputs.iter().cloned());
                prev.summary["evaluation"] = json!({ "config": m.config, "summary": m.summary });
                return prev.write(&out);
            }
        }
    }
    m.write(&out)
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub noise: f64,
    pub vpt_mean: f64,
    pub vpt_std: f64,
    pub kl_mean: Option<f64>,
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let mut rows = Vec::new();
    for run in &a.runs {
        let ck = checkpoint_path(run);
        let loaded = load_model(&ck)?;
        let dir = ck.parent().unwrap_or(Path::new("."));
        let report_path = dir.join("report.json");
        if !report_path.exists() {
            return Err(Error::Config(format!(
                "{}: no report.json; run `wpnode evaluate` first",
                dir.display()
            )));
        }
        let report = EvalReport::load(&report_path)?;
        let method: LossMode = serde_json::from_value(
            loaded
                .meta
                .get("method")
                .cloned()
                .ok_or_else(|| Error::Config(format!("{}: meta lacks `method`", ck.display())))?,
        )?;
        let noise = loaded.meta.get("noise").and_then(Value::as_f64).unwrap_or(0.0);
        rows.push(CompareRow {
            method: method.to_string(),
            noise,
            vpt_mean: report.vpt_mean,
            vpt_std: report.vpt_std,
            kl_mean: report.kl_mean,
        });
    }
    rows.sort_by(|x, y| x.method.cmp(&y.method).then(x.noise.total_cmp(&y.noise)));
    let mut csv = String::from("method,noise,vpt_mean,vpt_std,kl_mean\n");
    for r in &rows {
        let kl = r.kl_mean.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{kl}\n",
            r.method, r.noise, r.vpt_mean, r.vpt_std
        ));
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_text(&a.out, &csv)
}

fn as_count(axis: SweepAxis, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("{axis:?} needs whole numbers, got {v}")))
    }
}

/// The preset with one axis set to `v`.
pub fn apply_axis(base: &ExperimentPreset, axis: SweepAxis, v: f64) -> Result<ExperimentPreset> {
    let mut p = base.clone();
    let t = &mut p.train;
    match axis {
        SweepAxis::Layers => {
            let width = base.train.hidden.first().copied().unwrap_or(64);
            t.hidden = vec![width; as_count(axis, v)?];
        }
        SweepAxis::M => t.subdomain_size = as_count(axis, v)?,
        SweepAxis::SignalLength => p.duration = v,
        SweepAxis::Batch => t.batch_size = as_count(axis, v)?,
        SweepAxis::K => t.subdomains = Some(as_count(axis, v)?),
        SweepAxis::P => t.p = as_count(axis, v)? as u32,
        SweepAxis::Rollouts => t.rollout_t = as_count(axis, v)?,
        SweepAxis::Lambda => t.lambda = v,
    }
    p.train.validate()?;
    if p.duration.is_nan() || p.duration <= 0.0 {
        return Err(Error::Config("signal length must be positive".into()));
    }
    Ok(p)
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Layers => "layers",
        SweepAxis::M => "M",
        SweepAxis::SignalLength => "signal_length",
        SweepAxis::Batch => "batch",
        SweepAxis::K => "K",
        SweepAxis::P => "p",
        SweepAxis::Rollouts => "rollouts",
        SweepAxis::Lambda => "lambda",
    }
}

fn sweep_point(p: &ExperimentPreset, dir: &Path, data_seed: u64, n_starts: Option<usize>) -> Result<EvalReport> {
    let ds = prepare_dataset(&p.system, p.duration, p.eval.reference_duration, p.noise, data_seed)?;
    let model = train_into(p, &ds.noisy, dir, Vec::new())?;
    let mut settings = p.eval.settings();
    if let Some(n) = n_starts {
        settings.n_starts = n;
    }
    let ev = score(&model, &ds.reference, &settings)?;
    ev.report.save(&dir.join("report.json"))?;
    let mut m = RunManifest::read(dir)?;
    m.outputs.push("report.json".into());
    m.summary["evaluation"] = json!({ "vpt_mean": ev.report.vpt_mean, "kl_mean": ev.report.kl_mean });
    m.write(dir)?;
    Ok(ev.report)
}

pub fn sweep(a: SweepArgs, cap: usize) -> Result<()> {
    use rayon::prelude::*;

    let start = Instant::now();
    let base = resolve(a.preset.as_deref(), a.config.as_deref(), &a.overrides)?;
    let points: Vec<(f64, ExperimentPreset)> = a
        .values
        .iter()
        .map(|&v| apply_axis(&base, a.axis, v).map(|p| (v, p)))
        .collect::<Result<_>>()?;
    ensure_dir(&a.out)?;
    let name = axis_name(a.axis);
    let workers = a.workers.clamp(1, cap);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<EvalReport>> = pool.install(|| {
        points
            .par_iter()
            .map(|(v, p)| sweep_point(p, &a.out.join(format!("{name}={v}")), a.data_seed, a.n_starts))
            .collect()
    });
    let mut csv = String::from("axis,value,status,vpt_mean,vpt_std,kl_mean,message\n");
    let mut failures = 0;
    for ((v, _), r) in points.iter().zip(&results) {
        match r {
            Ok(rep) => {
                let kl = rep.kl_mean.map_or_else(|| "nan".to_string(), |k| format!("{k:.6}"));
                csv.push_str(&format!(
                    "{name},{v},ok,{:.6},{:.6},{kl},\n",
                    rep.vpt_mean, rep.vpt_std
                ));
            }
            Err(e) => {
                failures += 1;
                log::warn!("{name}={v} failed: {e}");
                let msg = e.to_string().replace([',', '\n'], ";");
                csv.push_str(&format!("{name},{v},failed,nan,nan,nan,{msg}\n"));
            }
        }
    }
    write_text(&a.out.join("sweep.csv"), &csv)?;
    let mut m = RunManifest::new(
        "sweep",
        json!({ "axis": name, "values": a.values, "base": base, "workers": workers }),
        vec![base.train.seed, a.data_seed],
    );
    m.outputs.push("sweep.csv".into());
    m.summary = json!({ "runs": points.len(), "failures": failures });
    m.wall_time_s = start.elapsed().as_secs_f64();
    m.write(&a.out)
}
