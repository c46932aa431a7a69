//! Forecast skill and invariant-measure metrics.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, ParamSet};
use crate::data::MinMaxScaler;
use crate::dynamics::{integrate_partial, Solver, Tolerance, Trajectory, VectorField};
use crate::error::{Error, Result};

/// Added to every bin mass before renormalizing.
pub const KL_SMOOTHING: f64 = 1e-10;
pub const DEFAULT_BINS: usize = 50;

/// `√(Σ (û_j − u_j)² / Σ σ_j²)`.
pub fn normalized_error(pred: &[f64], truth: &[f64], sigma: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() != sigma.len() {
        return Err(Error::config("normalized error: length mismatch"));
    }
    let denom: f64 = sigma.iter().map(|s| s * s).sum();
    if !(denom > 0.0) {
        return Err(Error::config("normalized error: Σσ² must be positive"));
    }
    let num: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((num / denom).sqrt())
}

/// Valid prediction time in Lyapunov times, with `σ` the per-dimension
/// standard deviation of `truth`.
pub fn vpt(pred: &Matrix, truth: &Matrix, eps: f64, dt: f64, lyapunov: f64) -> Result<f64> {
    let sigma = crate::dynamics::trajectory::column_std(truth);
    vpt_with_sigma(pred, truth, &sigma, eps, dt, lyapunov)
}

/// [`vpt`] with explicit normalization. Compares the common prefix when
/// `pred` is shorter than `truth`.
pub fn vpt_with_sigma(
    pred: &Matrix,
    truth: &Matrix,
    sigma: &[f64],
    eps: f64,
    dt: f64,
    lyapunov: f64,
) -> Result<f64> {
    if pred.cols() != truth.cols() {
        return Err(Error::config("vpt: dimension mismatch"));
    }
    if !(eps > 0.0) {
        return Err(Error::config("vpt: ε must be positive"));
    }
    let rows = pred.rows().min(truth.rows());
    let mut valid: Option<usize> = None;
    for n in 0..rows {
        if normalized_error(pred.row(n), truth.row(n), sigma)? > eps {
            break;
        }
        valid = Some(n);
    }
    Ok(valid.map_or(0.0, |n| lyapunov * n as f64 * dt))
}

/// Normalized 1-D histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramPdf {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

impl HistogramPdf {
    pub fn bins(&self) -> usize {
        self.masses.len()
    }
}

/// Bin ranges for [`histogram_pdf`].
#[derive(Clone, Debug, PartialEq)]
pub enum RangePolicy {
    /// Each dimension's own min and max.
    Data,
    /// Given `(lo, hi)` per dimension; samples outside fall in the end bins.
    Fixed(Vec<(f64, f64)>),
}

fn column_range(m: &Matrix, j: usize) -> (f64, f64) {
    (0..m.rows()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        let v = m.get(r, j);
        (lo.min(v), hi.max(v))
    })
}

/// Widens a degenerate range so constant data lands in one bin.
fn usable_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = 0.5 * lo.abs().max(1.0);
        (lo - pad, lo + pad)
    }
}

fn histogram_1d<'a>(values: impl Iterator<Item = &'a f64>, bins: usize, lo: f64, hi: f64) -> HistogramPdf {
    let (lo, hi) = usable_range(lo, hi);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    let mut total = 0u64;
    for &v in values {
        if !v.is_finite() {
            continue;
        }
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
        total += 1;
    }
    let masses = if total == 0 {
        vec![1.0 / bins as f64; bins]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    HistogramPdf { edges, masses }
}

/// One histogram per column of `samples`.
pub fn histogram_pdf(samples: &Matrix, bins: usize, range: &RangePolicy) -> Result<Vec<HistogramPdf>> {
    if samples.rows() == 0 || bins == 0 {
        return Err(Error::config("histogram needs samples and at least one bin"));
    }
    let d = samples.cols();
    if let RangePolicy::Fixed(r) = range {
        if r.len() != d {
            return Err(Error::config("histogram range count differs from dimension"));
        }
    }
    let t = samples.transpose();
    Ok((0..d)
        .map(|j| {
            let (lo, hi) = match range {
                RangePolicy::Data => column_range(samples, j),
                RangePolicy::Fixed(r) => r[j],
            };
            histogram_1d(t.row(j).iter(), bins, lo, hi)
        })
        .collect())
}

/// Per-dimension union of the sample ranges of several matrices.
pub fn union_range(sets: &[&Matrix]) -> Vec<(f64, f64)> {
    let d = sets.first().map_or(0, |m| m.cols());
    (0..d)
        .map(|j| {
            sets.iter()
                .filter(|m| m.rows() > 0)
                .map(|m| column_range(m, j))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (lo, hi)| {
                    (a.min(lo), b.max(hi))
                })
        })
        .collect()
}

/// `Σ p_b ln(p_b/q_b)` after adding [`KL_SMOOTHING`] to every mass and
/// renormalizing.
pub fn kl_divergence(p: &HistogramPdf, q: &HistogramPdf) -> Result<f64> {
    if p.edges != q.edges {
        return Err(Error::config("KL divergence needs identical bin edges"));
    }
    kl_masses(&p.masses, &q.masses)
}

fn kl_masses(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::config("KL divergence needs equal bin counts"));
    }
    let smooth = |m: &[f64]| {
        let z: f64 = m.iter().map(|v| v + KL_SMOOTHING).sum();
        m.iter().map(|v| (v + KL_SMOOTHING) / z).collect::<Vec<f64>>()
    };
    let (ps, qs) = (smooth(p), smooth(q));
    let kl: f64 = ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum();
    Ok(kl.max(0.0))
}

/// Dimension-wise KL of `pred` against `reference` over their union range.
pub fn kl_per_dimension(reference: &Matrix, pred: &Matrix, bins: usize) -> Result<Vec<f64>> {
    if reference.cols() != pred.cols() {
        return Err(Error::config("KL: dimension mismatch"));
    }
    let range = RangePolicy::Fixed(union_range(&[reference, pred]));
    let p = histogram_pdf(reference, bins, &range)?;
    let q = histogram_pdf(pred, bins, &range)?;
    p.iter().zip(&q).map(|(a, b)| kl_divergence(a, b)).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Writes `dim,bin,lo,hi,<label>…` rows for histograms sharing edges.
pub fn write_histograms_csv(path: &Path, labels: &[&str], sets: &[&[HistogramPdf]]) -> Result<()> {
    if labels.len() != sets.len() || sets.is_empty() {
        return Err(Error::config("one label per histogram set"));
    }
    let mut text = format!("dim,bin,lo,hi,{}\n", labels.join(","));
    for (j, h) in sets[0].iter().enumerate() {
        for b in 0..h.bins() {
            text.push_str(&format!("{j},{b},{:e},{:e}", h.edges[b], h.edges[b + 1]));
            for s in sets {
                text.push_str(&format!(",{:e}", s[j].masses[b]));
            }
            text.push('\n');
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// A network trained on MinMax-scaled data, viewed as a field in physical
/// units: `f(u) = range ⊙ net(scale(u))`.
pub struct PhysicalModel<'a> {
    pub params: &'a ParamSet,
    pub scaler: &'a MinMaxScaler,
}

impl VectorField for PhysicalModel<'_> {
    fn eval(&self, u: &[f64], out: &mut [f64]) {
        let x = self.scaler.apply(u);
        self.params.apply_into(&x, out);
        for ((o, lo), hi) in out.iter_mut().zip(&self.scaler.min).zip(&self.scaler.max) {
            *o *= hi - lo;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n_starts: usize,
    /// Forecast horizon per start, in Lyapunov times.
    pub horizon: f64,
    pub eps: f64,
    pub solver: Solver,
    pub tolerance: Tolerance,
    pub seed: u64,
    pub bins: usize,
    /// Free-run length per start for the invariant measure, in time units;
    /// never shorter than the forecast horizon.
    pub kl_duration: f64,
}

impl EvalSettings {
    pub fn new(eps: f64) -> Self {
        EvalSettings {
            n_starts: 30,
            horizon: 10.0,
            eps,
            solver: Solver::Dopri5,
            tolerance: Tolerance::STRICT,
            seed: 0,
            bins: DEFAULT_BINS,
            kl_duration: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub eps: f64,
    pub lyapunov_exponent: f64,
    pub horizon: f64,
    pub n_starts: usize,
    pub solver: Solver,
    pub seed: u64,
    pub bins: usize,
    pub kl_duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Reference row index of every start.
    pub starts: Vec<usize>,
    /// Per start, in Lyapunov times.
    pub vpt: Vec<f64>,
    pub vpt_mean: f64,
    pub vpt_std: f64,
    /// Per dimension; absent when no free run stayed finite.
    pub kl: Option<Vec<f64>>,
    pub kl_mean: Option<f64>,
    /// Start indices (into `starts`) whose runs blew up.
    pub blowups: Vec<usize>,
    pub meta: EvalMeta,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Free runs of a model from reference states, with metrics.
pub struct Evaluation {
    pub report: EvalReport,
    /// Pooled finite free-run samples.
    pub samples: Matrix,
}

fn draw_starts(available: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n <= available {
        let mut v = rand::seq::index::sample(&mut rng, available, n).into_vec();
        v.sort_unstable();
        v
    } else {
        use rand::Rng;
        let mut v: Vec<usize> = (0..n).map(|_| rng.random_range(0..available)).collect();
        v.sort_unstable();
        v
    }
}

/// Forecasts from `n_starts` seeded reference states. VPT uses the
/// per-dimension std of the whole reference; KL pools all finite free runs
/// against the whole reference.
pub fn evaluate_model<F: VectorField + Sync + ?Sized>(
    model: &F,
    reference: &Trajectory,
    settings: &EvalSettings,
) -> Result<Evaluation> {
    let spec = &reference.system;
    let lyap = spec.lyapunov_exponent;
    let dt = reference.dt;
    if settings.n_starts == 0 || !(settings.horizon > 0.0) {
        return Err(Error::config("evaluation needs n_starts ≥ 1 and a positive horizon"));
    }
    let horizon_steps = ((settings.horizon / lyap) / dt).round().max(1.0) as usize;
    if horizon_steps >= reference.len() {
        return Err(Error::config(format!(
            "reference of {} rows is shorter than the {horizon_steps}-step horizon",
            reference.len()
        )));
    }
    let run_steps = horizon_steps.max((settings.kl_duration / dt).round() as usize);
    let starts = draw_starts(reference.len() - horizon_steps, settings.n_starts, settings.seed);
    let sigma = reference.std();

    let runs: Vec<_> = starts
        .par_iter()
        .map(|&s| {
            let out = integrate_partial(
                model,
                reference.row(s),
                run_steps,
                dt,
                settings.solver,
                settings.tolerance,
            );
            let truth = reference.slice(s, s + horizon_steps + 1).states;
            let v = vpt_with_sigma(&out.states, &truth, &sigma, settings.eps, dt, lyap);
            (out, v)
        })
        .collect();

    let mut vpts = Vec::with_capacity(runs.len());
    let mut blowups = Vec::new();
    let mut pooled = Vec::new();
    for (i, (out, v)) in runs.into_iter().enumerate() {
        vpts.push(v?);
        if out.failure.is_some() {
            blowups.push(i);
        } else {
            pooled.extend_from_slice(out.states.as_slice());
        }
    }
    let d = reference.dim();
    let samples = Matrix::from_vec(pooled.len() / d, d, pooled);
    let kl = if samples.rows() > 0 {
        Some(kl_per_dimension(&reference.states, &samples, settings.bins)?)
    } else {
        None
    };
    let report = EvalReport {
        vpt_mean: mean(&vpts),
        vpt_std: std_dev(&vpts),
        kl_mean: kl.as_deref().map(mean),
        kl,
        vpt: vpts,
        starts,
        blowups,
        meta: EvalMeta {
            eps: settings.eps,
            lyapunov_exponent: lyap,
            horizon: settings.horizon,
            n_starts: settings.n_starts,
            solver: settings.solver,
            seed: settings.seed,
            bins: settings.bins,
            kl_duration: settings.kl_duration,
        },
    };
    Ok(Evaluation { report, samples })
}

/// Long free runs of one model under several solvers, binned on a shared
/// grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverSweep {
    pub solvers: Vec<Solver>,
    /// One histogram set per successful solver, same order as `solvers`.
    pub pdfs: Vec<Vec<HistogramPdf>>,
    /// Solvers whose run failed, with the reason.
    pub failures: Vec<(Solver, String)>,
}

impl SolverSweep {
    /// Mean-over-dimension KL of `b`'s density against `a`'s.
    pub fn pairwise_kl(&self, a: Solver, b: Solver) -> Option<f64> {
        let ia = self.solvers.iter().position(|&s| s == a)?;
        let ib = self.solvers.iter().position(|&s| s == b)?;
        let kls: Result<Vec<f64>> = self.pdfs[ia]
            .iter()
            .zip(&self.pdfs[ib])
            .map(|(p, q)| kl_divergence(p, q))
            .collect();
        kls.ok().map(|v| mean(&v))
    }

    /// `(a, b, KL)` for every ordered pair of successful solvers.
    pub fn all_pairs(&self) -> Vec<(Solver, Solver, f64)> {
        let mut out = Vec::new();
        for &a in &self.solvers {
            for &b in &self.solvers {
                if a != b {
                    if let Some(k) = self.pairwise_kl(a, b) {
                        out.push((a, b, k));
                    }
                }
            }
        }
        out
    }
}

/// Integrates `duration` time units from `u0` with each solver at grid
/// spacing `dt`. A failing solver is recorded and skipped.
pub fn solver_sweep<F: VectorField + Sync + ?Sized>(
    model: &F,
    u0: &[f64],
    dt: f64,
    duration: f64,
    solvers: &[Solver],
    bins: usize,
    tolerance: Tolerance,
) -> Result<SolverSweep> {
    let n = (duration / dt).round() as usize;
    if n == 0 {
        return Err(Error::config("sweep duration shorter than one step"));
    }
    let runs: Vec<_> = solvers
        .par_iter()
        .map(|&s| (s, integrate_partial(model, u0, n, dt, s, tolerance)))
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (s, run) in runs {
        match run.failure {
            Some(e) => {
                log::warn!("solver {s} failed: {e}");
                failures.push((s, e.to_string()));
            }
            None => ok.push((s, run.states)),
        }
    }
    let mats: Vec<&Matrix> = ok.iter().map(|(_, m)| m).collect();
    let range = RangePolicy::Fixed(union_range(&mats));
    let pdfs = ok
        .iter()
        .map(|(_, m)| histogram_pdf(m, bins, &range))
        .collect::<Result<_>>()?;
    Ok(SolverSweep {
        solvers: ok.iter().map(|(s, _)| *s).collect(),
        pdfs,
        failures,
    })
}

/// Normalized 2-D histogram, row-major over `(x bin, y bin)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointPdf {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub masses: Vec<f64>,
}

/// `(u, ∂u/∂x)` pairs of periodic fields (rows) on `[0, length)`, the
/// derivative by centered differences.
pub fn ks_gradient_pairs(fields: &Matrix, length: f64) -> Matrix {
    let n = fields.cols();
    let dx = length / n as f64;
    let mut data = Vec::with_capacity(fields.rows() * n * 2);
    for r in 0..fields.rows() {
        let u = fields.row(r);
        for j in 0..n {
            let ux = (u[(j + 1) % n] - u[(j + n - 1) % n]) / (2.0 * dx);
            data.push(u[j]);
            data.push(ux);
        }
    }
    Matrix::from_vec(fields.rows() * n, 2, data)
}

/// Joint density of two columns over the given ranges.
pub fn joint_pdf(pairs: &Matrix, bins: usize, x_range: (f64, f64), y_range: (f64, f64)) -> Result<JointPdf> {
    if pairs.cols() != 2 || bins == 0 {
        return Err(Error::config("joint density needs two columns and ≥ 1 bin"));
    }
    let (xl, xh) = usable_range(x_range.0, x_range.1);
    let (yl, yh) = usable_range(y_range.0, y_range.1);
    let (wx, wy) = ((xh - xl) / bins as f64, (yh - yl) / bins as f64);
    let mut counts = vec![0u64; bins * bins];
    let mut total = 0u64;
    for r in 0..pairs.rows() {
        let (x, y) = (pairs.get(r, 0), pairs.get(r, 1));
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        let bx = (((x - xl) / wx).floor().max(0.0) as usize).min(bins - 1);
        let by = (((y - yl) / wy).floor().max(0.0) as usize).min(bins - 1);
        counts[bx * bins + by] += 1;
        total += 1;
    }
    let masses = if total == 0 {
        vec![1.0 / (bins * bins) as f64; bins * bins]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    Ok(JointPdf {
        x_edges: (0..=bins).map(|b| xl + b as f64 * wx).collect(),
        y_edges: (0..=bins).map(|b| yl + b as f64 * wy).collect(),
        masses,
    })
}

/// KL between the `(u, u_x)` densities of two sets of KS fields, binned
/// over their union range.
pub fn ks_joint_kl(reference: &Matrix, pred: &Matrix, length: f64, bins: usize) -> Result<f64> {
    let a = ks_gradient_pairs(reference, length);
    let b = ks_gradient_pairs(pred, length);
    let r = union_range(&[&a, &b]);
    let p = joint_pdf(&a, bins, r[0], r[1])?;
    let q = joint_pdf(&b, bins, r[0], r[1])?;
    kl_masses(&p.masses, &q.masses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_error_cases() {
        assert_eq!(normalized_error(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(normalized_error(&[1.0], &[0.0], &[2.0]).unwrap(), 0.5);
        assert!(normalized_error(&[1.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn vpt_cases() {
        let truth = Matrix::from_vec(6, 1, vec![0.0; 6]);
        let e = [0.1, 0.1, 0.1, 0.1, 0.1, 0.35];
        let pred = Matrix::from_vec(6, 1, e.to_vec());
        let v = vpt_with_sigma(&pred, &truth, &[1.0], 0.3, 0.01, 0.91).unwrap();
        assert!((v - 0.0364).abs() < 1e-15);
        let first_bad = Matrix::from_vec(6, 1, vec![0.5; 6]);
        assert_eq!(vpt_with_sigma(&first_bad, &truth, &[1.0], 0.3, 0.01, 0.91).unwrap(), 0.0);
        let t = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        assert!((vpt(&t, &t, 0.3, 0.01, 0.91).unwrap() - 0.91 * 3.0 * 0.01).abs() < 1e-15);
    }

    #[test]
    fn kl_hand_value() {
        let edges = vec![0.0, 0.5, 1.0];
        let p = HistogramPdf {
            edges: edges.clone(),
            masses: vec![0.5, 0.5],
        };
        let q = HistogramPdf {
            edges,
            masses: vec![0.25, 0.75],
        };
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&p, &q).unwrap() - expect).abs() < 1e-9);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let r = HistogramPdf {
            edges: vec![0.0, 0.4, 1.0],
            masses: vec![0.5, 0.5],
        };
        assert!(kl_divergence(&p, &r).is_err());
    }

    #[test]
    fn constant_samples_fill_one_bin() {
        let m = Matrix::from_vec(10, 1, vec![3.0; 10]);
        let h = &histogram_pdf(&m, 7, &RangePolicy::Data).unwrap()[0];
        assert_eq!(h.masses.iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn joint_density_of_sine() {
        let n = 32;
        let length = std::f64::consts::TAU;
        let fields = Matrix::from_vec(1, n, (0..n).map(|j| (j as f64 * length / n as f64).sin()).collect());
        let pairs = ks_gradient_pairs(&fields, length);
        // centered difference of sin is cos scaled by sinc(dx)
        let dx = length / n as f64;
        assert!((pairs.get(0, 1) - dx.sin() / dx).abs() < 1e-12);
        let j = joint_pdf(&pairs, 4, (-1.0, 1.0), (-1.0, 1.0)).unwrap();
        assert!((j.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(ks_joint_kl(&fields, &fields, length, 8).unwrap(), 0.0);
    }
}
