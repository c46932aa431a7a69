//! Rollout loss, the combined objective and the Adam training loop.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adam_step, AdamConfig, BoundParams, Matrix, OptimizerState, ParamSet, ReduceOnPlateau, Tape, Var,
};
use crate::data::{make_subdomains, sliding_windows};
use crate::dynamics::{Solver, Tableau};
use crate::error::{Error, Result};
use crate::weakform::{weak_loss, weak_loss_value, weak_weights, SubdomainWeights};

/// Loss reported for a batch whose rollout left the finite range.
pub const BLOWUP_SENTINEL: f64 = 1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Strong,
    Weak,
    Wp,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Strong, LossMode::Weak, LossMode::Wp];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Strong => "strong",
            LossMode::Weak => "weak",
            LossMode::Wp => "wp",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown loss mode `{s}` (strong, weak, wp)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    /// Solver steps per rollout; the window holds `rollout_t + 1` states.
    pub rollout_t: usize,
    pub lambda: f64,
    /// Points per subdomain `M`.
    pub subdomain_size: usize,
    /// Subdomain count `K`; `None` means half the series length.
    pub subdomains: Option<usize>,
    pub p: u32,
    pub batch_size: usize,
    pub lr: f64,
    pub scheduler: SchedulerConfig,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub solver: Solver,
    pub hidden: Vec<usize>,
    pub val_fraction: f64,
}

impl TrainConfig {
    /// Mode-dependent defaults for a system sampled at the given resolution.
    pub fn defaults(mode: LossMode) -> Self {
        let strong = mode == LossMode::Strong;
        TrainConfig {
            loss_mode: mode,
            rollout_t: if strong { 25 } else { 2 },
            lambda: 0.5,
            subdomain_size: 60,
            subdomains: None,
            p: 16,
            batch_size: 1024,
            lr: 0.02,
            scheduler: SchedulerConfig {
                factor: 0.5,
                patience: if strong { 10 } else { 200 },
            },
            max_epochs: if strong { 150 } else { 20_000 },
            early_stop_patience: if strong { 30 } else { 1000 },
            seed: 0,
            solver: Solver::Rk4,
            hidden: vec![200, 200],
            val_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.loss_mode {
            LossMode::Strong if self.rollout_t < 2 => {
                return Err(Error::config("strong mode needs rollout_t ≥ 2"));
            }
            LossMode::Wp if !(1..=25).contains(&self.rollout_t) => {
                return Err(Error::config("wp mode needs 1 ≤ rollout_t ≤ 25"));
            }
            _ => {}
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda must be finite and ≥ 0"));
        }
        if self.loss_mode != LossMode::Strong {
            if self.subdomain_size < 3 {
                return Err(Error::config("subdomain size M must be ≥ 3"));
            }
            if self.p == 0 {
                return Err(Error::config("test-function order p must be ≥ 1"));
            }
            if self.subdomains == Some(0) {
                return Err(Error::config("subdomain count K must be ≥ 1"));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size and max_epochs must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be finite and ≥ 0"));
        }
        if !(self.scheduler.factor > 0.0 && self.scheduler.factor <= 1.0) {
            return Err(Error::config("scheduler factor must lie in (0, 1]"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction must lie in (0, 1)"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden layer sizes must be nonempty and positive"));
        }
        Ok(())
    }

    fn uses_weak(&self) -> bool {
        self.loss_mode != LossMode::Strong
    }

    fn uses_strong(&self) -> bool {
        match self.loss_mode {
            LossMode::Strong => true,
            LossMode::Weak => false,
            LossMode::Wp => self.lambda > 0.0,
        }
    }
}

/// How rollouts are integrated on the tape.
#[derive(Clone, Copy, Debug)]
pub struct Rollout {
    pub steps: usize,
    pub solver: Solver,
    pub dt: f64,
}

/// A tape loss that may have been replaced by [`BLOWUP_SENTINEL`].
#[derive(Clone, Copy, Debug)]
pub struct LossVar {
    pub loss: Var,
    pub blowup: bool,
}

/// One explicit step of `tab` at fixed size `h`. Embedded pairs contribute
/// their propagating solution only.
fn tape_step(tape: &mut Tape, params: &BoundParams, y: Var, h: f64, tab: &Tableau) -> Result<Var> {
    let mut ks: Vec<Var> = Vec::with_capacity(tab.stages());
    for i in 0..tab.stages() {
        let yi = if i == 0 {
            y
        } else {
            let mut terms = vec![(y, 1.0)];
            terms.extend(
                tab.a[i]
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a != 0.0)
                    .map(|(j, &a)| (ks[j], h * a)),
            );
            tape.lin_comb(&terms)?
        };
        ks.push(params.forward(tape, yi)?);
    }
    let mut terms = vec![(y, 1.0)];
    terms.extend(
        tab.b
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(i, &b)| (ks[i], h * b)),
    );
    tape.lin_comb(&terms)
}

fn value_step(params: &ParamSet, y: &Matrix, h: f64, tab: &Tableau) -> Result<Matrix> {
    let mut ks: Vec<Matrix> = Vec::with_capacity(tab.stages());
    for i in 0..tab.stages() {
        let k = if i == 0 {
            params.apply_batch(y)?
        } else {
            let mut yi = y.clone();
            for (j, &a) in tab.a[i].iter().enumerate() {
                if a != 0.0 {
                    yi.add_scaled(h * a, &ks[j]);
                }
            }
            params.apply_batch(&yi)?
        };
        ks.push(k);
    }
    let mut next = y.clone();
    for (i, &b) in tab.b.iter().enumerate() {
        if b != 0.0 {
            next.add_scaled(h * b, &ks[i]);
        }
    }
    Ok(next)
}

fn gather_rows(series: &Matrix, starts: &[usize], offset: usize) -> Matrix {
    let d = series.cols();
    let mut data = Vec::with_capacity(starts.len() * d);
    for &s in starts {
        data.extend_from_slice(series.row(s + offset));
    }
    Matrix::from_vec(starts.len(), d, data)
}

fn check_windows(series: &Matrix, starts: &[usize], r: &Rollout) -> Result<()> {
    if starts.is_empty() {
        return Err(Error::config("strong loss needs at least one window"));
    }
    if r.steps == 0 || !(r.dt > 0.0) {
        return Err(Error::config("rollout needs steps ≥ 1 and dt > 0"));
    }
    if let Some(&s) = starts.iter().find(|&&s| s + r.steps >= series.rows()) {
        return Err(Error::config(format!(
            "window at {s} with {} steps overruns series of {} rows",
            r.steps,
            series.rows()
        )));
    }
    Ok(())
}

/// `(1/T) Σ_{n=1..T} ‖u_n − û_n‖²` averaged over windows, with `û` rolled
/// out from each window's first state. Differentiable through every solver
/// step.
pub fn strong_loss(
    tape: &mut Tape,
    params: &BoundParams,
    series: &Matrix,
    starts: &[usize],
    rollout: &Rollout,
) -> Result<LossVar> {
    check_windows(series, starts, rollout)?;
    let tab = rollout.solver.tableau();
    let mut y = tape.constant(gather_rows(series, starts, 0));
    let mut terms = Vec::with_capacity(rollout.steps);
    for n in 1..=rollout.steps {
        y = tape_step(tape, params, y, rollout.dt, tab)?;
        if !tape.value(y).is_finite() {
            return Ok(LossVar {
                loss: tape.constant(Matrix::scalar(BLOWUP_SENTINEL)),
                blowup: true,
            });
        }
        let target = tape.constant(gather_rows(series, starts, n));
        let diff = tape.sub(y, target)?;
        terms.push((tape.sum_squares(diff), 1.0));
    }
    let total = tape.lin_comb(&terms)?;
    let loss = tape.scale(total, 1.0 / (rollout.steps * starts.len()) as f64);
    Ok(LossVar {
        loss,
        blowup: false,
    })
}

/// Forward-only [`strong_loss`]; `None` on blowup.
pub fn strong_loss_value(
    params: &ParamSet,
    series: &Matrix,
    starts: &[usize],
    rollout: &Rollout,
) -> Result<Option<f64>> {
    check_windows(series, starts, rollout)?;
    let tab = rollout.solver.tableau();
    let mut y = gather_rows(series, starts, 0);
    let mut total = 0.0;
    for n in 1..=rollout.steps {
        y = value_step(params, &y, rollout.dt, tab)?;
        if !y.is_finite() {
            return Ok(None);
        }
        let target = gather_rows(series, starts, n);
        total += y
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(Some(total / (rollout.steps * starts.len()) as f64))
}

/// `weak_loss + λ·strong_loss`. With `λ = 0` no rollout is built and the
/// result is the weak loss node itself.
#[allow(clippy::too_many_arguments)]
pub fn combined_loss(
    tape: &mut Tape,
    params: &BoundParams,
    series: &Matrix,
    weak_starts: &[usize],
    weights: &SubdomainWeights,
    strong_starts: &[usize],
    lambda: f64,
    rollout: &Rollout,
) -> Result<LossVar> {
    if !(lambda >= 0.0) {
        return Err(Error::config("lambda must be ≥ 0"));
    }
    let weak = weak_loss(tape, params, series, weak_starts, weights)?;
    if lambda == 0.0 {
        return Ok(LossVar {
            loss: weak,
            blowup: false,
        });
    }
    let strong = strong_loss(tape, params, series, strong_starts, rollout)?;
    if strong.blowup {
        return Ok(strong);
    }
    Ok(LossVar {
        loss: tape.lin_comb(&[(weak, 1.0), (strong.loss, lambda)])?,
        blowup: false,
    })
}

/// Per-epoch history of one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
    pub blowups: usize,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.val_loss.len()
    }

    /// Writes `epoch,train_loss,val_loss,lr`, epochs counted from 1.
    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("epoch,train_loss,val_loss,lr\n");
        for e in 0..self.epochs() {
            text.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                e + 1,
                self.train_loss[e],
                self.val_loss[e],
                self.lr[e]
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Index sets and weights derived from a config and a series.
struct Plan {
    weights: Option<SubdomainWeights>,
    weak_train: Vec<usize>,
    weak_val: Vec<usize>,
    strong_train: Vec<usize>,
    strong_val: Vec<usize>,
    rollout: Rollout,
}

impl Plan {
    fn new(config: &TrainConfig, n: usize, dt: f64) -> Result<Plan> {
        let rollout = Rollout {
            steps: config.rollout_t,
            solver: config.solver,
            dt,
        };
        let mut plan = Plan {
            weights: None,
            weak_train: Vec::new(),
            weak_val: Vec::new(),
            strong_train: Vec::new(),
            strong_val: Vec::new(),
            rollout,
        };
        if config.uses_weak() {
            let k = config.subdomains.unwrap_or(n / 2).max(1);
            let layout = make_subdomains(n, config.subdomain_size, k, dt)?;
            plan.weights = Some(weak_weights(&layout.nodes, config.p, layout.length)?);
            let (tr, va) = layout.split_tail(config.val_fraction);
            if tr.starts.is_empty() || va.starts.is_empty() {
                return Err(Error::config("too few subdomains for a validation split"));
            }
            plan.weak_train = tr.starts;
            plan.weak_val = va.starts;
        }
        if config.uses_strong() {
            let windows = sliding_windows(n, config.rollout_t + 1, 1)?;
            let (tr, va) = windows.split_tail(config.val_fraction);
            if tr.is_empty() || va.is_empty() {
                return Err(Error::config("too few windows for a validation split"));
            }
            plan.strong_train = tr.starts;
            plan.strong_val = va.starts;
        }
        Ok(plan)
    }

    fn validation_loss(&self, config: &TrainConfig, params: &ParamSet, series: &Matrix) -> Result<f64> {
        let mut total = 0.0;
        if let Some(w) = &self.weights {
            total += weak_loss_value(params, series, &self.weak_val, w)?;
        }
        if config.uses_strong() {
            let scale = if config.loss_mode == LossMode::Wp {
                config.lambda
            } else {
                1.0
            };
            match strong_loss_value(params, series, &self.strong_val, &self.rollout)? {
                Some(v) => total += scale * v,
                None => return Ok(f64::NAN),
            }
        }
        Ok(total)
    }
}

/// Cycles through a shuffled index list, reshuffling on wrap-around.
struct Sampler {
    items: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(items: Vec<usize>) -> Self {
        Sampler { items, cursor: usize::MAX }
    }

    fn draw(&mut self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let count = count.min(self.items.len());
        if self.cursor == usize::MAX || self.cursor + count > self.items.len() {
            self.items.shuffle(rng);
            self.cursor = 0;
        }
        let out = self.items[self.cursor..self.cursor + count].to_vec();
        self.cursor += count;
        out
    }
}

/// Minibatch Adam on a scaled series sampled every `dt`. Returns the
/// parameters with the lowest validation loss seen.
pub fn train(config: &TrainConfig, series: &Matrix, dt: f64) -> Result<(ParamSet, TrainReport)> {
    train_from(config, series, dt, ParamSet::init(series.cols(), &config.hidden, config.seed))
}

/// [`train`] starting from the given parameters.
pub fn train_from(
    config: &TrainConfig,
    series: &Matrix,
    dt: f64,
    init: ParamSet,
) -> Result<(ParamSet, TrainReport)> {
    config.validate()?;
    if !(dt > 0.0) {
        return Err(Error::config("dt must be positive"));
    }
    if init.input_dim() != series.cols() || init.output_dim() != series.cols() {
        return Err(Error::config(format!(
            "network maps {} → {}, data has {} dimensions",
            init.input_dim(),
            init.output_dim(),
            series.cols()
        )));
    }
    if !series.is_finite() {
        return Err(Error::config("training series contains non-finite values"));
    }
    let start = Instant::now();
    let plan = Plan::new(config, series.rows(), dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9));
    let mut params = init;
    let mut opt = OptimizerState::new(&params, AdamConfig::with_lr(config.lr));
    let mut sched = ReduceOnPlateau::new(config.scheduler.factor, config.scheduler.patience);
    let mut report = TrainReport {
        best_val_loss: f64::INFINITY,
        ..TrainReport::default()
    };
    let mut best = params.clone();
    let mut since_best = 0usize;

    let driver = if config.uses_weak() {
        plan.weak_train.clone()
    } else {
        plan.strong_train.clone()
    };
    let mut strong_sampler = Sampler::new(plan.strong_train.clone());
    let mut order = driver;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        let mut batches = 0usize;
        let mut blown = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batches += 1;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let lv = match config.loss_mode {
                LossMode::Weak => LossVar {
                    loss: weak_loss(&mut tape, &bound, series, chunk, plan.weights.as_ref().unwrap())?,
                    blowup: false,
                },
                LossMode::Strong => strong_loss(&mut tape, &bound, series, chunk, &plan.rollout)?,
                LossMode::Wp => {
                    let strong = if config.lambda > 0.0 {
                        strong_sampler.draw(config.batch_size, &mut rng)
                    } else {
                        Vec::new()
                    };
                    combined_loss(
                        &mut tape,
                        &bound,
                        series,
                        chunk,
                        plan.weights.as_ref().unwrap(),
                        &strong,
                        config.lambda,
                        &plan.rollout,
                    )?
                }
            };
            if lv.blowup {
                blown += 1;
                continue;
            }
            let value = tape.scalar(lv.loss);
            let grads = bound.grad(&tape, lv.loss)?;
            adam_step(&mut params, &grads, &mut opt)?;
            loss_sum += value * chunk.len() as f64;
            counted += chunk.len();
        }
        report.blowups += blown;
        if blown * 100 > batches {
            report.stopped_epoch = epoch;
            report.wall_time_s = start.elapsed().as_secs_f64();
            return Err(Error::Training(format!(
                "{blown} of {batches} batches blew up in epoch {epoch}"
            )));
        }
        let train_loss = loss_sum / counted.max(1) as f64;
        let val = plan.validation_loss(config, &params, series)?;
        report.train_loss.push(train_loss);
        report.val_loss.push(val);
        report.lr.push(opt.lr());
        report.stopped_epoch = epoch;
        if !val.is_finite() {
            report.wall_time_s = start.elapsed().as_secs_f64();
            return Err(Error::Diverged {
                epoch,
                report: Box::new(report),
            });
        }
        if val < report.best_val_loss {
            report.best_val_loss = val;
            report.best_epoch = epoch;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        log::debug!(
            "epoch {epoch}: train {train_loss:.4e} val {val:.4e} lr {:.2e}",
            opt.lr()
        );
        let lr = sched.observe(val, opt.lr());
        opt.set_lr(lr);
        if since_best >= config.early_stop_patience {
            break;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((best, report))
}
