//! Wengert tape over dense matrices.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the nodes in reverse and accumulates adjoints. The op set is
//! deliberately small: affine layers, GELU, linear combinations, squared
//! norms and the windowed weighted sum used by the weak-form residual.
//!
//! A tape is single-threaded and single-use; build a new one per loss
//! evaluation.

use std::rc::Rc;

use super::matrix::{self, Matrix};
use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x · Φ(x)` with Φ the standard normal CDF.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// d/dx of [`gelu`]: `Φ(x) + x φ(x)`.
#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gather pattern for [`Tape::window_sum`]: output row `k` is
/// `Σ_i weights[i] · f[rows[k·m + i]]` with `m = weights.len()`.
#[derive(Clone, Debug)]
pub struct WindowPlan {
    pub rows: Vec<usize>,
    pub weights: Vec<f64>,
}

impl WindowPlan {
    pub fn windows(&self) -> usize {
        if self.weights.is_empty() {
            0
        } else {
            self.rows.len() / self.weights.len()
        }
    }
}

enum Op {
    Leaf,
    /// `x wᵀ + b`, with `b` stored as a 1×out row.
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    /// Keeps `Φ(x)` and `φ(x)` from the forward pass.
    Gelu {
        x: usize,
        cdf: Vec<f64>,
        pdf: Vec<f64>,
    },
    LinComb(Vec<(usize, f64)>),
    SumSquares(usize),
    WindowSum {
        f: usize,
        plan: Rc<WindowPlan>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node reachable from the seed.
pub struct Adjoints {
    grads: Vec<Option<Matrix>>,
}

impl Adjoints {
    /// Adjoint of `v`; `None` if `v` does not influence the seed.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    /// Differentiable input.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input; no adjoint is accumulated for it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.cols() || bv.shape() != (1, wv.rows()) {
            return Err(Error::config(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let value = matrix::linear_forward(xv, wv, bv.as_slice());
        let needs = self.needs(x.0) || self.needs(w.0) || self.needs(b.0);
        Ok(self.push(
            value,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            needs,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.as_slice().len();
        let mut cdf = Vec::with_capacity(n);
        let mut pdf = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for &v in xv.as_slice() {
            let c = normal_cdf(v);
            cdf.push(c);
            pdf.push(normal_pdf(v));
            out.push(v * c);
        }
        let value = Matrix::from_vec(xv.rows(), xv.cols(), out);
        let needs = self.needs(x.0);
        self.push(value, Op::Gelu { x: x.0, cdf, pdf }, needs)
    }

    /// `Σ coeff · term` over same-shaped nodes.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::Usage("lin_comb needs at least one term".into()));
        };
        let shape = self.value(first).shape();
        let mut value = Matrix::zeros(shape.0, shape.1);
        let mut needs = false;
        for &(v, c) in terms {
            let tv = self.value(v);
            if tv.shape() != shape {
                return Err(Error::config(format!(
                    "lin_comb: shape {:?} vs {:?}",
                    tv.shape(),
                    shape
                )));
            }
            value.add_scaled(c, tv);
            needs |= self.needs(v.0);
        }
        let terms = terms.iter().map(|&(v, c)| (v.0, c)).collect();
        Ok(self.push(value, Op::LinComb(terms), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lin_comb(&[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lin_comb(&[(a, 1.0), (b, -1.0)])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.lin_comb(&[(a, c)]).expect("single term")
    }

    /// Sum of squared entries, as a 1×1 node.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).as_slice().iter().map(|v| v * v).sum();
        let needs = self.needs(a.0);
        self.push(Matrix::scalar(s), Op::SumSquares(a.0), needs)
    }

    /// `base + window-weighted sums of rows of f`, one output row per window.
    pub fn window_sum(&mut self, f: Var, base: Matrix, plan: Rc<WindowPlan>) -> Result<Var> {
        let fv = self.value(f);
        let m = plan.weights.len();
        let k = plan.windows();
        if m == 0 || plan.rows.len() != k * m {
            return Err(Error::config("window_sum: malformed plan"));
        }
        if base.shape() != (k, fv.cols()) {
            return Err(Error::config(format!(
                "window_sum: base {:?}, expected ({k}, {})",
                base.shape(),
                fv.cols()
            )));
        }
        if plan.rows.iter().any(|&r| r >= fv.rows()) {
            return Err(Error::config("window_sum: row index out of range"));
        }
        let mut value = base;
        for w in 0..k {
            let out = value.row_mut(w);
            for (i, &wi) in plan.weights.iter().enumerate() {
                matrix::axpy(out, wi, fv.row(plan.rows[w * m + i]));
            }
        }
        let needs = self.needs(f.0);
        Ok(self.push(value, Op::WindowSum { f: f.0, plan }, needs))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, seed: Var) -> Result<Adjoints> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward on an empty tape".into()));
        }
        if self.value(seed).shape() != (1, 1) {
            return Err(Error::Usage("backward seed must be a scalar".into()));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(seed.0 + 1);
        grads.resize_with(seed.0 + 1, || None);
        grads[seed.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=seed.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    if self.needs(*w) || self.needs(*b) {
                        let mut gw = Matrix::zeros(wv.rows(), wv.cols());
                        let mut gb = Matrix::zeros(1, wv.rows());
                        matrix::linear_backward_params(xv, &g, &mut gw, gb.as_mut_slice());
                        if self.needs(*w) {
                            accumulate(&mut grads, *w, gw);
                        }
                        if self.needs(*b) {
                            accumulate(&mut grads, *b, gb);
                        }
                    }
                    if self.needs(*x) {
                        let gx = slot(&mut grads, *x, xv.shape());
                        matrix::linear_backward_input(wv, &g, gx);
                    }
                }
                Op::Gelu { x, cdf, pdf } => {
                    let xv = &self.nodes[*x].value;
                    let gx = slot(&mut grads, *x, xv.shape());
                    for (i, o) in gx.as_mut_slice().iter_mut().enumerate() {
                        let xi = xv.as_slice()[i];
                        *o += g.as_slice()[i] * (cdf[i] + xi * pdf[i]);
                    }
                }
                Op::LinComb(terms) => {
                    for &(t, c) in terms {
                        if self.needs(t) {
                            slot(&mut grads, t, g.shape()).add_scaled(c, &g);
                        }
                    }
                }
                Op::SumSquares(a) => {
                    let av = &self.nodes[*a].value;
                    let s = 2.0 * g.as_slice()[0];
                    slot(&mut grads, *a, av.shape()).add_scaled(s, av);
                }
                Op::WindowSum { f, plan } => {
                    let fv = &self.nodes[*f].value;
                    let gf = slot(&mut grads, *f, fv.shape());
                    let m = plan.weights.len();
                    for w in 0..plan.windows() {
                        let gw = g.row(w);
                        for (i, &wi) in plan.weights.iter().enumerate() {
                            matrix::axpy(gf.row_mut(plan.rows[w * m + i]), wi, gw);
                        }
                    }
                }
            }
        }
        Ok(Adjoints { grads })
    }
}

fn slot(grads: &mut [Option<Matrix>], idx: usize, shape: (usize, usize)) -> &mut Matrix {
    grads[idx].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) {
    match &mut grads[idx] {
        Some(existing) => existing.add_scaled(1.0, &g),
        empty => *empty = Some(g),
    }
}
