//! Weak-form residuals against the polynomial test functions
//! `φ_p(s) = (1 − s²)^p` on the reference interval `[-1, 1]`.
//!
//! Data and network outputs are interpolated piecewise linearly between the
//! `M` nodes of a subdomain, so the integrals `∫ u φ̇ ds` and
//! `(L/2) ∫ f φ ds` collapse to dot products with precomputed weight
//! vectors `w_lhs` and `w_rhs`. The weights are exact: each is a
//! difference of the antiderivatives `Φ_{p,d} = ∫ φ_p^{(d)}` and
//! `Ψ_{p,d} = ∫ s φ_p^{(d)}` evaluated at neighbouring nodes.
//!
//! The monomial coefficients alternate in sign and reach ~10⁶ for `p = 20`,
//! and neighbouring antiderivative values differ by `O(h)`. Evaluation is
//! therefore carried out in double-double arithmetic and rounded once at
//! the end.

use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Matrix, ParamSet, Tape, Var, WindowPlan};
use crate::error::{Error, Result};

/// Coefficients (index = power of `s`) of `φ_p^{(d)}`.
pub fn phi_derivative_coeffs(p: u32, d: u32) -> Vec<f64> {
    let p = p as usize;
    let d = d as usize;
    if d > 2 * p {
        return vec![0.0];
    }
    let mut coeffs = vec![0.0; 2 * p - d + 1];
    let mut binom = 1.0f64;
    for k in 0..=p {
        if k > 0 {
            binom = binom * (p + 1 - k) as f64 / k as f64;
        }
        let power = 2 * k;
        if power >= d {
            // (2k)! / (2k−d)!
            let falling: f64 = (0..d).map(|j| (power - j) as f64).product();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            coeffs[power - d] = sign * binom.round() * falling;
        }
    }
    coeffs
}

/// Horner evaluation of a coefficient table (index = power).
pub fn eval_poly(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
}

/// Which antiderivative of [`antiderivative_eval`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Antiderivative {
    /// `Φ_{p,d}(s) = ∫ φ_p^{(d)}(s) ds`
    Phi,
    /// `Ψ_{p,d}(s) = ∫ s φ_p^{(d)}(s) ds`
    Psi,
}

/// `Φ_{p,d}(s)` or `Ψ_{p,d}(s)`, with zero integration constant.
pub fn antiderivative_eval(kind: Antiderivative, p: u32, d: u32, s: f64) -> f64 {
    Primitive::new(kind, &phi_derivative_coeffs(p, d)).eval(s).to_f64()
}

/// The test function `φ_p` and its derivative as coefficient tables.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub p: u32,
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
}

impl TestFunction {
    pub fn new(p: u32) -> Result<Self> {
        if p == 0 {
            return Err(Error::config("test-function order p must be positive"));
        }
        Ok(TestFunction {
            p,
            phi: phi_derivative_coeffs(p, 0),
            dphi: phi_derivative_coeffs(p, 1),
        })
    }

    pub fn value(&self, s: f64) -> f64 {
        eval_poly(&self.phi, s)
    }

    pub fn derivative(&self, s: f64) -> f64 {
        eval_poly(&self.dphi, s)
    }

    /// `∫_{-1}^{1} φ_p`, from the primitive.
    pub fn integral(&self) -> f64 {
        let prim = Primitive::new(Antiderivative::Phi, &self.phi);
        (prim.eval(1.0) - prim.eval(-1.0)).to_f64()
    }
}

/// Precomputed weights for one `(nodes, p, L)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubdomainWeights {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub p: u32,
    pub size: usize,
    pub length: f64,
}

impl SubdomainWeights {
    /// Writes `i,w_lhs,w_rhs` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::from("i,w_lhs,w_rhs\n");
        for i in 0..self.size {
            text.push_str(&format!("{i},{:e},{:e}\n", self.lhs[i], self.rhs[i]));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Closed-form weights `w_lhs,i = ∫ ℓ_i φ'` and `w_rhs,i = (L/2) ∫ ℓ_i φ`
/// for the hat functions `ℓ_i` on `nodes`.
pub fn weak_weights(nodes: &[f64], p: u32, length: f64) -> Result<SubdomainWeights> {
    let m = nodes.len();
    if m < 2 {
        return Err(Error::config("weak weights need at least two nodes"));
    }
    if nodes[0] != -1.0 || nodes[m - 1] != 1.0 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config(
            "nodes must increase strictly from -1 to 1",
        ));
    }
    let tf = TestFunction::new(p)?;
    let rhs = hat_moments(nodes, &tf.phi)
        .into_iter()
        .map(|w| (w * Dd::from(length / 2.0)).to_f64())
        .collect();
    let lhs = hat_moments(nodes, &tf.dphi)
        .into_iter()
        .map(Dd::to_f64)
        .collect();
    Ok(SubdomainWeights {
        lhs,
        rhs,
        p,
        size: m,
        length,
    })
}

/// `∫ ℓ_i g` for every hat function, from the primitives of `g` and `s·g`.
fn hat_moments(nodes: &[f64], g: &[f64]) -> Vec<Dd> {
    let big_phi = Primitive::new(Antiderivative::Phi, g);
    let big_psi = Primitive::new(Antiderivative::Psi, g);
    let phi_at: Vec<Dd> = nodes.iter().map(|&s| big_phi.eval(s)).collect();
    let psi_at: Vec<Dd> = nodes.iter().map(|&s| big_psi.eval(s)).collect();
    let m = nodes.len();
    let mut out = vec![Dd::ZERO; m];
    for j in 0..m - 1 {
        // interval [s_j, s_{j+1}]
        let (a, b) = (nodes[j], nodes[j + 1]);
        let h = Dd::from(b) - Dd::from(a);
        let d_phi = phi_at[j + 1] - phi_at[j];
        let d_psi = psi_at[j + 1] - psi_at[j];
        // ∫ (b − s)/h g  → left node j
        out[j] = out[j] + (d_phi * Dd::from(b) - d_psi) / h;
        // ∫ (s − a)/h g  → right node j+1
        out[j + 1] = out[j + 1] + (d_psi - d_phi * Dd::from(a)) / h;
    }
    out
}

/// Per-dimension residual `Σ_i u_i w_lhs,i + Σ_i f_i w_rhs,i`.
pub fn weak_residual(u_nodes: &Matrix, f_nodes: &Matrix, w: &SubdomainWeights) -> Result<Vec<f64>> {
    if u_nodes.shape() != f_nodes.shape() || u_nodes.rows() != w.size {
        return Err(Error::config(format!(
            "weak residual: u {:?}, f {:?}, {} weights",
            u_nodes.shape(),
            f_nodes.shape(),
            w.size
        )));
    }
    let mut r = vec![0.0; u_nodes.cols()];
    for i in 0..w.size {
        for (j, rj) in r.iter_mut().enumerate() {
            *rj += u_nodes.get(i, j) * w.lhs[i] + f_nodes.get(i, j) * w.rhs[i];
        }
    }
    Ok(r)
}

/// The rows of a series touched by a batch of subdomains, and how each
/// subdomain indexes into them.
struct Gathered {
    nodes: Matrix,
    plan: Rc<WindowPlan>,
    base: Matrix,
}

fn gather(series: &Matrix, starts: &[usize], w: &SubdomainWeights) -> Result<Gathered> {
    let n = series.rows();
    let d = series.cols();
    let m = w.size;
    if starts.is_empty() {
        return Err(Error::config("weak loss needs at least one subdomain"));
    }
    let mut used = vec![usize::MAX; n];
    for &s in starts {
        if s + m > n {
            return Err(Error::config(format!(
                "subdomain at {s} of size {m} overruns series of {n} rows"
            )));
        }
        used[s..s + m].fill(0);
    }
    let mut data = Vec::new();
    let mut next = 0;
    for (r, slot) in used.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = next;
            next += 1;
            data.extend_from_slice(series.row(r));
        }
    }
    let nodes = Matrix::from_vec(next, d, data);
    let mut rows = Vec::with_capacity(starts.len() * m);
    let mut base = Matrix::zeros(starts.len(), d);
    for (k, &s) in starts.iter().enumerate() {
        let out = base.row_mut(k);
        for i in 0..m {
            rows.push(used[s + i]);
            for (o, &u) in out.iter_mut().zip(series.row(s + i)) {
                *o += w.lhs[i] * u;
            }
        }
    }
    let plan = Rc::new(WindowPlan {
        rows,
        weights: w.rhs.clone(),
    });
    Ok(Gathered { nodes, plan, base })
}

/// Mean over the subdomains starting at `starts` of `‖r‖²`, with the
/// network evaluated at every node. Differentiable in the bound parameters.
pub fn weak_loss(
    tape: &mut Tape,
    params: &BoundParams,
    series: &Matrix,
    starts: &[usize],
    w: &SubdomainWeights,
) -> Result<Var> {
    let g = gather(series, starts, w)?;
    let x = tape.constant(g.nodes);
    let f = params.forward(tape, x)?;
    let r = tape.window_sum(f, g.base, g.plan)?;
    let ss = tape.sum_squares(r);
    Ok(tape.scale(ss, 1.0 / starts.len() as f64))
}

/// Forward-only [`weak_loss`].
pub fn weak_loss_value(
    params: &ParamSet,
    series: &Matrix,
    starts: &[usize],
    w: &SubdomainWeights,
) -> Result<f64> {
    let g = gather(series, starts, w)?;
    let f = params.apply_batch(&g.nodes)?;
    let m = w.size;
    let mut total = 0.0;
    for k in 0..starts.len() {
        let mut r = g.base.row(k).to_vec();
        for i in 0..m {
            let row = f.row(g.plan.rows[k * m + i]);
            for (rj, fj) in r.iter_mut().zip(row) {
                *rj += w.rhs[i] * fj;
            }
        }
        total += r.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / starts.len() as f64)
}

/// Primitive of a polynomial (`Φ`) or of `s` times it (`Ψ`), coefficients
/// held in double-double.
struct Primitive {
    coeffs: Vec<Dd>,
}

impl Primitive {
    fn new(kind: Antiderivative, g: &[f64]) -> Self {
        let shift = match kind {
            Antiderivative::Phi => 1,
            Antiderivative::Psi => 2,
        };
        let mut coeffs = vec![Dd::ZERO; g.len() + shift];
        for (j, &c) in g.iter().enumerate() {
            coeffs[j + shift] = Dd::from(c).div_f64((j + shift) as f64);
        }
        Primitive { coeffs }
    }

    fn eval(&self, s: f64) -> Dd {
        let x = Dd::from(s);
        self.coeffs
            .iter()
            .rev()
            .fold(Dd::ZERO, |acc, &c| acc * x + c)
    }
}

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let p = two_prod(q1, b);
        let s = two_sum(self.hi, -p.hi);
        let rest = s.lo - p.lo + self.lo;
        let q2 = (s.hi + rest) / b;
        quick_two_sum(q1, q2)
    }
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    Dd { hi: s, lo: err }
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd {
        hi: s,
        lo: b - (s - a),
    }
}

#[inline]
fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    Dd {
        hi: p,
        lo: a.mul_add(b, -p),
    }
}

impl std::ops::Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(r.hi, r.lo + t.lo)
    }
}

impl std::ops::Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + Dd {
            hi: -o.hi,
            lo: -o.lo,
        }
    }
}

impl std::ops::Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = two_prod(self.hi, o.hi);
        quick_two_sum(p.hi, p.lo + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl std::ops::Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        let q = quick_two_sum(q1, q2);
        q + Dd::from(q3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::reference_nodes;

    #[test]
    fn coefficient_tables() {
        assert_eq!(phi_derivative_coeffs(2, 0), vec![1.0, 0.0, -2.0, 0.0, 1.0]);
        assert_eq!(phi_derivative_coeffs(2, 1), vec![0.0, -4.0, 0.0, 4.0]);
        assert_eq!(phi_derivative_coeffs(1, 2), vec![-2.0]);
    }

    #[test]
    fn test_function_structure() {
        for p in 1..=20 {
            let tf = TestFunction::new(p).unwrap();
            assert_eq!(tf.value(0.0), 1.0);
            assert!(tf.value(1.0).abs() < 1e-12, "p={p}");
            assert!(tf.value(-1.0).abs() < 1e-12, "p={p}");
            // even φ, odd φ'
            assert!(tf.phi.iter().skip(1).step_by(2).all(|&c| c == 0.0));
            assert!(tf.dphi.iter().step_by(2).all(|&c| c == 0.0));
        }
        assert!(TestFunction::new(0).is_err());
    }

    #[test]
    fn antiderivative_values() {
        use Antiderivative::*;
        let span = |k, p, d| antiderivative_eval(k, p, d, 1.0) - antiderivative_eval(k, p, d, -1.0);
        assert!((span(Phi, 1, 0) - 4.0 / 3.0).abs() < 1e-15);
        assert!(span(Psi, 1, 0).abs() < 1e-15);
        for p in 1..=16 {
            assert!(span(Phi, p, 1).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_weights() {
        let w = weak_weights(&[-1.0, 0.0, 1.0], 1, 2.0).unwrap();
        let expect_rhs = [0.25, 5.0 / 6.0, 0.25];
        let expect_lhs = [2.0 / 3.0, 0.0, -2.0 / 3.0];
        for i in 0..3 {
            assert!((w.rhs[i] - expect_rhs[i]).abs() < 1e-15);
            assert!((w.lhs[i] - expect_lhs[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_nodes_rejected() {
        assert!(weak_weights(&[0.0], 1, 1.0).is_err());
        assert!(weak_weights(&[-1.0, 0.5, 0.2, 1.0], 1, 1.0).is_err());
        assert!(weak_weights(&[-0.9, 1.0], 1, 1.0).is_err());
    }

    #[test]
    fn linear_data_has_zero_residual() {
        let m = 9;
        let nodes = reference_nodes(m);
        let w = weak_weights(&nodes, 4, 2.0).unwrap();
        // u = s in reference time with L = 2, so du/dt = 1
        let u = Matrix::from_vec(m, 1, nodes.clone());
        let f = Matrix::from_vec(m, 1, vec![1.0; m]);
        assert!(weak_residual(&u, &f, &w).unwrap()[0].abs() < 1e-12);
        let c = Matrix::from_vec(m, 1, vec![3.5; m]);
        let zero = Matrix::zeros(m, 1);
        assert!(weak_residual(&c, &zero, &w).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let w = weak_weights(&reference_nodes(4), 2, 1.0).unwrap();
        let path = dir.path().join("w.csv");
        w.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("i,w_lhs,w_rhs\n0,"));
        assert_eq!(text.lines().count(), 5);
    }
}
