use wpnode::data::reference_nodes;
use wpnode::weakform::{weak_weights, TestFunction};

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite Gauss–Legendre integration of `ℓ_i·g` over each node interval.
pub fn quadrature_weights(nodes: &[f64], g: impl Fn(f64) -> f64) -> Vec<f64> {
    let rule = gauss_legendre(64);
    let m = nodes.len();
    let mut w = vec![0.0; m];
    for j in 0..m - 1 {
        let (a, b) = (nodes[j], nodes[j + 1]);
        let (half, mid) = ((b - a) / 2.0, (a + b) / 2.0);
        for &(x, wq) in &rule {
            let s = mid + half * x;
            let gs = g(s) * wq * half;
            w[j] += (b - s) / (b - a) * gs;
            w[j + 1] += (s - a) / (b - a) * gs;
        }
    }
    w
}

/// Largest absolute gap between closed-form and quadrature weights.
pub fn worst_weight_gap(ps: &[u32], ms: &[usize], length: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for &p in ps {
        let tf = TestFunction::new(p).unwrap();
        for &m in ms {
            let nodes = reference_nodes(m);
            let w = weak_weights(&nodes, p, length).unwrap();
            let scale = length / 2.0;
            let rhs = quadrature_weights(&nodes, |s| scale * tf.value(s));
            let lhs = quadrature_weights(&nodes, |s| tf.derivative(s));
            for i in 0..m {
                worst = worst.max((w.rhs[i] - rhs[i]).abs());
                worst = worst.max((w.lhs[i] - lhs[i]).abs());
            }
        }
    }
    worst
}

/// Worst `|Σ w_lhs|` and worst relative gap of `Σ w_rhs` to `(L/2)∫φ`.
pub fn worst_sum_rules(ps: &[u32], ms: &[usize], length: f64) -> (f64, f64) {
    let (mut lhs, mut rhs): (f64, f64) = (0.0, 0.0);
    for &p in ps {
        let target = length / 2.0 * TestFunction::new(p).unwrap().integral();
        for &m in ms {
            let w = weak_weights(&reference_nodes(m), p, length).unwrap();
            lhs = lhs.max(w.lhs.iter().sum::<f64>().abs());
            rhs = rhs.max((w.rhs.iter().sum::<f64>() - target).abs() / target.abs());
        }
    }
    (lhs, rhs)
}
