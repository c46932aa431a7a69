mod support;

use support::quadrature::{gauss_legendre, worst_sum_rules, worst_weight_gap};

#[test]
fn quadrature_rule_is_exact_for_polynomials() {
    let rule = gauss_legendre(64);
    let total: f64 = rule.iter().map(|&(x, w)| w * x.powi(40)).sum();
    assert!((total - 2.0 / 41.0).abs() < 1e-15);
}

#[test]
fn closed_form_matches_quadrature() {
    let ps = [1, 2, 3, 5, 8, 12, 16, 20];
    for length in [2.0, 0.59] {
        let worst = worst_weight_gap(&ps, &[3, 10, 33, 60, 120, 200], length);
        assert!(worst < 1e-10, "L={length}: worst deviation {worst:e}");
    }
}

#[test]
fn sum_rules() {
    let ps: Vec<u32> = (1..=20).collect();
    let (lhs, rhs) = worst_sum_rules(&ps, &[3, 60, 200], 0.59);
    assert!(lhs < 1e-12, "{lhs:e}");
    assert!(rhs < 1e-12, "{rhs:e}");
}
