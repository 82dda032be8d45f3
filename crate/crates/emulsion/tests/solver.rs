mod common;

use emulsion::entropy::kappa_diag;
use emulsion::frequencies::FrequencyTriple;
use emulsion::interface::{HatKappa, InteractionPoint, InterfaceEstimator};
use emulsion::phases::alpha_star;
use emulsion::solver::{solve_f_d1, solve_f_d2, solve_f_full, solve_f_l1, xysol_residuals, FieldSet};
use proptest::prelude::*;

/// `f_D1` by direct search: the ratio is maximized over a log-spaced grid of
/// `(x, y)` and then polished by a shrinking pattern search.
fn d1_by_search(r: f64, rho: f64) -> f64 {
    let ratio = |x: f64, y: f64| {
        let num = rho * x * kappa_diag(x).unwrap() + (1.0 - rho) * y * (kappa_diag(y).unwrap() - 0.5 * r);
        num / (rho * x + (1.0 - rho) * y)
    };
    let grid: Vec<f64> = (0..=600).map(|i| 2.0 + (254f64).powf(i as f64 / 600.0) - 1.0).collect();
    let (mut bx, mut by, mut best) = (2.0, 2.0, f64::NEG_INFINITY);
    for &x in &grid {
        for &y in &grid {
            let v = ratio(x, y);
            if v > best {
                (bx, by, best) = (x, y, v);
            }
        }
    }
    let mut h = 0.5;
    while h > 1e-12 {
        let mut moved = false;
        for (dx, dy) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
            let (x, y) = ((bx + dx).max(2.0), (by + dy).max(2.0));
            let v = ratio(x, y);
            if v > best {
                (bx, by, best, moved) = (x, y, v, true);
            }
        }
        if !moved {
            h *= 0.5;
        }
    }
    best
}

#[test]
fn zero_coupling_is_the_diagonal_optimum() {
    for rho in [0.2, 0.6, 0.9] {
        let s = solve_f_d1(0.0, &FrequencyTriple::new(rho, 0.1 * (1.0 - rho)).unwrap()).unwrap();
        assert!((s.value - 0.5 * 5f64.ln()).abs() < 1e-12, "rho={rho}: {}", s.value);
        assert!((s.x - 2.5).abs() < 1e-6 && (s.y - 2.5).abs() < 1e-6);
        let d2 = solve_f_d2(0.0, &FrequencyTriple::new(rho, 0.1 * (1.0 - rho)).unwrap()).unwrap();
        assert!((d2.value - s.value).abs() < 1e-10);
    }
}

#[test]
fn d1_matches_direct_search() {
    for (r, rho) in [(0.3, 0.7), (1.0, 0.5), (2.5, 0.85), (0.05, 0.2)] {
        let s = solve_f_d1(r, &FrequencyTriple::new(rho, 0.0).unwrap()).unwrap();
        let oracle = d1_by_search(r, rho);
        assert!((s.value - oracle).abs() < 1e-9, "r={r} rho={rho}: {} vs {oracle}", s.value);
        let (e1, e2) = xysol_residuals(r, rho, s.x, s.y);
        assert!(e1.abs() < 1e-8 && e2.abs() < 1e-8);
    }
}

#[test]
fn dinkelbach_values_increase_and_settle() {
    let rho = FrequencyTriple::new(0.77, 0.07).unwrap();
    for r in [0.1, 1.0, 3.0] {
        for s in [solve_f_d1(r, &rho).unwrap(), solve_f_d2(r, &rho).unwrap()] {
            assert!(s.trace.len() <= 50, "{:?} took {} iterations", s.label, s.trace.len());
            for w in s.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
            assert!((s.trace.last().unwrap() - s.value).abs() < 1e-10);
        }
    }
}

#[test]
fn d2_departs_from_d1_only_above_alpha_star() {
    let rho = FieldSet::sample(0.3, &common::cheap_fields()).unwrap().frequencies().unwrap();
    let star = alpha_star(0.3, &rho).unwrap().alpha;
    let below = star * 0.5;
    let d1 = solve_f_d1(below, &rho).unwrap().value;
    let d2 = solve_f_d2(below, &rho).unwrap();
    assert!((d2.value - d1).abs() < 1e-9);
    let above = star + 0.5;
    let d2 = solve_f_d2(above, &rho).unwrap();
    assert!(d2.value > solve_f_d1(above, &rho).unwrap().value + 1e-6);
    assert!(d2.excursion.unwrap().b > 0.0);
}

#[test]
fn exact_interface_makes_l1_equal_d2() {
    let rho = FrequencyTriple::new(0.77, 0.07).unwrap();
    let point = InteractionPoint::new(1.5, 0.3).unwrap();
    let l1 = solve_f_l1(point, &rho, &HatKappa::default()).unwrap();
    let d2 = solve_f_d2(point.r(), &rho).unwrap();
    assert!((l1.value - d2.value).abs() < 1e-10);
}

#[test]
fn full_solution_agrees_with_delocalized_formulas() {
    let fields = FieldSet::sample(0.3, &common::cheap_fields()).unwrap();
    let rho = fields.frequencies().unwrap();
    let star = alpha_star(0.3, &rho).unwrap().alpha;
    let phi = HatKappa::default();
    for beta in [0.0, 0.1] {
        let point = InteractionPoint::on_diagonal(0.0, beta).unwrap();
        let full = solve_f_full(point, &fields, &phi).unwrap();
        let d1 = solve_f_d1(0.0, &rho).unwrap();
        assert!((full.value - d1.value).abs() < 1e-3 + 2.0 * full.stderr);
    }
    let r = star + 1.0;
    for beta in [-0.5 * r, -0.2, 0.0] {
        let point = InteractionPoint::on_diagonal(r, beta).unwrap();
        let full = solve_f_full(point, &fields, &phi).unwrap();
        let d2 = solve_f_d2(r, &rho).unwrap();
        assert!(full.value > 0.0);
        assert!((full.value - d2.value).abs() < 1e-3 + 2.0 * full.stderr, "beta={beta}: {} vs {}", full.value, d2.value);
    }
}

#[test]
fn full_solution_is_convex_along_a_diagonal() {
    let fields = FieldSet::sample(0.3, &common::cheap_fields()).unwrap();
    let est = InterfaceEstimator::new(common::cheap_estimator()).unwrap();
    let r = 1.0;
    let betas = [0.0, 0.5, 1.0, 1.5, 2.0];
    let fs: Vec<_> = betas
        .iter()
        .map(|&b| {
            let p = InteractionPoint::on_diagonal(r, b).unwrap();
            solve_f_full(p, &fields, &*est.accessor(p).unwrap()).unwrap()
        })
        .collect();
    for w in fs.windows(3) {
        let second = w[2].value - 2.0 * w[1].value + w[0].value;
        let noise = 2.0 * (w[0].stderr + 2.0 * w[1].stderr + w[2].stderr);
        assert!(second >= -1e-9 - noise, "second difference {second}");
    }
}

#[test]
fn rejects_bad_input() {
    let rho = FrequencyTriple::new(0.5, 0.1).unwrap();
    assert!(solve_f_d1(-0.1, &rho).is_err());
    assert!(solve_f_d2(f64::NAN, &rho).is_err());
    assert!(FrequencyTriple::new(0.8, 0.3).is_err());
    // Almost no A blocks and strong coupling push the A aspect past the cap.
    let sparse = FrequencyTriple::new(0.05, 0.0).unwrap();
    assert!(matches!(solve_f_d1(3.9, &sparse), Err(emulsion::Error::Convergence(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn delocalized_values_depend_on_the_diagonal_only(r in 0.0f64..4.0, b1 in -1.0f64..3.0, b2 in -1.0f64..3.0) {
        let rho = FrequencyTriple::new(0.7, 0.1).unwrap();
        let p1 = InteractionPoint::on_diagonal(r, b1.max(-r / 2.0)).unwrap();
        let p2 = InteractionPoint::on_diagonal(r, b2.max(-r / 2.0)).unwrap();
        let d1 = (solve_f_d1(p1.r(), &rho).unwrap().value - solve_f_d1(p2.r(), &rho).unwrap().value).abs();
        let d2 = (solve_f_d2(p1.r(), &rho).unwrap().value - solve_f_d2(p2.r(), &rho).unwrap().value).abs();
        prop_assert!(d1 < 1e-10 && d2 < 1e-10);
    }

    #[test]
    fn d1_d2_chain(r in 0.0f64..4.0, rho_star in 0.3f64..0.95, share in 0.0f64..1.0) {
        let rho = FrequencyTriple::new(rho_star, share * (1.0 - rho_star)).unwrap();
        let d1 = solve_f_d1(r, &rho).unwrap();
        let d2 = solve_f_d2(r, &rho).unwrap();
        prop_assert!(d1.value <= d2.value + 1e-10);
        let (e1, e2) = xysol_residuals(r, rho_star, d1.x, d1.y);
        prop_assert!(e1.abs() < 1e-8 && e2.abs() < 1e-8);
        prop_assert!(d1.x >= 2.0 && d1.y >= 2.0);
    }
}
