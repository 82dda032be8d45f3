mod common;

use std::f64::consts::LN_2;

use emulsion::blocks::{
    excursion_criterion, localization_test, psi_aa, psi_ba_hat, psi_ba_hat_from, psi_bb, psi_cross, Criterion,
    CrossKind, ExcursionPair,
};
use emulsion::entropy::{block_entropy, interface_entropy};
use emulsion::interface::{HatKappa, InteractionPoint, InterfaceEstimator};
use emulsion::noise::Sign;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `a·ψ_BA^κ̂(r; a)` by brute force over a fine `(b, c)` grid of DOM(a).
fn hat_total_on_grid(r: f64, a: f64, steps: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        let b = i as f64 / steps as f64;
        let c_hi = a - 2.0 + b;
        for j in 0..=steps {
            let c = b + (c_hi - b) * j as f64 / steps as f64;
            let rest = a - c;
            let v = interface_entropy(c, b).unwrap() + block_entropy(rest, 1.0 - b).unwrap() - 0.5 * r * rest;
            best = best.max(v);
        }
    }
    best
}

#[test]
fn closed_forms() {
    assert!((psi_aa(4.0).unwrap().value - LN_2).abs() < 1e-15);
    for a in [2.0, 3.0, 7.0] {
        assert_eq!(psi_bb(0.0, a).unwrap().value, psi_aa(a).unwrap().value);
    }
    assert!((psi_bb(1.0, 2.5).unwrap().value - 0.304719).abs() < 1e-6);
    assert!(psi_aa(1.5).is_err());
}

#[test]
fn hat_excursion_gains_nothing_without_coupling() {
    let hat = psi_ba_hat(0.0, 3.0).unwrap().value;
    let bb = psi_bb(0.0, 3.0).unwrap().value;
    assert!(hat - bb >= 0.0 && hat - bb <= 1e-6, "{hat} vs {bb}");
}

#[test]
fn hat_optimizer_matches_grid_search() {
    for (r, a) in [(0.0, 3.0), (1.0, 4.0), (2.5, 3.0), (4.0, 6.0)] {
        let opt = psi_ba_hat(r, a).unwrap().total();
        let grid = hat_total_on_grid(r, a, 400);
        assert!(grid <= opt + 1e-9, "r={r} a={a}: grid {grid} beats optimizer {opt}");
        assert!(opt - grid < 1e-3, "r={r} a={a}: optimizer {opt} vs grid {grid}");
    }
}

#[test]
fn hat_maximizer_is_unique() {
    let (r, a) = (2.5, 4.0);
    let reference = psi_ba_hat(r, a).unwrap();
    let pair = reference.maximizer.unwrap();
    assert!(pair.b > 0.0, "expected an interior excursion, got {pair:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let b: f64 = rng.random_range(0.05..0.95);
        let c = b + rng.random_range(0.0..1.0) * (a - 2.0);
        let run = psi_ba_hat_from(r, a, ExcursionPair { b, c }).unwrap();
        let p = run.maximizer.unwrap();
        assert!((p.b - pair.b).abs() < 1e-6 && (p.c - pair.c).abs() < 1e-6, "{p:?} vs {pair:?}");
        assert!((run.value - reference.value).abs() < 1e-10);
    }
}

#[test]
fn exact_interface_reduces_cross_to_hat() {
    let phi = HatKappa::default();
    for (alpha, beta, a) in [(1.0, 0.2, 3.0), (3.0, 0.5, 4.0), (2.0, 0.0, 2.5)] {
        let point = InteractionPoint::new(alpha, beta).unwrap();
        let ba = psi_cross(CrossKind::BA, point, a, &phi).unwrap();
        let hat = psi_ba_hat(point.r(), a).unwrap();
        assert!((ba.value - hat.value).abs() < 1e-8, "({alpha},{beta}) a={a}: {} vs {}", ba.value, hat.value);
    }
}

#[test]
fn ab_equals_aa_exactly_when_criterion_is_nonpositive() {
    let phi = HatKappa::default();
    for a in [2.2, 2.5, 3.0, 5.0, 9.0] {
        let point = InteractionPoint::new(0.3, 0.0).unwrap();
        let ab = psi_cross(CrossKind::AB, point, a, &phi).unwrap();
        let aa = psi_aa(a).unwrap();
        let crit = excursion_criterion(point, a, Criterion::AbVsAa, &phi).unwrap();
        if crit.margin.value <= 0.0 {
            assert!((ab.value - aa.value).abs() < 1e-12, "a={a}");
        } else {
            assert!(ab.value > aa.value, "a={a}");
        }
    }
}

#[test]
fn zero_coupling_hat_criterion_is_negative_near_optimal_aspect() {
    let point = InteractionPoint::new(0.0, 0.0).unwrap();
    let c = excursion_criterion(point, 2.5, Criterion::BaHatVsBb, &HatKappa::default()).unwrap();
    assert!(c.margin.value < 0.0);
}

#[test]
fn cross_energies_vanish_for_long_blocks() {
    let phi = HatKappa::default();
    let point = InteractionPoint::new(1.0, 0.2).unwrap();
    for kind in [CrossKind::AB, CrossKind::BA] {
        let far = psi_cross(kind, point, 64.0, &phi).unwrap();
        let near = psi_cross(kind, point, 8.0, &phi).unwrap();
        assert!(far.value < 0.1, "{kind:?}: {}", far.value);
        assert!(far.total() > near.total(), "{kind:?}");
    }
    assert!(psi_aa(64.0).unwrap().total() > psi_aa(8.0).unwrap().total());
}

#[test]
fn localization_off_in_annealed_region_and_on_deep_in_cone() {
    let est = InterfaceEstimator::new(common::cheap_estimator()).unwrap();
    let inside = InteractionPoint::new(1.0, 0.2).unwrap();
    let t = localization_test(inside, 3.0, &*est.accessor(inside).unwrap()).unwrap();
    assert!(!t.localized());

    let deep = InteractionPoint::new(9.0, 8.0).unwrap();
    let phi = est.accessor(deep).unwrap();
    let t = localization_test(deep, 3.0, &*phi).unwrap();
    assert_eq!(t.sign, Sign::Positive, "{t:?}");

    // The direct comparison of the two free energies agrees.
    let ba = psi_cross(CrossKind::BA, deep, 3.0, &*phi).unwrap();
    let hat = psi_ba_hat(deep.r(), 3.0).unwrap();
    assert!(ba.value - hat.value > 2.0 * ba.stderr);
}

#[test]
fn no_excursion_means_no_localization() {
    // At r = 0 the hat maximizer sits on the corner b = c = 0.
    let point = InteractionPoint::new(0.5, 0.5).unwrap();
    let t = localization_test(point, 2.5, &HatKappa::default()).unwrap();
    assert_eq!(t.excursion, ExcursionPair::NONE);
    assert_eq!(t.sign, Sign::NonPositive);
    assert!(t.margin.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chain_with_exact_interface(alpha in 0.0f64..4.0, frac in -1.0f64..1.0, a in 2.0f64..12.0) {
        let point = InteractionPoint::new(alpha, alpha * frac).unwrap();
        let phi = HatKappa::default();
        let bb = psi_bb(point.r(), a).unwrap().value;
        let hat = psi_ba_hat(point.r(), a).unwrap();
        let ba = psi_cross(CrossKind::BA, point, a, &phi).unwrap().value;
        prop_assert!(bb <= hat.value + 1e-12);
        prop_assert!(hat.value <= ba + 1e-8);
        prop_assert!(hat.maximizer.unwrap().in_domain(a));
    }

    #[test]
    fn hat_total_is_concave_in_aspect(r in 0.0f64..4.0, a in 2.1f64..20.0) {
        let h = 1e-2;
        let f = |x: f64| psi_ba_hat(r, x).unwrap().total();
        prop_assert!(f(a + h) - 2.0 * f(a) + f(a - h) <= 1e-8);
    }
}
