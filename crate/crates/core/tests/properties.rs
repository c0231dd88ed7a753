//! Property tests for the invariants that hold for every input.

use std::sync::Arc;

use measure_rigidity::cli::config::ExperimentConfig;
use measure_rigidity::cli::pipeline::{execute, Outcome};
use measure_rigidity::disintegration::{disintegrate, merged, DisintegrationOptions, DEFAULT_MIN_COUNT};
use measure_rigidity::lamination::{Chart, PlaqueId};
use measure_rigidity::metric::{
    doubling_constant, BallMeasure, HausdorffMeasure, LeafMetric, LeafModel, MetricRule, MonotoneMap,
};
use measure_rigidity::packing::{greedy_cover, greedy_pack, transfer_constants, verify_covering, verify_packing};
use measure_rigidity::systems::{orbit, random_initial, CircleConjugacy, RotationNumber, SystemSpec};
use proptest::prelude::*;

const CIRCLE: LeafModel = LeafModel::Circle { circumference: 1.0 };
const INTERVAL: LeafModel = LeafModel::FlatInterval { length: 1.0 };

fn check_axioms(m: &LeafMetric, p: &[Vec<f64>; 3]) -> Result<(), TestCaseError> {
    let d = |a: &[f64], b: &[f64]| m.distance(a, b).unwrap();
    let (ab, ba, bc, ac) = (d(&p[0], &p[1]), d(&p[1], &p[0]), d(&p[1], &p[2]), d(&p[0], &p[2]));
    let tol = 1e-12 * (1.0 + ab + bc);
    prop_assert!(ab >= 0.0);
    prop_assert_eq!(d(&p[0], &p[0]), 0.0);
    prop_assert!((ab - ba).abs() <= tol, "symmetry {} vs {}", ab, ba);
    prop_assert!(ac <= ab + bc + tol, "triangle {} > {} + {}", ac, ab, bc);
    if p[0] != p[1] {
        prop_assert!(ab > 0.0);
    }
    Ok(())
}

fn unit_points(dim: usize) -> impl Strategy<Value = [Vec<f64>; 3]> {
    let pt = prop::collection::vec(0.0..1.0f64, dim);
    (pt.clone(), pt.clone(), pt).prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn interval_metric_axioms(p in unit_points(1)) {
        check_axioms(&LeafMetric::intrinsic(INTERVAL), &p)?;
    }

    #[test]
    fn circle_metric_axioms(p in unit_points(1)) {
        check_axioms(&LeafMetric::intrinsic(CIRCLE), &p)?;
    }

    #[test]
    fn box_metric_axioms(p in unit_points(3)) {
        check_axioms(&LeafMetric::intrinsic(LeafModel::EuclideanBox { dimension: 3, side: 1.0 }), &p)?;
    }

    #[test]
    fn scaled_metric_axioms(p in unit_points(1)) {
        check_axioms(&LeafMetric::scaled(CIRCLE, 7.5).unwrap(), &p)?;
    }

    #[test]
    fn pullback_metric_axioms(p in unit_points(1)) {
        let map: Arc<dyn MonotoneMap> = Arc::new(CircleConjugacy::new(0.4, 0.1).unwrap());
        check_axioms(&LeafMetric::new(CIRCLE, MetricRule::Pullback { map, target: CIRCLE }).unwrap(), &p)?;
    }

    #[test]
    fn one_dimensional_counts_match_interval_oracle(r in 0.01..10.0f64, k in 1.000001..40.0f64) {
        let s = r / k;
        let p = greedy_pack(1, r, s).unwrap();
        let c = greedy_cover(1, r, s).unwrap();
        // Disjoint open intervals of length 2s inside one of length 2r; an
        // open cover needs strictly more than 2r of total length.
        let mut pack = 0usize;
        while (2 * pack + 2) as f64 * s <= 2.0 * r * (1.0 + 1e-12) {
            pack += 1;
        }
        let mut cover = 1usize;
        while cover as f64 * 2.0 * s <= 2.0 * r {
            cover += 1;
        }
        prop_assert_eq!(p.count, pack);
        prop_assert_eq!(c.count, cover);
        prop_assert!(verify_packing(&p) && verify_covering(&c));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn sup_metric_axioms(p in unit_points(1), x in 0.0..1.0f64) {
        let rule = MetricRule::TruncatedSup { system: SystemSpec::neutral_default(), base: x, horizon: 8 };
        check_axioms(&LeafMetric::new(CIRCLE, rule).unwrap(), &p)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn two_dimensional_packings_verify(k in 1.0..12.0f64) {
        let p = greedy_pack(2, 1.0, 1.0 / k).unwrap();
        let c = greedy_cover(2, 1.0, 1.0 / k).unwrap();
        prop_assert!(verify_packing(&p) && verify_covering(&c));
    }

    /// Pullback of the circle through a conjugacy with derivative in
    /// `[1 - a, 1 + a]` against the transfer constants with `Q = 2`.
    #[test]
    fn transfer_bounds_hold_for_conjugacy_pullbacks(a in 0.0..0.8f64, phase in 0.0..1.0f64) {
        let h = CircleConjugacy::new(a, phase).unwrap();
        let map: Arc<dyn MonotoneMap> = Arc::new(h);
        let rho = LeafMetric::new(CIRCLE, MetricRule::Pullback { map, target: CIRCLE }).unwrap();
        let tc = transfer_constants(1.0 - a, 1.0 + a, 1, 2.0).unwrap();
        let lam_rho = HausdorffMeasure::new(rho);
        let d = LeafMetric::intrinsic(CIRCLE);
        let lam = HausdorffMeasure::new(d.clone());
        let centers: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64 / 16.0]).collect();
        let radii: Vec<f64> = (2..8).map(|j| 0.5f64.powi(j)).collect();
        let omega = doubling_constant(&lam_rho, &centers, &radii).unwrap().omega;
        prop_assert!(omega <= tc.r * (1.0 + 1e-9), "doubling {} > R = {}", omega, tc.r);
        for c in &centers {
            for &r in &radii {
                let spans = d.ball_spans(c[0], r, false).unwrap().unwrap();
                let q = lam_rho.span_mass(&spans).unwrap() / lam.ball_mass(c, r).unwrap();
                prop_assert!(q >= tc.alpha * (1.0 - 1e-9) && q <= tc.beta * (1.0 + 1e-9), "ratio {} outside [{}, {}]", q, tc.alpha, tc.beta);
            }
        }
    }
}

fn fiber_systems() -> impl Strategy<Value = SystemSpec> {
    prop_oneof![
        Just(SystemSpec::contracting_default()),
        Just(SystemSpec::ProductDoublingRotation { alpha: RotationNumber::golden() }),
        Just(SystemSpec::ConjugatedRotationCocycle { alpha: RotationNumber::golden(), amplitude: 0.5 }),
        Just(SystemSpec::neutral_default()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn disintegration_conserves_mass_and_merges_exactly(
        spec in fiber_systems(),
        seed in any::<u64>(),
        len in 1_000u64..30_000,
        cells in 1u32..24,
    ) {
        let stream = orbit(&spec, random_initial(&spec, seed), len, seed).unwrap();
        let opts = DisintegrationOptions::default();
        let parent = disintegrate(&stream, &Chart::uniform(0, cells, spec.fiber_model()).unwrap(), &opts).unwrap();
        let child = disintegrate(&stream, &Chart::uniform(1, 2 * cells, spec.fiber_model()).unwrap(), &opts).unwrap();
        let total: f64 = parent.conditionals.values().map(|c| c.raw_mass).sum();
        prop_assert_eq!(total as u64 + parent.skipped, len);
        prop_assert_eq!(parent.binned + parent.skipped, len);
        for c in parent.conditionals.values() {
            let probability: f64 = c.samples().iter().map(|s| s.weight * c.scale).sum();
            prop_assert!((probability - 1.0).abs() < 1e-9);
        }
        for (&id, cond) in &parent.conditionals {
            let kids: Vec<_> = [2 * id.cell, 2 * id.cell + 1]
                .iter()
                .filter_map(|&k| child.conditionals.get(&PlaqueId { chart: 1, cell: k }))
                .collect();
            let m = merged(&kids, id, DEFAULT_MIN_COUNT).unwrap();
            prop_assert_eq!(m.samples(), cond.samples());
        }
    }
}

fn verdict(text: &str) -> &'static str {
    match execute(&ExperimentConfig::parse(text).unwrap()).unwrap() {
        Outcome::Dynamics(d) => d.verdict.kind.name(),
        Outcome::Packing(_) => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn verdict_is_invariant_under_metric_scaling(
        seed in any::<u64>(),
        system in prop_oneof![Just(("rotation", 1)), Just(("contracting_fiber", 64))],
    ) {
        let (kind, cells) = system;
        let base = format!("system.kind = {kind}\norbit.T = 200000\norbit.seed = {seed}\nchart.cells = {cells}\nladder.k_max = 8\n");
        let reference = verdict(&base);
        prop_assert_ne!(reference, "Inconclusive");
        for c in [0.1, 1.0, 10.0] {
            let scaled = verdict(&format!("{base}metric.rule = scaled\nmetric.scale = {c}\n"));
            prop_assert_eq!(scaled, reference, "scale {}", c);
        }
    }
}
