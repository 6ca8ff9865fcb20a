//! Invariants checked over generated inputs.

mod common;

use dbexp_core::bounds::{as_bound, cluster_bound, compare_bounds, iterative_bound, Verdict, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use dbexp_core::cluster::ClusterIndex;
use dbexp_core::covariates::{cluster_totals, spec_i, spec_ii, zero_center};
use dbexp_core::design::{Design, Provenance, StackedOutcomes};
use dbexp_core::estimators::{
    coef_2r, coef_ols, coef_wls_pi, fixed_coef_variance, forms, greg, greg_fixed, ht_ate, intercept_contrast, Sample,
    WeightedSystem,
};
use dbexp_core::optimal::b_opt;
use dbexp_core::simulation::{run_simulation, SimConfig};
use dbexp_core::Execution;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn complete_design() -> impl Strategy<Value = Design> {
    (2usize..=7).prop_flat_map(|n| (Just(n), 1..n)).prop_map(|(n, n1)| Design::complete(n, n1).unwrap())
}

fn bernoulli_design() -> impl Strategy<Value = Design> {
    prop::collection::vec(0.1f64..0.9, 2..=6).prop_map(|pi| Design::bernoulli(&pi).unwrap())
}

fn cluster_design() -> impl Strategy<Value = Design> {
    prop::collection::vec(1i64..=4, 3..=8)
        .prop_filter("at least two clusters", |ids| {
            let mut u = ids.clone();
            u.sort();
            u.dedup();
            u.len() >= 2
        })
        .prop_flat_map(|ids| {
            let mut u = ids.clone();
            u.sort();
            u.dedup();
            (Just(ids), 1..u.len())
        })
        .prop_map(|(ids, m1)| Design::cluster(&ids, m1).unwrap())
}

fn any_design() -> impl Strategy<Value = Design> {
    prop_oneof![complete_design(), bernoulli_design(), cluster_design()]
}

fn outcomes(n: usize) -> impl Strategy<Value = StackedOutcomes> {
    (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n))
        .prop_map(|(a, b)| StackedOutcomes::new(&a, &b).unwrap())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

/// A design with matching outcomes, centered covariates (k columns) and an
/// assignment drawn from its support.
fn scenario(k: usize) -> impl Strategy<Value = (Design, StackedOutcomes, DMatrix<f64>, u64)> {
    any_design().prop_flat_map(move |d| {
        let n = d.n();
        (Just(d), outcomes(n), matrix(n, k).prop_map(|x| zero_center(&x)), any::<u64>())
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn cross_arm_self_pairs_are_minus_one(d in any_design()) {
        let n = d.n();
        let dm = d.design_matrix().unwrap();
        for i in 0..n {
            prop_assert_eq!(dm[(i, n + i)], -1.0);
            prop_assert_eq!(dm[(n + i, i)], -1.0);
        }
    }

    #[test]
    fn marginals_sum_to_one(d in any_design()) {
        let n = d.n();
        let p = d.joint();
        for i in 0..n {
            prop_assert!((p[(i, i)] + p[(n + i, n + i)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_round_trip_preserves_design_matrix(d in any_design()) {
        let again = Design::from_joint(d.joint().clone(), d.provenance().clone()).unwrap();
        prop_assert_eq!(again.design_matrix().unwrap(), d.design_matrix().unwrap());
    }

    #[test]
    fn ht_is_unbiased_by_enumeration((d, y, _, _) in scenario(0)) {
        let sup = common::support(&d);
        let (mean, var) = common::moments(&sup, |z| ht_ate(&Sample::observe(&y, z), &d, d.n()).unwrap());
        prop_assert!(common::close(mean, y.ate(), 1e-10));
        let n2 = (d.n() * d.n()) as f64;
        let exact = y.values().dot(&(d.design_matrix().unwrap() * y.values())) / n2;
        prop_assert!(common::close(var, exact, 1e-10), "{} vs {}", var, exact);
    }

    #[test]
    fn fixed_coefficient_greg_unbiased_with_lemma_variance((d, y, x, seed) in scenario(2)) {
        let spec = spec_ii(&x);
        let b = common::random_vector(spec.ncols(), &mut common::rng(seed));
        let sup = common::support(&d);
        let (mean, var) = common::moments(&sup, |z| greg_fixed(&Sample::observe(&y, z), &d, &spec, &b).unwrap().point);
        prop_assert!(common::close(mean, y.ate(), 1e-10));
        let lemma = fixed_coef_variance(&y, &spec, &b, d.design_matrix().unwrap());
        prop_assert!(common::close(var, lemma, 1e-10), "{} vs {}", var, lemma);
    }

    #[test]
    fn canonical_and_residual_forms_agree((d, y, x, seed) in scenario(1)) {
        let spec = spec_i(&x);
        let mut r = common::rng(seed);
        let b = common::random_vector(spec.ncols(), &mut r);
        let z = d.draw(&mut r).unwrap();
        let s = Sample::observe(&y, &z);
        let canonical = greg_fixed(&s, &d, &spec, &b).unwrap().point;
        let (resid, fitted) = forms::residual_parts(&s, &d, &spec, &b);
        prop_assert!(common::close(canonical, resid + fitted, 1e-10));
        prop_assert!(common::close(canonical, forms::expanded(&s, &d, &spec, &b), 1e-10));
    }

    #[test]
    fn spec_i_restricts_spec_ii(x in matrix(5, 2), a0 in -3.0f64..3.0, a1 in -3.0f64..3.0, s in matrix(2, 1)) {
        let bi = DVector::from_vec(vec![a0, a1, s[0], s[1]]);
        let bii = DVector::from_vec(vec![a0, s[0], s[1], a1, s[0], s[1]]);
        let lhs = spec_i(&x).fitted(&bi);
        let rhs = spec_ii(&x).fitted(&bii);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn singleton_cluster_totals_are_identity(x in matrix(6, 2)) {
        let idx = ClusterIndex::new(&[6, 5, 4, 3, 2, 1]).unwrap();
        let t = cluster_totals(&x, &idx).unwrap();
        // Clusters are ordered by ascending id, which reverses the rows here.
        for i in 0..6 {
            prop_assert_eq!(t.row(i), x.row(5 - i));
        }
    }

    #[test]
    fn centered_spec_ii_treated_columns_sum_to_zero(x in matrix(7, 3)) {
        let spec = spec_ii(&zero_center(&x));
        let xm = spec.xmat();
        for j in 5..8 {
            prop_assert!(xm.column(j).rows(7, 7).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn intercept_contrast_matches_point((d, y, x, seed) in scenario(2)) {
        let mut r = common::rng(seed);
        let z = d.draw(&mut r).unwrap();
        let s = Sample::observe(&y, &z);
        for spec in [spec_i(&x), spec_ii(&x)] {
            let wls = coef_wls_pi(&spec, &s, &d).unwrap();
            let point = greg(&s, &d, &spec, &wls).unwrap().point;
            prop_assert!(common::close(intercept_contrast(&wls.b, &spec).unwrap(), point, 1e-10));
            if d.equal_pi() {
                let ols = coef_ols(&spec, &s).unwrap();
                let point = greg(&s, &d, &spec, &ols).unwrap().point;
                prop_assert!(common::close(intercept_contrast(&ols.b, &spec).unwrap(), point, 1e-10));
            }
        }
    }

    #[test]
    fn two_r_invariant_to_affine_outcomes((d, y, x, seed) in scenario(1), c in -4.0f64..4.0, f in 0.2f64..4.0) {
        let spec = spec_ii(&x);
        let sys = WeightedSystem::new(&spec, d.design_matrix().unwrap()).unwrap();
        let mut r = common::rng(seed);
        let z = d.draw(&mut r).unwrap();
        let s = Sample::observe(&y, &z);
        // The shift is absorbed only when the π-WLS fit is identified; with a
        // rank-deficient fit the minimum-norm solution is not equivariant.
        prop_assume!(!coef_wls_pi(&spec, &s, &d).unwrap().rank_deficient);
        let base = greg(&s, &d, &spec, &coef_2r(&sys, &spec, &s, &d).unwrap()).unwrap().point;
        let n = d.n();
        let shifted: DVector<f64> = DVector::from_fn(2 * n, |i, _| f * y.values()[i] + if i < n { -c } else { c });
        let y2 = StackedOutcomes::from_stacked(shifted).unwrap();
        let s2 = Sample::observe(&y2, &z);
        let moved = greg(&s2, &d, &spec, &coef_2r(&sys, &spec, &s2, &d).unwrap()).unwrap().point;
        // Adding c·(−1ₙ; 1ₙ) shifts both potential outcomes by c, leaving every
        // contrast unchanged, so only the scale f survives.
        prop_assert!((moved - f * base).abs() <= 1e-6 * (1.0 + moved.abs()), "{} vs {}", moved, f * base);
    }

    #[test]
    fn bounds_dominate_the_true_quadratic(d in any_design(), seed in any::<u64>()) {
        let dm = d.design_matrix().unwrap();
        let mut bounds = vec![as_bound(dm).unwrap()];
        if let Some(idx) = d.clusters() {
            bounds.push(cluster_bound(dm, idx).unwrap());
        }
        if let Ok(m) = iterative_bound(dm, DEFAULT_MAX_ITERS, DEFAULT_TOL) {
            bounds.push(m);
        }
        let mut r = common::rng(seed);
        for _ in 0..20 {
            let y = common::random_vector(dm.nrows(), &mut r);
            let truth = y.dot(&(dm * &y));
            for b in &bounds {
                prop_assert!(truth <= b.quad(&y) + 1e-8 * y.norm_squared());
            }
        }
    }

    #[test]
    fn as_increment_matches_masked_row_count(d in any_design()) {
        let dm = d.design_matrix().unwrap();
        let b = as_bound(dm).unwrap();
        let m = dm.nrows();
        for r in 0..m {
            let count = (0..m).filter(|&c| b.masked(r, c)).count() as f64;
            let own = if b.masked(r, r) { 1.0 } else { 0.0 };
            prop_assert!((b.dtilde[(r, r)] - dm[(r, r)] - count - own).abs() < 1e-12);
        }
    }

    #[test]
    fn comparison_is_antisymmetric(d in prop_oneof![complete_design(), cluster_design()]) {
        let dm = d.design_matrix().unwrap();
        let a = as_bound(dm).unwrap();
        let Ok(m) = iterative_bound(dm, DEFAULT_MAX_ITERS, DEFAULT_TOL) else { return Ok(()) };
        let ab = compare_bounds(&a, &m).unwrap();
        let ba = compare_bounds(&m, &a).unwrap();
        let flip = |v: Verdict| match v {
            Verdict::ATighter => Verdict::BTighter,
            Verdict::BTighter => Verdict::ATighter,
            other => other,
        };
        prop_assert_eq!(flip(ab.psd_verdict), ba.psd_verdict);
        prop_assert_eq!(flip(ab.sharp_null_verdict), ba.sharp_null_verdict);
    }

    #[test]
    fn optimum_beats_perturbations((d, y, x, seed) in scenario(2)) {
        let spec = spec_ii(&x);
        let dm = d.design_matrix().unwrap();
        let opt = b_opt(&spec, dm, &y).unwrap();
        prop_assert!(opt.satisfies_foc());
        let best = fixed_coef_variance(&y, &spec, &opt.b, dm);
        let mut r = common::rng(seed);
        for scale in [1e-3, 1e-1, 10.0] {
            for _ in 0..10 {
                let b = &opt.b + common::random_vector(spec.ncols(), &mut r) * scale;
                prop_assert!(best <= fixed_coef_variance(&y, &spec, &b, dm) + 1e-10 * best.abs().max(1.0));
            }
        }
    }

    #[test]
    fn equal_probability_blocks_scale(d in prop_oneof![complete_design(), cluster_design()]) {
        let n = d.n();
        let dm = d.design_matrix().unwrap();
        let pi1 = d.pi1()[0];
        let pi0 = 1.0 - pi1;
        for i in 0..n {
            for j in 0..n {
                let a = pi0 * pi0 * dm[(i, j)];
                let b = pi1 * pi1 * dm[(n + i, n + j)];
                let c = -pi1 * pi0 * dm[(n + i, j)];
                prop_assert!((a - b).abs() < 1e-10 && (a - c).abs() < 1e-10, "({}, {}): {} {} {}", i, j, a, b, c);
            }
        }
    }
}

#[test]
fn simulation_is_identical_across_execution_strategies() {
    let seq = SimConfig { replications: 60, execution: Execution::Sequential, ..SimConfig::tiny() };
    let par = SimConfig { execution: Execution::Parallel, ..seq.clone() };
    let a = run_simulation(&seq).unwrap();
    let b = run_simulation(&par).unwrap();
    assert_eq!(a.estimates, b.estimates);
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn provenance_names_are_stable() {
    let d = Design::complete(3, 1).unwrap();
    assert!(matches!(d.provenance(), Provenance::Complete { n1: 1 }));
    assert_eq!(d.provenance().name(), "complete");
}
