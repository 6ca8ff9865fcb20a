#![allow(dead_code)]

use dbexp_core::design::{Design, StackedOutcomes, DEFAULT_SUPPORT_CAP};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Complete designs for n = 2..=8, a handful of Bernoulli designs with
/// unequal probabilities, and cluster designs with at most four clusters.
pub fn analytic_designs() -> Vec<(String, Design)> {
    let mut out = Vec::new();
    for n in 2..=8 {
        for n1 in 1..n {
            out.push((format!("complete({n},{n1})"), Design::complete(n, n1).unwrap()));
        }
    }
    let mut r = rng(11);
    for n in [2, 3, 5, 8] {
        let pi: Vec<f64> = (0..n).map(|_| r.random_range(0.15..0.85)).collect();
        out.push((format!("bernoulli({n})"), Design::bernoulli(&pi).unwrap()));
    }
    out.extend(cluster_designs());
    out
}

pub fn cluster_designs() -> Vec<(String, Design)> {
    let cases: [(&[i64], usize); 7] = [
        (&[1, 1, 2, 2], 1),
        (&[1, 2, 3], 1),
        (&[1, 1, 2, 2, 3], 1),
        (&[1, 1, 2, 3, 3, 3], 2),
        (&[1, 2, 2, 3, 3, 3, 4, 4], 2),
        (&[4, 4, 1, 2, 2, 3, 3, 1], 1),
        (&[1, 1, 1, 2, 2, 3, 4, 4], 3),
    ];
    cases
        .iter()
        .map(|(ids, m1)| (format!("cluster({ids:?},{m1})"), Design::cluster(ids, *m1).unwrap()))
        .collect()
}

/// Cluster designs with at least two clusters in each arm.
pub fn balanced_cluster_designs() -> Vec<(String, Design)> {
    let cases: [(&[i64], usize); 3] =
        [(&[1, 1, 2, 2, 3, 4, 4, 4], 2), (&[1, 2, 2, 3, 3, 4], 2), (&[1, 1, 2, 3, 3, 4, 5, 5, 5], 2)];
    cases
        .iter()
        .map(|(ids, m1)| (format!("cluster({ids:?},{m1})"), Design::cluster(ids, *m1).unwrap()))
        .collect()
}

pub fn support(design: &Design) -> Vec<(Vec<bool>, f64)> {
    design.enumerate_assignments(DEFAULT_SUPPORT_CAP).unwrap()
}

/// Probability-weighted mean and variance of `f` over the support.
pub fn moments<F: FnMut(&[bool]) -> f64>(support: &[(Vec<bool>, f64)], mut f: F) -> (f64, f64) {
    let vals: Vec<(f64, f64)> = support.iter().map(|(z, p)| (f(z), *p)).collect();
    let mean: f64 = vals.iter().map(|(v, p)| v * p).sum();
    let var: f64 = vals.iter().map(|(v, p)| p * (v - mean).powi(2)).sum();
    (mean, var)
}

pub fn random_outcomes(n: usize, r: &mut ChaCha8Rng) -> StackedOutcomes {
    let y0: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
    let y1: Vec<f64> = y0.iter().map(|v| v + r.random_range(-1.0..2.0)).collect();
    StackedOutcomes::new(&y0, &y1).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-2.0..2.0))
}

pub fn random_vector(len: usize, r: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| r.random_range(-2.0..2.0))
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
