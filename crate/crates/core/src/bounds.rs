//! Identified variance bounds, their estimators, and the precision test.
//!
//! A bound is a matrix d̃ with d̃ − d positive semidefinite (so y′d̃y ≥ y′dy
//! for every schedule) and d̃ = 0 wherever d = −1 (so the quadratic only
//! involves pairs of outcomes that can be observed together).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cluster::ClusterIndex;
use crate::covariates::CovariateSpec;
use crate::design::{observed_rows, Design};
use crate::error::{DbError, Result};
use crate::estimators::{CoefficientEstimate, Method, Sample, WeightedSystem};
use crate::linalg;

pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-10;

pub const RETROSPECTIVE_CAVEAT: &str = "such a test should only be used in retrospect; \
covariates and coefficients should be fixed ahead of time in a pre-analysis plan";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    As,
    Iterative,
    Cluster,
    Custom,
}

impl BoundMethod {
    pub fn label(self) -> &'static str {
        match self {
            BoundMethod::As => "as",
            BoundMethod::Iterative => "iterative",
            BoundMethod::Cluster => "cluster",
            BoundMethod::Custom => "custom",
        }
    }
}

impl std::str::FromStr for BoundMethod {
    type Err = DbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "as" => Ok(BoundMethod::As),
            "iterative" | "m" => Ok(BoundMethod::Iterative),
            "cluster" | "c" => Ok(BoundMethod::Cluster),
            other => Err(DbError::Input(format!("unknown bound method '{other}'"))),
        }
    }
}

/// How the PSD property of d̃ − d was established.
#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// Nonnegative diagonal dominating each row.
    DiagonalDominance,
    /// d̃ − d = BB′ for an explicit B.
    GramFactor,
    /// Smallest eigenvalue of d̃ − d, from a symmetric eigensolver.
    Eigen { min_eig: f64 },
}

#[derive(Debug, Clone)]
pub struct BoundMatrix {
    pub dtilde: DMatrix<f64>,
    pub method: BoundMethod,
    /// Row-major 2n×2n flags marking d == −1.
    pub mask: Vec<bool>,
    pub iterations: usize,
    /// Smallest eigenvalue of t at each iterative check (empty otherwise).
    pub trace: Vec<f64>,
    pub certificate: Certificate,
}

impl BoundMatrix {
    pub fn dim(&self) -> usize {
        self.dtilde.nrows()
    }

    pub fn masked(&self, r: usize, c: usize) -> bool {
        self.mask[r * self.dim() + c]
    }

    /// Wrap a caller-supplied d̃ after checking both bound properties by eigen
    /// decomposition.
    pub fn custom(d: &DMatrix<f64>, dtilde: DMatrix<f64>) -> Result<Self> {
        let mask = unobservable_mask(d);
        let diff = &dtilde - d;
        let (ok, min_eig) = linalg::psd_check(&diff, spectral_scale(d), linalg::PSD_RTOL);
        if !ok {
            return Err(DbError::InvalidBound(format!("d̃ − d has eigenvalue {min_eig:e}")));
        }
        let b = BoundMatrix {
            dtilde,
            method: BoundMethod::Custom,
            mask,
            iterations: 0,
            trace: Vec::new(),
            certificate: Certificate::Eigen { min_eig },
        };
        b.check_identified()?;
        Ok(b)
    }

    fn check_identified(&self) -> Result<()> {
        let n = self.dim();
        for r in 0..n {
            for c in 0..n {
                if self.masked(r, c) && self.dtilde[(r, c)].abs() > 1e-12 {
                    return Err(DbError::InvalidBound(format!(
                        "entry ({r}, {c}) pairs outcomes never observed together but d̃ = {}",
                        self.dtilde[(r, c)]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Re-verify both bound properties against d by eigen decomposition.
    pub fn verify(&self, d: &DMatrix<f64>) -> Result<f64> {
        self.check_identified()?;
        let (ok, min_eig) = linalg::psd_check(&(&self.dtilde - d), spectral_scale(d), linalg::PSD_RTOL);
        if ok {
            Ok(min_eig)
        } else {
            Err(DbError::InvalidBound(format!("d̃ − d has eigenvalue {min_eig:e}")))
        }
    }

    /// y′d̃y.
    pub fn quad(&self, y: &DVector<f64>) -> f64 {
        linalg::quad(&self.dtilde, y)
    }
}

/// Spectral norm of d, floored at one so tiny designs still get slack.
fn spectral_scale(d: &DMatrix<f64>) -> f64 {
    if d.nrows() > crate::design::EIGEN_CHECK_MAX_DIM {
        return d.norm().max(1.0);
    }
    linalg::sym_spectral_norm(&linalg::sym_eigenvalues(d)).max(1.0)
}

/// I(d = −1), row-major.
pub fn unobservable_mask(d: &DMatrix<f64>) -> Vec<bool> {
    let n = d.nrows();
    let mut mask = vec![false; n * n];
    for r in 0..n {
        for c in 0..n {
            mask[r * n + c] = d[(r, c)] == -1.0;
        }
    }
    mask
}

/// d + I(d = −1) + diag(I(d = −1)1).
pub fn as_bound(d: &DMatrix<f64>) -> Result<BoundMatrix> {
    let n = d.nrows();
    let mask = unobservable_mask(d);
    if !mask.iter().any(|m| *m) {
        return Err(DbError::InvalidBound("no unobservable pairs; not a two-arm design matrix".into()));
    }
    let mut t = DMatrix::zeros(n, n);
    for r in 0..n {
        let mut count = 0.0;
        for c in 0..n {
            if mask[r * n + c] {
                t[(r, c)] = 1.0;
                count += 1.0;
            }
        }
        t[(r, r)] += count;
    }
    // Each row of t has its diagonal equal to its off-diagonal absolute sum.
    if !linalg::diagonally_dominant(&t, 0.0) {
        return Err(DbError::InvalidBound("AS increment failed the dominance check".into()));
    }
    let b = BoundMatrix {
        dtilde: d + t,
        method: BoundMethod::As,
        mask,
        iterations: 0,
        trace: Vec::new(),
        certificate: Certificate::DiagonalDominance,
    };
    b.check_identified()?;
    Ok(b)
}

/// Alternate between the PSD cone and the constraint "t = 1 on unobservable
/// pairs" until t is PSD, then return d + t.
pub fn iterative_bound(d: &DMatrix<f64>, max_iters: usize, tol: f64) -> Result<BoundMatrix> {
    let n = d.nrows();
    let mask = unobservable_mask(d);
    let mut t = DMatrix::from_fn(n, n, |r, c| if mask[r * n + c] { 1.0 } else { 0.0 });
    let mut trace = Vec::new();
    for iter in 1..=max_iters {
        let (vals, vecs) = linalg::sym_eigen(&t);
        let min = vals[0];
        trace.push(min);
        let norm = linalg::sym_spectral_norm(&vals);
        if min >= -tol * norm {
            let b = BoundMatrix {
                dtilde: d + &t,
                method: BoundMethod::Iterative,
                mask,
                iterations: iter,
                trace,
                certificate: Certificate::Eigen { min_eig: min },
            };
            b.check_identified()?;
            return Ok(b);
        }
        let clipped = DVector::from_iterator(vals.len(), vals.iter().map(|v| v.max(0.0)));
        t = &vecs * DMatrix::from_diagonal(&clipped) * vecs.transpose();
        t = linalg::symmetrize(&t);
        for r in 0..n {
            for c in 0..n {
                if mask[r * n + c] {
                    t[(r, c)] = 1.0;
                }
            }
        }
    }
    let last = *trace.last().unwrap_or(&f64::NAN);
    Err(DbError::NotConverged { iterations: max_iters, trace, last })
}

/// d + [A A; A A] for cluster randomization, where A marks pairs of units in
/// the same cluster.
///
/// When one arm has a single cluster, cross-cluster pairs are also never
/// observed together within that arm; A then also covers those pairs (it
/// becomes all ones), which keeps the bound identified and still exact under
/// the sharp null. With at least two clusters per arm A is exactly the
/// same-cluster indicator.
pub fn cluster_bound(d: &DMatrix<f64>, index: &ClusterIndex) -> Result<BoundMatrix> {
    let n = index.n_units();
    if d.nrows() != 2 * n {
        return Err(DbError::Dimension(format!("design matrix is {0}×{0} for {n} units", d.nrows())));
    }
    let mask = unobservable_mask(d);
    let at = |r: usize, c: usize| mask[r * 2 * n + c];
    for i in 0..n {
        for j in 0..n {
            if at(i, n + j) != index.same_cluster(i, j) {
                return Err(DbError::InvalidBound(
                    "unobservable cross-arm pairs do not match cluster membership; not a cluster-randomized design".into(),
                ));
            }
        }
    }
    let a = DMatrix::from_fn(n, n, |i, j| {
        let hit = index.same_cluster(i, j) || at(i, j) || at(n + i, n + j);
        if hit {
            1.0
        } else {
            0.0
        }
    });
    // A is either the block-diagonal cluster indicator or all ones; both have
    // an explicit 0/1 factor.
    let factor = if a.iter().all(|v| *v == 1.0) {
        DMatrix::from_element(n, 1, 1.0)
    } else {
        DMatrix::from_fn(n, index.n_clusters(), |i, g| if index.membership()[i] == g { 1.0 } else { 0.0 })
    };
    if (&factor * factor.transpose() - &a).amax() != 0.0 {
        return Err(DbError::InvalidBound("cluster increment has no 0/1 Gram factor".into()));
    }
    let t = DMatrix::from_fn(2 * n, 2 * n, |r, c| a[(r % n, c % n)]);
    let b = BoundMatrix {
        dtilde: d + t,
        method: BoundMethod::Cluster,
        mask,
        iterations: 0,
        trace: Vec::new(),
        certificate: Certificate::GramFactor,
    };
    b.check_identified()?;
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ATighter,
    BTighter,
    Tie,
    Incomparable,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::ATighter => "a_tighter",
            Verdict::BTighter => "b_tighter",
            Verdict::Tie => "tie",
            Verdict::Incomparable => "incomparable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundComparison {
    pub bound_a: BoundMethod,
    pub bound_b: BoundMethod,
    pub psd_verdict: Verdict,
    pub sharp_null_verdict: Verdict,
    /// Eigenvalue summaries of d̃_b − d̃_a.
    pub min_eig: f64,
    pub max_eig: f64,
    pub eig_sum: f64,
}

/// d̃₀₀ + d̃₁₁ − d̃₁₀ − d̃₀₁: the bound's quadratic restricted to sharp-null schedules.
pub fn sharp_null_form(dtilde: &DMatrix<f64>) -> DMatrix<f64> {
    let n = dtilde.nrows() / 2;
    let b = |r, c| dtilde.view((r * n, c * n), (n, n)).into_owned();
    b(0, 0) + b(1, 1) - b(1, 0) - b(0, 1)
}

fn verdict_from(diff: &DMatrix<f64>, scale: f64) -> (Verdict, DVector<f64>) {
    let eigs = linalg::sym_eigenvalues(diff);
    let tol = linalg::PSD_RTOL * scale.max(1.0);
    let (lo, hi) = (eigs[0], eigs[eigs.len() - 1]);
    let b_minus_a_psd = lo >= -tol;
    let a_minus_b_psd = hi <= tol;
    let v = match (b_minus_a_psd, a_minus_b_psd) {
        (true, true) => Verdict::Tie,
        (true, false) => Verdict::ATighter,
        (false, true) => Verdict::BTighter,
        (false, false) => Verdict::Incomparable,
    };
    (v, eigs)
}

/// Compare two bounds for the same design. `a` is tighter when d̃_b − d̃_a is PSD.
pub fn compare_bounds(a: &BoundMatrix, b: &BoundMatrix) -> Result<BoundComparison> {
    if a.dim() != b.dim() {
        return Err(DbError::Dimension("bounds describe designs of different sizes".into()));
    }
    let scale = a.dtilde.norm().max(b.dtilde.norm());
    let diff = &b.dtilde - &a.dtilde;
    let (psd_verdict, eigs) = verdict_from(&diff, scale);
    let plus = sharp_null_form(&b.dtilde) - sharp_null_form(&a.dtilde);
    let (sharp_null_verdict, _) = verdict_from(&plus, scale);
    Ok(BoundComparison {
        bound_a: a.method,
        bound_b: b.method,
        psd_verdict,
        sharp_null_verdict,
        min_eig: eigs[0],
        max_eig: eigs[eigs.len() - 1],
        eig_sum: eigs.sum(),
    })
}

/// Precomputed d̃/p̃ for repeated evaluation of the bound estimator.
#[derive(Debug, Clone)]
pub struct BoundEstimator {
    weights: DMatrix<f64>,
}

impl BoundEstimator {
    pub fn new(bound: &BoundMatrix, design: &Design) -> Result<Self> {
        let p = design.joint();
        if p.nrows() != bound.dim() {
            return Err(DbError::Dimension("bound and design have different sizes".into()));
        }
        let weights = DMatrix::from_fn(p.nrows(), p.ncols(), |r, c| {
            let pt = if p[(r, c)] == 0.0 { 1.0 } else { p[(r, c)] };
            bound.dtilde[(r, c)] / pt
        });
        Ok(Self { weights })
    }

    /// n⁻² v′R(d̃/p̃)Rv for a stacked vector `v` (only observed rows are read).
    pub fn evaluate(&self, z: &[bool], v: &DVector<f64>, divisor: usize) -> f64 {
        let rows = observed_rows(z);
        let vals: Vec<f64> = rows.iter().map(|&r| v[r]).collect();
        let mut total = 0.0;
        for (a, &ra) in rows.iter().enumerate() {
            if vals[a] == 0.0 {
                continue;
            }
            let col = self.weights.column(ra);
            let mut acc = 0.0;
            for (b, &rb) in rows.iter().enumerate() {
                acc += col[rb] * vals[b];
            }
            total += vals[a] * acc;
        }
        let div = divisor as f64;
        total / (div * div)
    }
}

/// Unbiased estimator of n⁻²y′d̃y from one draw.
pub fn bound_estimate_ht(bound: &BoundMatrix, design: &Design, sample: &Sample, divisor: usize) -> Result<f64> {
    Ok(BoundEstimator::new(bound, design)?.evaluate(sample.z(), &sample.stacked(), divisor))
}

fn residuals(spec: &CovariateSpec, sample: &Sample, b: &DVector<f64>) -> DVector<f64> {
    sample.stacked() - spec.fitted(b)
}

/// Plug-in bound estimate with regression residuals û = y − 𝕩b̂.
pub fn bound_estimate_greg(
    bound: &BoundMatrix,
    design: &Design,
    sample: &Sample,
    spec: &CovariateSpec,
    coef: &CoefficientEstimate,
) -> Result<f64> {
    let est = BoundEstimator::new(bound, design)?;
    Ok(est.evaluate(sample.z(), &residuals(spec, sample, &coef.b), spec.divisor()))
}

/// The bound estimate built around b̃̂, the 2R! recursion run with d̃ in
/// place of d. Returns the estimate and the coefficient.
pub fn bound_estimate_2r_borrowed(
    bound: &BoundMatrix,
    design: &Design,
    sample: &Sample,
    spec: &CovariateSpec,
) -> Result<(f64, CoefficientEstimate)> {
    let sys = WeightedSystem::new(spec, &bound.dtilde)?;
    let b = sys.two_step(spec, sample, design)?;
    let coef = CoefficientEstimate { b, method: Method::TwoR, rank: sys.rank, rank_deficient: sys.rank < spec.ncols() };
    let est = BoundEstimator::new(bound, design)?;
    Ok((est.evaluate(sample.z(), &residuals(spec, sample, &coef.b), spec.divisor()), coef))
}

/// A normal-theory interval from a (possibly negative) variance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub variance_bound: f64,
    pub low: f64,
    pub high: f64,
    /// The variance estimate was negative and was floored at zero.
    pub truncated: bool,
}

impl Interval {
    pub fn new(point: f64, variance_bound: f64, z: f64) -> Self {
        let truncated = variance_bound < 0.0;
        let se = variance_bound.max(0.0).sqrt();
        Self { point, variance_bound, low: point - z * se, high: point + z * se, truncated }
    }

    pub fn covers(&self, target: f64) -> bool {
        self.low <= target && target <= self.high
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionTestResult {
    /// HT estimate of n⁻¹1′v.
    pub statistic: f64,
    /// −n⁻¹b′𝕩′d𝕩b.
    pub threshold: f64,
    /// 1′π⁻¹Rv, whose expectation is 2b′𝕩′du.
    pub raw_statistic: f64,
    /// −b′𝕩′d𝕩b.
    pub raw_threshold: f64,
    pub standard_error: f64,
    pub z: f64,
    /// One-sided p-value for "adjustment does not improve precision".
    pub p_value: f64,
    pub degenerate: bool,
    pub truncated: bool,
    pub caveat: String,
}

/// Test whether adjusting with a fixed b reduces variance relative to HT.
///
/// The variance gain is n⁻²(2b′𝕩′du + b′𝕩′d𝕩b) with u = y − 𝕩b. Its
/// unidentified part 2b′𝕩′du is linear in u, so it has an HT estimator built
/// from v = 2·diag(u)d𝕩b.
pub fn precision_test(
    design: &Design,
    d: &DMatrix<f64>,
    sample: &Sample,
    spec: &CovariateSpec,
    b: &DVector<f64>,
    bound: &BoundMatrix,
) -> Result<PrecisionTestResult> {
    if b.len() != spec.ncols() {
        return Err(DbError::Dimension(format!(
            "coefficient has length {} but the specification has {} columns",
            b.len(),
            spec.ncols()
        )));
    }
    let div = spec.divisor() as f64;
    let xb = spec.fitted(b);
    let w = d * &xb;
    // Adding zero turns a negative zero into a plain zero for reporting.
    let raw_threshold = -xb.dot(&w) + 0.0;
    let u = residuals(spec, sample, b);
    let pi = design.pi();
    let mut v = DVector::zeros(u.len());
    let mut raw_statistic = 0.0;
    for r in observed_rows(sample.z()) {
        v[r] = 2.0 * w[r] * u[r];
        raw_statistic += v[r] / pi[r];
    }
    let var = BoundEstimator::new(bound, design)?.evaluate(sample.z(), &v, spec.divisor());
    let statistic = raw_statistic / div;
    let threshold = raw_threshold / div;
    let standard_error = var.max(0.0).sqrt();
    let degenerate = b.iter().all(|c| *c == 0.0) || standard_error == 0.0;
    let (z, p_value) = if degenerate {
        (0.0, 1.0)
    } else {
        let z = (statistic - threshold) / standard_error;
        let normal = Normal::standard();
        (z, 1.0 - normal.cdf(z))
    };
    Ok(PrecisionTestResult {
        statistic,
        threshold,
        raw_statistic,
        raw_threshold,
        standard_error,
        z,
        p_value,
        degenerate,
        truncated: var < 0.0,
        caveat: RETROSPECTIVE_CAVEAT.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{StackedOutcomes, DEFAULT_SUPPORT_CAP};
    use approx::assert_relative_eq;

    #[test]
    fn as_bound_complete_two_one() {
        let d = Design::complete(2, 1).unwrap();
        let dm = d.design_matrix().unwrap();
        let b = as_bound(dm).unwrap();
        for r in 0..4 {
            assert_relative_eq!(b.dtilde[(r, r)], dm[(r, r)] + 2.0);
            for c in 0..4 {
                if b.masked(r, c) {
                    assert_eq!(b.dtilde[(r, c)], 0.0);
                }
            }
        }
        assert!(b.verify(dm).is_ok());
    }

    #[test]
    fn as_bound_exact_under_sharp_null_complete() {
        let d = Design::complete(5, 2).unwrap();
        let dm = d.design_matrix().unwrap();
        let b = as_bound(dm).unwrap();
        let y = StackedOutcomes::new(&[1.0, 4.0, -2.0, 0.5, 3.0], &[1.0, 4.0, -2.0, 0.5, 3.0]).unwrap();
        assert_relative_eq!(b.quad(y.values()), linalg::quad(dm, y.values()), epsilon = 1e-10);
    }

    #[test]
    fn cluster_bound_small_design() {
        let d = Design::cluster(&[1, 1, 2, 2], 1).unwrap();
        let dm = d.design_matrix().unwrap();
        let c = cluster_bound(dm, d.clusters().unwrap()).unwrap();
        c.verify(dm).unwrap();
        let y = StackedOutcomes::new(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_relative_eq!(c.quad(y.values()), linalg::quad(dm, y.values()), epsilon = 1e-12);
        let a = as_bound(dm).unwrap();
        let cmp = compare_bounds(&c, &a).unwrap();
        assert!(cmp.min_eig >= -1e-8);
        assert!(matches!(cmp.psd_verdict, Verdict::ATighter | Verdict::Tie));
    }

    #[test]
    fn cluster_bound_rejects_complete_design() {
        let d = Design::complete(4, 2).unwrap();
        let idx = ClusterIndex::new(&[1, 1, 2, 2]).unwrap();
        assert!(cluster_bound(d.design_matrix().unwrap(), &idx).is_err());
    }

    #[test]
    fn singleton_cluster_bound_matches_as_on_cross_diagonals() {
        let d = Design::cluster(&[1, 2, 3, 4], 2).unwrap();
        let dm = d.design_matrix().unwrap();
        let c = cluster_bound(dm, d.clusters().unwrap()).unwrap();
        let a = as_bound(dm).unwrap();
        for i in 0..4 {
            assert_eq!(c.dtilde[(i, 4 + i)], a.dtilde[(i, 4 + i)]);
        }
    }

    #[test]
    fn iterative_bound_small_designs() {
        for d in [Design::complete(2, 1).unwrap(), Design::cluster(&[1, 1, 2, 2], 1).unwrap()] {
            let dm = d.design_matrix().unwrap();
            let m = iterative_bound(dm, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
            m.verify(dm).unwrap();
        }
    }

    #[test]
    fn iterative_trace_records_every_check() {
        // A nonempty mask has zero trace, so it is never PSD on entry and at
        // least one projection happens.
        let d = Design::complete(3, 1).unwrap();
        let m = iterative_bound(d.design_matrix().unwrap(), DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        assert!(m.iterations >= 2);
        assert_eq!(m.trace.len(), m.iterations);
        assert!(m.trace[0] < 0.0);
    }

    #[test]
    fn self_comparison_ties() {
        let d = Design::complete(4, 2).unwrap();
        let a = as_bound(d.design_matrix().unwrap()).unwrap();
        let cmp = compare_bounds(&a, &a).unwrap();
        assert_eq!(cmp.psd_verdict, Verdict::Tie);
        assert_eq!(cmp.sharp_null_verdict, Verdict::Tie);
        assert_eq!(cmp.eig_sum, 0.0);
    }

    #[test]
    fn ht_bound_estimator_unbiased() {
        let d = Design::complete(4, 2).unwrap();
        let dm = d.design_matrix().unwrap();
        let b = as_bound(dm).unwrap();
        let y = StackedOutcomes::new(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 5.0]).unwrap();
        let mut mean = 0.0;
        for (z, p) in d.enumerate_assignments(DEFAULT_SUPPORT_CAP).unwrap() {
            mean += p * bound_estimate_ht(&b, &d, &Sample::observe(&y, &z), 4).unwrap();
        }
        assert_relative_eq!(mean, b.quad(y.values()) / 16.0, epsilon = 1e-12);
        let zero = Sample::new(vec![true, true, false, false], vec![0.0; 4]).unwrap();
        assert_eq!(bound_estimate_ht(&b, &d, &zero, 4).unwrap(), 0.0);
    }

    #[test]
    fn interval_truncates_negative_variance() {
        let i = Interval::new(1.0, -0.5, 1.96);
        assert!(i.truncated);
        assert_eq!(i.width(), 0.0);
    }
}
