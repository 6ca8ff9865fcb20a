//! Horvitz-Thompson and generalized regression (GREG) estimators of the ATE,
//! plus the coefficient estimators that plug into GREG.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterIndex;
use crate::covariates::{CovariateSpec, SpecKind};
use crate::design::{observed_rows, stacked_observed, Design, StackedOutcomes};
use crate::error::{DbError, Result};
use crate::linalg;

/// One realized experiment: the assignment and the outcome observed in each
/// unit's realized arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    z: Vec<bool>,
    y: Vec<f64>,
}

impl Sample {
    pub fn new(z: Vec<bool>, y: Vec<f64>) -> Result<Self> {
        if z.len() != y.len() {
            return Err(DbError::Dimension(format!("{} assignments but {} outcomes", z.len(), y.len())));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(DbError::Input(format!("observed outcome for unit {} is missing or not finite", i + 1)));
        }
        Ok(Self { z, y })
    }

    /// What an experimenter would see under `z` given the full schedule.
    pub fn observe(outcomes: &StackedOutcomes, z: &[bool]) -> Self {
        Self { z: z.to_vec(), y: outcomes.observe(z) }
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// The stacked observed vector Ry (zeros in unobserved slots).
    pub fn stacked(&self) -> DVector<f64> {
        stacked_observed(&self.z, &self.y)
    }

    /// Cluster totals of the observed outcomes with the cluster-level assignment.
    pub fn to_clusters(&self, index: &ClusterIndex) -> Result<Sample> {
        if index.n_units() != self.n() {
            return Err(DbError::Dimension("cluster index and sample disagree on unit count".into()));
        }
        let zc = index.cluster_assignment(&self.z)?;
        Ok(Sample { z: zc, y: index.totals(&self.y) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fixed,
    Ols,
    WlsPi,
    ThreeHt,
    TwoR,
    Tyranny,
    OlsClusterTotals,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Fixed => "fixed",
            Method::Ols => "ols",
            Method::WlsPi => "wls_pi",
            Method::ThreeHt => "three_ht",
            Method::TwoR => "two_r",
            Method::Tyranny => "tyranny",
            Method::OlsClusterTotals => "ols_cluster_totals",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientEstimate {
    pub b: DVector<f64>,
    pub method: Method,
    /// Numerical rank of the normal matrix that was pseudo-inverted.
    pub rank: usize,
    pub rank_deficient: bool,
}

impl CoefficientEstimate {
    pub fn fixed(b: DVector<f64>) -> Self {
        let l = b.len();
        Self { b, method: Method::Fixed, rank: l, rank_deficient: false }
    }
}

#[derive(Debug, Clone)]
pub struct AteEstimate {
    pub point: f64,
    pub ht: f64,
    pub coefficient: Option<CoefficientEstimate>,
    /// y − 𝕩b on observed rows, zero elsewhere (see `mask`).
    pub residuals: DVector<f64>,
    pub mask: Vec<bool>,
    pub divisor: usize,
}

fn check_design(spec_rows: usize, design: &Design) -> Result<()> {
    if design.n() != spec_rows {
        return Err(DbError::Dimension(format!(
            "design has {} randomization units but the rows describe {spec_rows}",
            design.n()
        )));
    }
    Ok(())
}

/// n⁻¹ 1′π⁻¹Ry.
pub fn ht_ate(sample: &Sample, design: &Design, divisor: usize) -> Result<f64> {
    check_design(sample.n(), design)?;
    let pi = design.pi();
    let ry = sample.stacked();
    let total: f64 = observed_rows(sample.z()).iter().map(|&r| ry[r] / pi[r]).sum();
    Ok(total / divisor as f64)
}

/// n⁻¹ 1′(π⁻¹R − I)𝕩, which has expectation zero under the design.
pub fn ht_cov_means(spec: &CovariateSpec, z: &[bool], design: &Design) -> Result<DVector<f64>> {
    check_design(spec.rows_per_block(), design)?;
    if z.len() != design.n() {
        return Err(DbError::Dimension("assignment length differs from design".into()));
    }
    let pi = design.pi();
    let x = spec.xmat();
    let mut w = DVector::from_element(x.nrows(), -1.0);
    for r in observed_rows(z) {
        w[r] += 1.0 / pi[r];
    }
    Ok(x.tr_mul(&w) / spec.divisor() as f64)
}

/// GREG with the given coefficient: δ̂_HT − δ̂_𝕩·b.
pub fn greg(sample: &Sample, design: &Design, spec: &CovariateSpec, coef: &CoefficientEstimate) -> Result<AteEstimate> {
    if coef.b.len() != spec.ncols() {
        return Err(DbError::Dimension(format!(
            "coefficient has length {} but the specification has {} columns",
            coef.b.len(),
            spec.ncols()
        )));
    }
    check_design(spec.rows_per_block(), design)?;
    if sample.n() != design.n() {
        return Err(DbError::Dimension("sample and design disagree on unit count".into()));
    }
    let ht = ht_ate(sample, design, spec.divisor())?;
    let adj = ht_cov_means(spec, sample.z(), design)?.dot(&coef.b);
    let mask = crate::design::observed_mask(sample.z());
    let fitted = spec.fitted(&coef.b);
    let ry = sample.stacked();
    let residuals = DVector::from_fn(ry.len(), |r, _| if mask[r] { ry[r] - fitted[r] } else { 0.0 });
    Ok(AteEstimate { point: ht - adj, ht, coefficient: Some(coef.clone()), residuals, mask, divisor: spec.divisor() })
}

pub fn greg_fixed(sample: &Sample, design: &Design, spec: &CovariateSpec, b: &DVector<f64>) -> Result<AteEstimate> {
    greg(sample, design, spec, &CoefficientEstimate::fixed(b.clone()))
}

/// Alternate algebraic forms of the GREG estimator, kept as cross-checks.
pub mod forms {
    use super::*;

    /// n⁻¹1′(π⁻¹Ry − π⁻¹R𝕩b + 𝕩b).
    pub fn expanded(sample: &Sample, design: &Design, spec: &CovariateSpec, b: &DVector<f64>) -> f64 {
        expanded_with_sign(sample, design, spec, b, 1.0)
    }

    /// The expanded form with the final term subtracted instead of added.
    /// It is not equivalent to the other forms; tests use it to show why.
    pub fn expanded_minus(sample: &Sample, design: &Design, spec: &CovariateSpec, b: &DVector<f64>) -> f64 {
        expanded_with_sign(sample, design, spec, b, -1.0)
    }

    fn expanded_with_sign(sample: &Sample, design: &Design, spec: &CovariateSpec, b: &DVector<f64>, sign: f64) -> f64 {
        let pi = design.pi();
        let ry = sample.stacked();
        let xb = spec.fitted(b);
        let mut total = sign * xb.sum();
        for r in observed_rows(sample.z()) {
            total += (ry[r] - xb[r]) / pi[r];
        }
        total / spec.divisor() as f64
    }

    /// HT of the residuals plus the mean fitted contrast, returned as the pair
    /// (residual term, fitted term).
    pub fn residual_parts(sample: &Sample, design: &Design, spec: &CovariateSpec, b: &DVector<f64>) -> (f64, f64) {
        let pi = design.pi();
        let ry = sample.stacked();
        let xb = spec.fitted(b);
        let resid: f64 = observed_rows(sample.z()).iter().map(|&r| (ry[r] - xb[r]) / pi[r]).sum();
        let div = spec.divisor() as f64;
        (resid / div, xb.sum() / div)
    }
}

/// n⁻²(y − 𝕩b)′d(y − 𝕩b): the exact variance of GREG with a fixed b.
pub fn fixed_coef_variance(y: &StackedOutcomes, spec: &CovariateSpec, b: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let u = y.values() - spec.fitted(b);
    let div = spec.divisor() as f64;
    linalg::quad(d, &u) / (div * div)
}

/// (𝕩′W𝕩)⁺𝕩′Wy for a diagonal weight supported on the observed rows.
fn weighted_ls(spec: &CovariateSpec, sample: &Sample, weight: impl Fn(usize) -> f64, method: Method) -> CoefficientEstimate {
    let x = spec.xmat();
    let l = x.ncols();
    let ry = sample.stacked();
    let mut gram = DMatrix::zeros(l, l);
    let mut rhs = DVector::zeros(l);
    let mut scale = 0.0;
    for r in observed_rows(sample.z()) {
        let w = weight(r);
        let row = x.row(r);
        gram.ger(w, &row.transpose(), &row.transpose(), 1.0);
        rhs.axpy(w * ry[r], &row.transpose(), 1.0);
        scale += w.abs() * row.norm_squared();
    }
    let (inv, rank) = linalg::pinv_scaled(&gram, scale);
    CoefficientEstimate { b: inv * rhs, method, rank, rank_deficient: rank < l }
}

/// (𝕩′R𝕩)⁺𝕩′Ry.
pub fn coef_ols(spec: &CovariateSpec, sample: &Sample) -> Result<CoefficientEstimate> {
    if sample.n() != spec.rows_per_block() {
        return Err(DbError::Dimension("sample and specification disagree on row count".into()));
    }
    Ok(weighted_ls(spec, sample, |_| 1.0, Method::Ols))
}

/// (𝕩′π⁻¹R𝕩)⁺𝕩′π⁻¹Ry.
pub fn coef_wls_pi(spec: &CovariateSpec, sample: &Sample, design: &Design) -> Result<CoefficientEstimate> {
    check_design(spec.rows_per_block(), design)?;
    let pi = design.pi();
    Ok(weighted_ls(spec, sample, |r| 1.0 / pi[r], Method::WlsPi))
}

/// (𝕩′R(π⁻¹ − I)𝕩)⁺𝕩′R(π⁻¹ − I)y, for common-slopes layouts.
pub fn coef_tyranny(spec: &CovariateSpec, sample: &Sample, design: &Design) -> Result<CoefficientEstimate> {
    if spec.kind() != SpecKind::I {
        return Err(DbError::Input("the tyranny-of-the-minority estimator uses specification I".into()));
    }
    check_design(spec.rows_per_block(), design)?;
    let pi = design.pi();
    Ok(weighted_ls(spec, sample, |r| 1.0 / pi[r] - 1.0, Method::Tyranny))
}

/// Cluster-level OLS on totals. `spec` must be a cluster-level layout and
/// `sample` the unit-level data; outcomes are totaled here.
pub fn coef_ols_cluster_totals(spec: &CovariateSpec, sample: &Sample) -> Result<(CoefficientEstimate, Sample)> {
    let index = match spec.level() {
        crate::covariates::Level::Cluster { index } => index,
        _ => return Err(DbError::Input("cluster-total OLS needs a cluster-level specification".into())),
    };
    let sc = sample.to_clusters(index)?;
    let mut est = coef_ols(spec, &sc)?;
    est.method = Method::OlsClusterTotals;
    Ok((est, sc))
}

/// Treatment intercept minus control intercept.
pub fn intercept_contrast(b: &DVector<f64>, spec: &CovariateSpec) -> Result<f64> {
    let (c, t) = spec
        .intercepts()
        .ok_or_else(|| DbError::Input("specification has no identifiable intercept columns".into()))?;
    if b.len() != spec.ncols() {
        return Err(DbError::Dimension("coefficient length differs from specification".into()));
    }
    Ok(b[t] - b[c])
}

/// Magnitude of 𝕩′W𝕩 implied by its factors, used to floor the SVD cutoff.
pub fn normal_scale(x: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    x.norm_squared() * w.norm()
}

/// Quantities that depend only on (design weights, specification) and are
/// reused across draws: 𝕩′W𝕩, its pseudo-inverse, and (𝕩′W𝕩)⁺𝕩′W.
///
/// With W = d these drive the 3HT! and 2R! estimators; with W a variance
/// bound matrix they drive the borrowed-bound coefficient.
#[derive(Debug, Clone)]
pub struct WeightedSystem {
    pub gram: DMatrix<f64>,
    pub gram_pinv: DMatrix<f64>,
    /// (𝕩′W𝕩)⁺𝕩′W, l×2n.
    pub proj: DMatrix<f64>,
    pub rank: usize,
    /// (𝕩′W𝕩)⁺(𝕩′W𝕩), the projector onto the identified directions.
    pub identified: DMatrix<f64>,
}

impl WeightedSystem {
    pub fn new(spec: &CovariateSpec, w: &DMatrix<f64>) -> Result<Self> {
        let x = spec.xmat();
        if w.nrows() != x.nrows() || w.ncols() != x.nrows() {
            return Err(DbError::Dimension(format!(
                "weight matrix is {}×{} but the specification has {} rows",
                w.nrows(),
                w.ncols(),
                x.nrows()
            )));
        }
        let xtw = x.tr_mul(w);
        let gram = linalg::symmetrize(&(&xtw * x));
        let (gram_pinv, rank) = linalg::pinv_scaled(&gram, normal_scale(x, w));
        let proj = &gram_pinv * &xtw;
        let identified = &gram_pinv * &gram;
        Ok(Self { gram, gram_pinv, proj, rank, identified })
    }

    /// (𝕩′W𝕩)⁺𝕩′Wπ⁻¹Ry.
    pub fn ht_coefficient(&self, sample: &Sample, pi: &DVector<f64>) -> DVector<f64> {
        let ry = sample.stacked();
        let mut b = DVector::zeros(self.proj.nrows());
        for r in observed_rows(sample.z()) {
            b.axpy(ry[r] / pi[r], &self.proj.column(r), 1.0);
        }
        b
    }

    /// (𝕩′W𝕩)⁺𝕩′Wπ⁻¹R𝕩 − (𝕩′W𝕩)⁺(𝕩′W𝕩).
    pub fn regression_correction(&self, spec: &CovariateSpec, z: &[bool], pi: &DVector<f64>) -> DMatrix<f64> {
        let x = spec.xmat();
        let l = x.ncols();
        let mut m = DMatrix::zeros(self.proj.nrows(), l);
        for r in observed_rows(z) {
            m.ger(1.0 / pi[r], &self.proj.column(r), &x.row(r).transpose(), 1.0);
        }
        m - &self.identified
    }

    /// The 2R! recursion: HT coefficient corrected by a regression of the
    /// covariates' HT error on the π-WLS fit.
    pub fn two_step(&self, spec: &CovariateSpec, sample: &Sample, design: &Design) -> Result<DVector<f64>> {
        let pi = design.pi();
        let b3 = self.ht_coefficient(sample, &pi);
        let wls = coef_wls_pi(spec, sample, design)?;
        Ok(b3 - self.regression_correction(spec, sample.z(), &pi) * wls.b)
    }
}

/// (𝕩′d𝕩)⁺𝕩′dπ⁻¹Ry.
pub fn coef_3ht(sys: &WeightedSystem, spec: &CovariateSpec, sample: &Sample, design: &Design) -> Result<CoefficientEstimate> {
    check_design(spec.rows_per_block(), design)?;
    let b = sys.ht_coefficient(sample, &design.pi());
    Ok(CoefficientEstimate { b, method: Method::ThreeHt, rank: sys.rank, rank_deficient: sys.rank < spec.ncols() })
}

/// b̂_3HT − (𝕩′d𝕩)⁺(𝕩′dπ⁻¹R𝕩 − 𝕩′d𝕩)·b̂_πwls.
pub fn coef_2r(sys: &WeightedSystem, spec: &CovariateSpec, sample: &Sample, design: &Design) -> Result<CoefficientEstimate> {
    check_design(spec.rows_per_block(), design)?;
    let b = sys.two_step(spec, sample, design)?;
    Ok(CoefficientEstimate { b, method: Method::TwoR, rank: sys.rank, rank_deficient: sys.rank < spec.ncols() })
}
