//! Population-level optimal coefficients. These need the full potential
//! outcome schedule, so they serve as oracles and as simulation targets.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::BoundMatrix;
use crate::covariates::{CovariateSpec, Level, SpecKind};
use crate::design::{Design, Provenance, StackedOutcomes};
use crate::error::{DbError, Result};
use crate::estimators::normal_scale;
use crate::linalg;

/// Relative first-order-condition residual that every optimum must meet.
pub const FOC_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    TrueVariance,
    Bound(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalCoefficient {
    pub b: DVector<f64>,
    pub objective: Objective,
    pub note: String,
    /// Relative residual of (𝕩′W𝕩)b = 𝕩′Wy.
    pub foc_residual: f64,
}

impl OptimalCoefficient {
    pub fn satisfies_foc(&self) -> bool {
        self.foc_residual <= FOC_RTOL
    }
}

const MP_NOTE: &str = "Moore-Penrose pseudo-inverse (symmetric eigendecomposition, eigenvalues below 1e-12 of the largest dropped)";

/// ‖(𝕩′W𝕩)b − 𝕩′Wy‖ relative to the largest of ‖𝕩′Wy‖, ‖𝕩′W𝕩‖‖b‖ and
/// ‖𝕩‖‖W‖‖y‖.
///
/// The last scale keeps the ratio meaningful when 𝕩′Wy vanishes in exact
/// arithmetic, as it does for intercept-only layouts under complete
/// randomization.
pub fn foc_residual(spec: &CovariateSpec, w: &DMatrix<f64>, y: &StackedOutcomes, b: &DVector<f64>) -> f64 {
    let x = spec.xmat();
    let xtw = x.tr_mul(w);
    let gram = &xtw * x;
    let rhs = &xtw * y.values();
    let resid = (&gram * b - &rhs).norm();
    let scale = rhs.norm().max(gram.norm() * b.norm()).max(x.norm() * w.norm() * y.values().norm());
    if scale == 0.0 {
        resid
    } else {
        resid / scale
    }
}

fn weighted_optimum(spec: &CovariateSpec, w: &DMatrix<f64>, y: &StackedOutcomes, objective: Objective) -> Result<OptimalCoefficient> {
    let x = spec.xmat();
    if w.nrows() != x.nrows() || y.values().len() != x.nrows() {
        return Err(DbError::Dimension("weight matrix, outcomes and specification must share 2n rows".into()));
    }
    let xtw = x.tr_mul(w);
    let (ginv, _) = linalg::pinv_scaled(&linalg::symmetrize(&(&xtw * x)), normal_scale(x, w));
    let b = ginv * (xtw * y.values());
    let foc = foc_residual(spec, w, y, &b);
    Ok(OptimalCoefficient { b, objective, note: MP_NOTE.into(), foc_residual: foc })
}

/// (𝕩′d𝕩)⁺𝕩′dy, the coefficient minimizing the fixed-coefficient variance.
pub fn b_opt(spec: &CovariateSpec, d: &DMatrix<f64>, y: &StackedOutcomes) -> Result<OptimalCoefficient> {
    weighted_optimum(spec, d, y, Objective::TrueVariance)
}

/// A member of the full solution set: b_opt + (I − G⁺G)z with G = 𝕩′d𝕩.
pub fn b_opt_family(spec: &CovariateSpec, d: &DMatrix<f64>, y: &StackedOutcomes, z: &DVector<f64>) -> Result<OptimalCoefficient> {
    let x = spec.xmat();
    if z.len() != x.ncols() {
        return Err(DbError::Dimension("z must have one entry per column".into()));
    }
    let mut base = b_opt(spec, d, y)?;
    let gram = linalg::symmetrize(&(x.tr_mul(d) * x));
    let (ginv, _) = linalg::pinv_scaled(&gram, normal_scale(x, d));
    let free = DMatrix::identity(x.ncols(), x.ncols()) - ginv * gram;
    base.b += free * z;
    base.foc_residual = foc_residual(spec, d, y, &base.b);
    Ok(base)
}

/// (𝕩′d̃𝕩)⁺𝕩′d̃y, the coefficient minimizing a variance bound.
pub fn b_tilde_opt(spec: &CovariateSpec, bound: &BoundMatrix, y: &StackedOutcomes) -> Result<OptimalCoefficient> {
    weighted_optimum(spec, &bound.dtilde, y, Objective::Bound(bound.method.label().into()))
}

/// Per-arm optimum for equal-probability designs under specification II.
pub fn b_sep(spec: &CovariateSpec, d: &DMatrix<f64>, y: &StackedOutcomes) -> Result<OptimalCoefficient> {
    if spec.kind() != SpecKind::II || *spec.level() != Level::Unit {
        return Err(DbError::Input("the separated optimum is defined for unit-level specification II".into()));
    }
    let n = spec.rows_per_block();
    let diag11: Vec<f64> = (0..n).map(|i| d[(n + i, n + i)]).collect();
    if diag11.iter().any(|v| (v - diag11[0]).abs() > 1e-10 * diag11[0].abs().max(1.0)) {
        return Err(DbError::InvalidDesign("separated optimum requires equal treatment probabilities".into()));
    }
    let w = spec.ncols() / 2;
    let xt = spec.xmat().view((n, w), (n, w)).into_owned();
    let d00 = d.view((0, 0), (n, n));
    let d11 = d.view((n, n), (n, n));
    let y0 = DVector::from_vec(y.y0());
    let y1 = DVector::from_vec(y.y1());
    let arm = |block: &DMatrix<f64>, yv: &DVector<f64>| {
        let xtb = xt.tr_mul(block);
        let (g, _) = linalg::pinv_scaled(&linalg::symmetrize(&(&xtb * &xt)), normal_scale(&xt, block));
        g * (xtb * yv)
    };
    let b0 = arm(&d00.into_owned(), &y0);
    let b1 = arm(&d11.into_owned(), &y1);
    let b = DVector::from_iterator(2 * w, b0.iter().chain(b1.iter()).copied());
    let foc = foc_residual(spec, d, y, &b);
    Ok(OptimalCoefficient { b, objective: Objective::TrueVariance, note: MP_NOTE.into(), foc_residual: foc })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationMethod {
    OlsII,
    TyrannyI,
    TyrannyII,
    OlsClusterII,
    TyrannyCluster,
}

/// Finite-population moments with divisor n: (mean of x, Var(x), Cov(x, y)).
pub fn population_moments(x: &DMatrix<f64>, y: &[f64]) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let n = x.nrows() as f64;
    let mx = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
    let my = y.iter().sum::<f64>() / n;
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mx[j]);
    }
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - my));
    let var = xc.tr_mul(&xc) / n;
    let cov = xc.tr_mul(&yc) / n;
    (mx, var, cov)
}

/// Var(x)⁺Cov(x, y) and the matching intercept μ_y − μ_x′β.
fn population_ols(x: &DMatrix<f64>, y: &[f64]) -> (f64, DVector<f64>) {
    let (mx, var, cov) = population_moments(x, y);
    let (vinv, _) = linalg::pinv(&var);
    let slope = vinv * cov;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    (my - mx.dot(&slope), slope)
}

fn stack(parts: &[&[f64]]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

/// Closed-form population coefficients. `x` is the unit-level n×k covariate
/// table that the specification was built from. The result is laid out for
/// the unit-level specification the method targets: II for `OlsII`,
/// `TyrannyII` and `OlsClusterII`, I for `TyrannyI` and `TyrannyCluster`.
pub fn b_population(method: PopulationMethod, x: &DMatrix<f64>, y: &StackedOutcomes, design: &Design) -> Result<OptimalCoefficient> {
    let n = y.n();
    if x.nrows() != n || design.n() != n {
        return Err(DbError::Dimension("covariates, outcomes and design must describe the same units".into()));
    }
    let (y0, y1) = (y.y0(), y.y1());
    let b = match (method, design.provenance()) {
        (PopulationMethod::OlsII, Provenance::Complete { .. }) => {
            let (a0, s0) = population_ols(x, &y0);
            let (a1, s1) = population_ols(x, &y1);
            stack(&[&[a0], s0.as_slice(), &[a1], s1.as_slice()])
        }
        (PopulationMethod::TyrannyI | PopulationMethod::TyrannyII, Provenance::Complete { n1 }) => {
            let (_, s0) = population_ols(x, &y0);
            let (_, s1) = population_ols(x, &y1);
            let w1 = *n1 as f64 / n as f64;
            let slope = s0 * w1 + s1 * (1.0 - w1);
            let (mx, _, _) = population_moments(x, &y0);
            let a0 = y0.iter().sum::<f64>() / n as f64 - mx.dot(&slope);
            let a1 = y1.iter().sum::<f64>() / n as f64 - mx.dot(&slope);
            if method == PopulationMethod::TyrannyI {
                stack(&[&[a0, a1], slope.as_slice()])
            } else {
                stack(&[&[a0], slope.as_slice(), &[a1], slope.as_slice()])
            }
        }
        (PopulationMethod::OlsClusterII | PopulationMethod::TyrannyCluster, Provenance::Cluster { m1, .. }) => {
            let index = design.clusters().expect("cluster designs carry their index");
            let xc = crate::covariates::cluster_table(x, index)?;
            let (yc0, yc1) = (index.totals(&y0), index.totals(&y1));
            let (_, mut v0, c0) = population_moments(&xc, &yc0);
            let (_, _, c1) = population_moments(&xc, &yc1);
            v0 = linalg::symmetrize(&v0);
            let (vinv, _) = linalg::pinv(&v0);
            let (s0, s1) = (&vinv * c0, &vinv * c1);
            if method == PopulationMethod::OlsClusterII {
                stack(&[s0.as_slice(), s1.as_slice()])
            } else {
                let w1 = *m1 as f64 / index.n_clusters() as f64;
                let s = s0 * w1 + s1 * (1.0 - w1);
                stack(&[&[s[0], s[0]], &s.as_slice()[1..]])
            }
        }
        (m, p) => {
            return Err(DbError::InvalidDesign(format!("population method {m:?} does not apply to a {} design", p.name())))
        }
    };
    let spec = match method {
        PopulationMethod::TyrannyI | PopulationMethod::TyrannyCluster => crate::covariates::spec_i(x),
        _ => crate::covariates::spec_ii(x),
    };
    let d = design.design_matrix()?;
    let foc = foc_residual(&spec, d, y, &b);
    Ok(OptimalCoefficient { b, objective: Objective::TrueVariance, note: "closed-form finite-population moments".into(), foc_residual: foc })
}
