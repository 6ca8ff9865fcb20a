//! Signed covariate matrices in the stacked 2n-row layout.
//!
//! Rows `0..n` belong to the control block and carry the same negation as the
//! stacked outcome vector; rows `n..2n` belong to the treatment block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterIndex;
use crate::design::Design;
use crate::error::{DbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecKind {
    /// Common slopes: `[-1, 0, -x; 0, 1, x]`.
    I,
    /// Separate slopes: `[-1, -x, 0, 0; 0, 0, 1, x]`.
    II,
    Custom,
}

impl SpecKind {
    pub fn label(self) -> &'static str {
        match self {
            SpecKind::I => "I",
            SpecKind::II => "II",
            SpecKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for SpecKind {
    type Err = DbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" | "i" | "1" => Ok(SpecKind::I),
            "II" | "ii" | "2" => Ok(SpecKind::II),
            other => Err(DbError::Input(format!("unknown specification '{other}' (expected I or II)"))),
        }
    }
}

/// Whether the rows are units or cluster totals.
#[derive(Debug, Clone, PartialEq)]
pub enum Level {
    Unit,
    /// Rows are clusters; estimators still divide by the unit count.
    Cluster { index: ClusterIndex },
}

#[derive(Debug, Clone)]
pub struct CovariateSpec {
    xmat: DMatrix<f64>,
    kind: SpecKind,
    labels: Vec<String>,
    level: Level,
    divisor: usize,
    intercepts: Option<(usize, usize)>,
}

impl CovariateSpec {
    /// An arbitrary 2n×l matrix at unit level.
    pub fn custom(xmat: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if xmat.nrows() % 2 != 0 || xmat.nrows() == 0 {
            return Err(DbError::Dimension("custom specification needs an even, positive row count".into()));
        }
        if labels.len() != xmat.ncols() {
            return Err(DbError::Dimension("one label per column required".into()));
        }
        let divisor = xmat.nrows() / 2;
        Ok(Self { xmat, kind: SpecKind::Custom, labels, level: Level::Unit, divisor, intercepts: None })
    }

    pub fn xmat(&self) -> &DMatrix<f64> {
        &self.xmat
    }

    pub fn kind(&self) -> SpecKind {
        self.kind
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn level(&self) -> &Level {
        &self.level
    }

    /// Number of rows per block: units, or clusters at cluster level.
    pub fn rows_per_block(&self) -> usize {
        self.xmat.nrows() / 2
    }

    /// The count the ATE divides by (always the number of units).
    pub fn divisor(&self) -> usize {
        self.divisor
    }

    pub fn ncols(&self) -> usize {
        self.xmat.ncols()
    }

    /// Column positions of the (control, treatment) intercepts, when the
    /// layout has them.
    pub fn intercepts(&self) -> Option<(usize, usize)> {
        self.intercepts
    }

    pub fn fitted(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.xmat * b
    }
}

/// Subtract column means.
pub fn zero_center(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

fn is_centered(x: &DMatrix<f64>) -> bool {
    x.column_iter().all(|c| {
        let scale = c.amax().max(1.0);
        c.mean().abs() <= 1e-9 * scale
    })
}

fn default_labels(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("x{j}")).collect()
}

fn warn_uncentered(x: &DMatrix<f64>) {
    if !is_centered(x) {
        log::warn!("covariates are not zero-centered; the estimators remain well defined but intercepts change meaning");
    }
}

/// Common-slopes layout with default column names.
pub fn spec_i(x: &DMatrix<f64>) -> CovariateSpec {
    spec_i_labeled(x, &default_labels(x.ncols()))
}

pub fn spec_i_labeled(x: &DMatrix<f64>, names: &[String]) -> CovariateSpec {
    warn_uncentered(x);
    let (n, k) = x.shape();
    let mut m = DMatrix::zeros(2 * n, k + 2);
    for i in 0..n {
        m[(i, 0)] = -1.0;
        m[(n + i, 1)] = 1.0;
        for j in 0..k {
            m[(i, 2 + j)] = -x[(i, j)];
            m[(n + i, 2 + j)] = x[(i, j)];
        }
    }
    let mut labels = vec!["intercept_control".to_string(), "intercept_treated".to_string()];
    labels.extend(names.iter().cloned());
    CovariateSpec { xmat: m, kind: SpecKind::I, labels, level: Level::Unit, divisor: n, intercepts: Some((0, 1)) }
}

/// Separate-slopes (fully interacted) layout with default column names.
pub fn spec_ii(x: &DMatrix<f64>) -> CovariateSpec {
    spec_ii_labeled(x, &default_labels(x.ncols()))
}

pub fn spec_ii_labeled(x: &DMatrix<f64>, names: &[String]) -> CovariateSpec {
    warn_uncentered(x);
    let (n, k) = x.shape();
    let mut m = DMatrix::zeros(2 * n, 2 * k + 2);
    for i in 0..n {
        m[(i, 0)] = -1.0;
        m[(n + i, k + 1)] = 1.0;
        for j in 0..k {
            m[(i, 1 + j)] = -x[(i, j)];
            m[(n + i, k + 2 + j)] = x[(i, j)];
        }
    }
    let mut labels = vec!["intercept_control".to_string()];
    labels.extend(names.iter().map(|s| format!("{s}_control")));
    labels.push("intercept_treated".into());
    labels.extend(names.iter().map(|s| format!("{s}_treated")));
    CovariateSpec { xmat: m, kind: SpecKind::II, labels, level: Level::Unit, divisor: n, intercepts: Some((0, k + 1)) }
}

pub fn spec(x: &DMatrix<f64>, names: &[String], kind: SpecKind) -> Result<CovariateSpec> {
    match kind {
        SpecKind::I => Ok(spec_i_labeled(x, names)),
        SpecKind::II => Ok(spec_ii_labeled(x, names)),
        SpecKind::Custom => Err(DbError::Input("custom specifications are built with CovariateSpec::custom".into())),
    }
}

/// Within-cluster column totals, clusters in ascending id order.
pub fn cluster_totals(x: &DMatrix<f64>, index: &ClusterIndex) -> Result<DMatrix<f64>> {
    if x.nrows() != index.n_units() {
        return Err(DbError::Dimension(format!(
            "{} covariate rows but {} units carry cluster ids",
            x.nrows(),
            index.n_units()
        )));
    }
    let mut out = DMatrix::zeros(index.n_clusters(), x.ncols());
    for (i, &c) in index.membership().iter().enumerate() {
        for j in 0..x.ncols() {
            out[(c, j)] += x[(i, j)];
        }
    }
    Ok(out)
}

/// `[sizes | totals of x]`, the m×(k+1) cluster-level covariate table.
pub fn cluster_table(x: &DMatrix<f64>, index: &ClusterIndex) -> Result<DMatrix<f64>> {
    let totals = cluster_totals(x, index)?;
    let m = index.n_clusters();
    Ok(DMatrix::from_fn(m, x.ncols() + 1, |g, j| {
        if j == 0 {
            index.sizes()[g] as f64
        } else {
            totals[(g, j - 1)]
        }
    }))
}

/// Cluster-total layouts. Spec II has 2k+4 columns
/// `[-1, 0, -x̃ᶜ, 0; 0, 1, 0, x̃ᶜ]`, spec I has k+3 columns
/// `[-1, 0, -x̃ᶜ; 0, 1, x̃ᶜ]`, where x̃ᶜ = [cluster sizes | x totals].
/// The size column is left uncentered.
pub fn spec_cluster(x: &DMatrix<f64>, names: &[String], index: &ClusterIndex, kind: SpecKind) -> Result<CovariateSpec> {
    let xc = cluster_table(x, index)?;
    let m = index.n_clusters();
    let w = xc.ncols();
    let mut tilde_names = vec!["size".to_string()];
    tilde_names.extend(names.iter().map(|s| format!("{s}_total")));
    let mut labels = vec!["count_control".to_string(), "count_treated".to_string()];
    let xmat = match kind {
        SpecKind::II => {
            let mut mat = DMatrix::zeros(2 * m, 2 * w + 2);
            for g in 0..m {
                mat[(g, 0)] = -1.0;
                mat[(m + g, 1)] = 1.0;
                for j in 0..w {
                    mat[(g, 2 + j)] = -xc[(g, j)];
                    mat[(m + g, 2 + w + j)] = xc[(g, j)];
                }
            }
            labels.extend(tilde_names.iter().map(|s| format!("{s}_control")));
            labels.extend(tilde_names.iter().map(|s| format!("{s}_treated")));
            mat
        }
        SpecKind::I => {
            let mut mat = DMatrix::zeros(2 * m, w + 2);
            for g in 0..m {
                mat[(g, 0)] = -1.0;
                mat[(m + g, 1)] = 1.0;
                for j in 0..w {
                    mat[(g, 2 + j)] = -xc[(g, j)];
                    mat[(m + g, 2 + j)] = xc[(g, j)];
                }
            }
            labels.extend(tilde_names);
            mat
        }
        SpecKind::Custom => return Err(DbError::Input("cluster layouts exist for specifications I and II".into())),
    };
    Ok(CovariateSpec {
        xmat,
        kind,
        labels,
        level: Level::Cluster { index: index.clone() },
        divisor: index.n_units(),
        intercepts: Some((0, 1)),
    })
}

/// Append the inverse-probability column: π⁻¹1₂ₙ with each arm's block
/// centered at its own mean.
///
/// The column is not negated in the control block. Together with the two
/// intercepts this puts π⁻¹R1 in the column space of R𝕩, which is what makes
/// the OLS residuals HT-orthogonal. Negating the control block would break
/// that whenever π varies across units.
pub fn add_invprop_column(spec: &CovariateSpec, design: &Design) -> Result<CovariateSpec> {
    if spec.level != Level::Unit {
        return Err(DbError::Input("the inverse-probability column is defined for unit-level specifications".into()));
    }
    let n = spec.rows_per_block();
    if design.n() != n {
        return Err(DbError::Dimension(format!("design has {} units, specification {n}", design.n())));
    }
    let pi = design.pi();
    let raw: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
    let mean0 = raw[..n].iter().sum::<f64>() / n as f64;
    let mean1 = raw[n..].iter().sum::<f64>() / n as f64;
    let col = DVector::from_iterator(2 * n, raw.iter().enumerate().map(|(r, v)| v - if r < n { mean0 } else { mean1 }));
    let mut out = spec.clone();
    out.xmat = spec.xmat.clone().insert_column(spec.ncols(), 0.0);
    out.xmat.set_column(spec.ncols(), &col);
    out.labels.push("inverse_probability".into());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn centering_examples() {
        assert_eq!(zero_center(&col(&[1.0, 2.0, 3.0])), col(&[-1.0, 0.0, 1.0]));
        assert_eq!(zero_center(&col(&[5.0, 5.0, 5.0])), col(&[0.0, 0.0, 0.0]));
        assert_eq!(zero_center(&col(&[-1.0, 0.0, 1.0])), col(&[-1.0, 0.0, 1.0]));
    }

    #[test]
    fn spec_i_layouts() {
        let s = spec_i(&DMatrix::zeros(2, 0));
        assert_eq!(s.xmat(), &DMatrix::from_row_slice(4, 2, &[-1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 1.0]));
        let s = spec_i(&col(&[-1.0, 1.0]));
        assert_eq!(s.xmat().column(2).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(s.intercepts(), Some((0, 1)));
    }

    #[test]
    fn spec_ii_layouts() {
        let s = spec_ii(&col(&[-1.0, 1.0]));
        #[rustfmt::skip]
        let want = DMatrix::from_column_slice(4, 4, &[
            -1.0, -1.0, 0.0, 0.0,
             1.0, -1.0, 0.0, 0.0,
             0.0,  0.0, 1.0, 1.0,
             0.0,  0.0, -1.0, 1.0,
        ]);
        assert_eq!(s.xmat(), &want);
        assert_eq!(spec_ii(&DMatrix::zeros(5, 3)).ncols(), 8);
        assert_eq!(spec_ii(&DMatrix::zeros(2, 0)).xmat(), spec_i(&DMatrix::zeros(2, 0)).xmat());
        assert_eq!(s.intercepts(), Some((0, 2)));
    }

    #[test]
    fn spec_i_is_restriction_of_spec_ii() {
        let x = zero_center(&DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0, -2.0, 4.0]));
        let (a0, a1) = (0.3, -1.2);
        let s = [0.7, 2.5];
        let b1 = DVector::from_vec(vec![a0, a1, s[0], s[1]]);
        let b2 = DVector::from_vec(vec![a0, s[0], s[1], a1, s[0], s[1]]);
        assert_relative_eq!(spec_i(&x).fitted(&b1), spec_ii(&x).fitted(&b2), epsilon = 1e-14);
    }

    #[test]
    fn totals_and_sizes() {
        let idx = ClusterIndex::new(&[1, 1, 2]).unwrap();
        assert_eq!(cluster_totals(&col(&[1.0, 2.0, 3.0]), &idx).unwrap(), col(&[3.0, 3.0]));
        assert_eq!(cluster_totals(&col(&[1.0, 1.0, 1.0]), &idx).unwrap(), col(&[2.0, 1.0]));
        let single = ClusterIndex::new(&[4, 5, 6]).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
        assert_eq!(cluster_totals(&x, &single).unwrap(), x);
        let short = ClusterIndex::new(&[1, 2]).unwrap();
        assert!(cluster_totals(&x, &short).is_err());
    }

    #[test]
    fn cluster_spec_layout() {
        let idx = ClusterIndex::new(&[1, 1, 2]).unwrap();
        let s = spec_cluster(&DMatrix::zeros(3, 0), &[], &idx, SpecKind::II).unwrap();
        assert_eq!(s.xmat().shape(), (4, 4));
        assert_eq!(s.xmat().column(2).iter().copied().collect::<Vec<_>>(), vec![-2.0, -1.0, 0.0, 0.0]);
        assert_eq!(s.xmat().column(3).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 2.0, 1.0]);
        assert_eq!(s.divisor(), 3);
        let s1 = spec_cluster(&col(&[1.0, 2.0, 3.0]), &["x".into()], &idx, SpecKind::II).unwrap();
        assert_eq!(s1.ncols(), 6);
        assert_eq!(spec_cluster(&col(&[1.0, 2.0, 3.0]), &["x".into()], &idx, SpecKind::I).unwrap().ncols(), 4);
    }

    #[test]
    fn singleton_cluster_spec_extends_unit_spec() {
        let idx = ClusterIndex::new(&[1, 2, 3]).unwrap();
        let x = zero_center(&col(&[1.0, 4.0, -2.0]));
        let c = spec_cluster(&x, &["x".into()], &idx, SpecKind::II).unwrap();
        let u = spec_ii(&x);
        // intercepts, then size (all ones) and x per arm
        assert_eq!(c.xmat().column(0), u.xmat().column(0));
        assert_eq!(c.xmat().column(1), u.xmat().column(2));
        assert_eq!(c.xmat().column(2), u.xmat().column(0));
        assert_eq!(c.xmat().column(3), u.xmat().column(1));
        assert_eq!(c.xmat().column(5), u.xmat().column(3));
    }

    #[test]
    fn invprop_column() {
        let eq = Design::complete(4, 2).unwrap();
        let s = add_invprop_column(&spec_i(&DMatrix::zeros(4, 0)), &eq).unwrap();
        assert!(s.xmat().column(2).amax() < 1e-12);
        let d = Design::bernoulli(&[0.25, 0.75]).unwrap();
        let s = add_invprop_column(&spec_i(&DMatrix::zeros(2, 0)), &d).unwrap();
        let c = s.xmat().column(2);
        // raw treated entries 4 and 4/3, centered at 8/3
        assert_relative_eq!(c[2], 4.0 - 8.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(c[3], 4.0 / 3.0 - 8.0 / 3.0, epsilon = 1e-12);
    }
}
