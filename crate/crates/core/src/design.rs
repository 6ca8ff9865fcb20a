//! Randomization designs as joint-probability matrices.
//!
//! Every design stores the 2n×2n matrix `p` of joint assignment
//! probabilities. Index `i < n` is "unit i observed under control" and index
//! `n + i` is "unit i observed under treatment". The design matrix `d` is
//! derived from `p` on first use and cached.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterIndex;
use crate::error::{DbError, Result};
use crate::linalg;
use crate::par::Execution;

/// Default ceiling on the number of assignments `enumerate_assignments` will list.
pub const DEFAULT_SUPPORT_CAP: usize = 1_000_000;

/// Largest 2n for which the design matrix gets an explicit eigenvalue check.
/// Above this the O(n³) decomposition is skipped; every constructor here
/// produces a covariance matrix by construction.
pub const EIGEN_CHECK_MAX_DIM: usize = 512;

/// Stacked potential outcomes `[-y0; y1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedOutcomes {
    values: DVector<f64>,
    n: usize,
}

impl StackedOutcomes {
    pub fn new(y0: &[f64], y1: &[f64]) -> Result<Self> {
        if y0.len() != y1.len() || y0.is_empty() {
            return Err(DbError::Dimension(format!(
                "potential outcome vectors have lengths {} and {}",
                y0.len(),
                y1.len()
            )));
        }
        let n = y0.len();
        let values = DVector::from_iterator(2 * n, y0.iter().map(|v| -v).chain(y1.iter().copied()));
        Ok(Self { values, n })
    }

    /// Wrap an already stacked vector (control block negated).
    pub fn from_stacked(values: DVector<f64>) -> Result<Self> {
        if values.len() % 2 != 0 || values.is_empty() {
            return Err(DbError::Dimension("stacked vector must have even, positive length".into()));
        }
        let n = values.len() / 2;
        Ok(Self { values, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn y0(&self) -> Vec<f64> {
        (0..self.n).map(|i| -self.values[i]).collect()
    }

    pub fn y1(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.values[self.n + i]).collect()
    }

    /// The average treatment effect, n⁻¹·1′y, summed unit by unit so that
    /// identical potential outcomes give exactly zero.
    pub fn ate(&self) -> f64 {
        let n = self.n;
        let diffs: Vec<f64> = (0..n).map(|i| self.values[n + i] + self.values[i]).collect();
        linalg::pairwise_sum(&diffs) / n as f64
    }

    /// Observed outcomes under assignment `z`.
    pub fn observe(&self, z: &[bool]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &t)| if t { self.values[self.n + i] } else { -self.values[i] })
            .collect()
    }
}

/// Diagonal of R for assignment `z`: `[1 - z; z]`.
pub fn observed_mask(z: &[bool]) -> Vec<bool> {
    z.iter().map(|t| !t).chain(z.iter().copied()).collect()
}

/// Indices into the stacked 2n vector that are observed under `z`.
pub fn observed_rows(z: &[bool]) -> Vec<usize> {
    let n = z.len();
    z.iter().enumerate().map(|(i, &t)| if t { n + i } else { i }).collect()
}

/// Stacked observed outcomes `Ry` built from the observed (unsigned) outcomes.
pub fn stacked_observed(z: &[bool], y_obs: &[f64]) -> DVector<f64> {
    let n = z.len();
    let mut out = DVector::zeros(2 * n);
    for (i, (&t, &y)) in z.iter().zip(y_obs).enumerate() {
        if t {
            out[n + i] = y;
        } else {
            out[i] = -y;
        }
    }
    out
}

/// A randomization mechanism that can be sampled and, optionally, listed.
pub trait AssignmentSampler: Send + Sync {
    fn n(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<bool>;
    /// Full support with probabilities, when the mechanism can produce it.
    fn support(&self) -> Option<Vec<(Vec<bool>, f64)>> {
        None
    }
}

/// A sampler defined by a closure.
pub struct FnSampler<F> {
    n: usize,
    f: F,
}

impl<F> FnSampler<F>
where
    F: Fn(&mut ChaCha8Rng) -> Vec<bool> + Send + Sync,
{
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F> AssignmentSampler for FnSampler<F>
where
    F: Fn(&mut ChaCha8Rng) -> Vec<bool> + Send + Sync,
{
    fn n(&self) -> usize {
        self.n
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<bool> {
        (self.f)(rng)
    }
}

/// A sampler over an explicit finite support.
#[derive(Debug, Clone)]
pub struct SupportSampler {
    n: usize,
    support: Vec<(Vec<bool>, f64)>,
}

impl SupportSampler {
    pub fn new(support: Vec<(Vec<bool>, f64)>) -> Result<Self> {
        let n = support.first().map(|(z, _)| z.len()).unwrap_or(0);
        if n == 0 {
            return Err(DbError::InvalidDesign("empty support".into()));
        }
        if support.iter().any(|(z, p)| z.len() != n || !p.is_finite() || *p < 0.0) {
            return Err(DbError::InvalidDesign("support entries must share a length and have nonnegative probability".into()));
        }
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DbError::InvalidDesign(format!("support probabilities sum to {total}")));
        }
        Ok(Self { n, support })
    }
}

impl AssignmentSampler for SupportSampler {
    fn n(&self) -> usize {
        self.n
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<bool> {
        pick_from_support(&self.support, rng)
    }

    fn support(&self) -> Option<Vec<(Vec<bool>, f64)>> {
        Some(self.support.clone())
    }
}

fn pick_from_support<R: Rng + ?Sized>(support: &[(Vec<bool>, f64)], rng: &mut R) -> Vec<bool> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (z, p) in support {
        acc += p;
        if u < acc {
            return z.clone();
        }
    }
    support.iter().rev().find(|(_, p)| *p > 0.0).map(|(z, _)| z.clone()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    Enumerate,
    MonteCarlo,
}

/// How the joint probabilities were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Complete { n1: usize },
    Bernoulli { pi1: Vec<f64> },
    Cluster { cluster_ids: Vec<i64>, m1: usize },
    Enumerated { support: Vec<(Vec<bool>, f64)> },
    MonteCarlo { draws: usize, seed: u64, max_adjustment: f64 },
}

impl Provenance {
    pub fn name(&self) -> &'static str {
        match self {
            Provenance::Complete { .. } => "complete",
            Provenance::Bernoulli { .. } => "bernoulli",
            Provenance::Cluster { .. } => "cluster",
            Provenance::Enumerated { .. } => "enumerated",
            Provenance::MonteCarlo { .. } => "monte_carlo",
        }
    }
}

/// A two-arm randomization design over `n` units.
#[derive(Clone)]
pub struct Design {
    n: usize,
    p: DMatrix<f64>,
    provenance: Provenance,
    clusters: Option<ClusterIndex>,
    sampler: Option<Arc<dyn AssignmentSampler>>,
    warnings: Vec<String>,
    dmat: OnceLock<DMatrix<f64>>,
}

impl fmt::Debug for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Design")
            .field("n", &self.n)
            .field("provenance", &self.provenance.name())
            .field("warnings", &self.warnings)
            .finish()
    }
}

impl Design {
    /// Complete randomization: exactly `n1` of `n` units treated.
    pub fn complete(n: usize, n1: usize) -> Result<Self> {
        if n < 2 {
            return Err(DbError::InvalidDesign("complete randomization needs n >= 2".into()));
        }
        if n1 == 0 || n1 >= n {
            return Err(DbError::Unidentified {
                units: (1..=n).collect(),
                detail: format!("treatment probability {} (n1 = {n1} of n = {n})", n1 as f64 / n as f64),
            });
        }
        let p = complete_joint(n, n, n1, |i, j| i == j);
        Self::finish(n, p, Provenance::Complete { n1 }, None, None)
    }

    /// Independent assignment with unit-specific treatment probabilities.
    pub fn bernoulli(pi1: &[f64]) -> Result<Self> {
        let n = pi1.len();
        if n < 2 {
            return Err(DbError::InvalidDesign("Bernoulli design needs n >= 2".into()));
        }
        let bad: Vec<usize> =
            pi1.iter().enumerate().filter(|(_, &p)| !(p > 0.0 && p < 1.0)).map(|(i, _)| i + 1).collect();
        if !bad.is_empty() {
            return Err(DbError::Unidentified { units: bad, detail: "treatment probability outside (0, 1)".into() });
        }
        let marg: Vec<f64> = pi1.iter().map(|p| 1.0 - p).chain(pi1.iter().copied()).collect();
        let p = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
            let (ur, uc) = (r % n, c % n);
            if ur == uc {
                if r == c {
                    marg[r]
                } else {
                    0.0
                }
            } else {
                marg[r] * marg[c]
            }
        });
        Self::finish(n, p, Provenance::Bernoulli { pi1: pi1.to_vec() }, None, None)
    }

    /// Complete randomization of `m1` whole clusters out of `m`.
    pub fn cluster(cluster_ids: &[i64], m1: usize) -> Result<Self> {
        let idx = ClusterIndex::new(cluster_ids)?;
        let (n, m) = (idx.n_units(), idx.n_clusters());
        if m < 2 {
            return Err(DbError::InvalidDesign("cluster randomization needs at least two clusters".into()));
        }
        if m1 == 0 || m1 >= m {
            return Err(DbError::Unidentified {
                units: (1..=n).collect(),
                detail: format!("cluster treatment probability {} (m1 = {m1} of m = {m})", m1 as f64 / m as f64),
            });
        }
        let mut warnings = Vec::new();
        if m1 < 2 || m - m1 < 2 {
            let msg = format!("only {m1} treated and {} control clusters; at least two per arm is recommended", m - m1);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let p = complete_joint(n, m, m1, |i, j| idx.same_cluster(i, j));
        let mut d = Self::finish(
            n,
            p,
            Provenance::Cluster { cluster_ids: cluster_ids.to_vec(), m1 },
            Some(idx),
            None,
        )?;
        d.warnings = warnings;
        Ok(d)
    }

    /// Exact design from an explicit support.
    pub fn enumerated(support: Vec<(Vec<bool>, f64)>) -> Result<Self> {
        let sampler = SupportSampler::new(support)?;
        Self::from_sampler(Arc::new(sampler), 0, 0, SamplerMode::Enumerate, Execution::Sequential)
    }

    /// Build a design from an arbitrary assignment mechanism, either from its
    /// full support or from `draws` Monte-Carlo samples.
    pub fn from_sampler(
        sampler: Arc<dyn AssignmentSampler>,
        draws: usize,
        seed: u64,
        mode: SamplerMode,
        exec: Execution,
    ) -> Result<Self> {
        let n = sampler.n();
        if n < 2 {
            return Err(DbError::InvalidDesign("designs need n >= 2".into()));
        }
        match mode {
            SamplerMode::Enumerate => {
                let support = sampler.support().ok_or_else(|| {
                    DbError::InvalidDesign("sampler does not expose its support; use Monte-Carlo mode".into())
                })?;
                let mut p = DMatrix::zeros(2 * n, 2 * n);
                for (z, prob) in &support {
                    if z.len() != n {
                        return Err(DbError::Dimension("support assignment of wrong length".into()));
                    }
                    let rows = observed_rows(z);
                    for &a in &rows {
                        for &b in &rows {
                            p[(a, b)] += prob;
                        }
                    }
                }
                Self::finish(n, p, Provenance::Enumerated { support }, None, Some(sampler))
            }
            SamplerMode::MonteCarlo => {
                if draws == 0 {
                    return Err(DbError::InvalidDesign("Monte-Carlo estimation needs draws > 0".into()));
                }
                let (p, adj) = monte_carlo_joint(sampler.as_ref(), draws, seed, exec)?;
                Self::finish(n, p, Provenance::MonteCarlo { draws, seed, max_adjustment: adj }, None, Some(sampler))
            }
        }
    }

    fn finish(
        n: usize,
        p: DMatrix<f64>,
        provenance: Provenance,
        clusters: Option<ClusterIndex>,
        sampler: Option<Arc<dyn AssignmentSampler>>,
    ) -> Result<Self> {
        let mut always = Vec::new();
        let mut never = Vec::new();
        for i in 0..n {
            let pi1 = p[(n + i, n + i)];
            if pi1 >= 1.0 {
                always.push(i + 1);
            } else if pi1 <= 0.0 {
                never.push(i + 1);
            }
        }
        if !always.is_empty() {
            return Err(DbError::Unidentified { units: always, detail: "treatment probability 1".into() });
        }
        if !never.is_empty() {
            return Err(DbError::Unidentified { units: never, detail: "treatment probability 0".into() });
        }
        Ok(Self { n, p, provenance, clusters, sampler, warnings: Vec::new(), dmat: OnceLock::new() })
    }

    /// Rebuild a design from a stored joint-probability matrix (e.g. from JSON).
    pub fn from_joint(p: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        if p.nrows() != p.ncols() || p.nrows() % 2 != 0 || p.nrows() < 4 {
            return Err(DbError::Dimension("joint probability matrix must be 2n×2n with n >= 2".into()));
        }
        let n = p.nrows() / 2;
        for i in 0..n {
            let s = p[(i, i)] + p[(n + i, n + i)];
            if (s - 1.0).abs() > 1e-9 || p[(i, n + i)].abs() > 1e-12 {
                return Err(DbError::InvalidDesign(format!("unit {} has inconsistent marginals", i + 1)));
            }
        }
        let clusters = match &provenance {
            Provenance::Cluster { cluster_ids, .. } => Some(ClusterIndex::new(cluster_ids)?),
            _ => None,
        };
        let sampler: Option<Arc<dyn AssignmentSampler>> = match &provenance {
            Provenance::Enumerated { support } => Some(Arc::new(SupportSampler::new(support.clone())?)),
            _ => None,
        };
        Self::finish(n, p, provenance, clusters, sampler)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn joint(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn clusters(&self) -> Option<&ClusterIndex> {
        self.clusters.as_ref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Marginal probabilities, length 2n (diagonal of p).
    pub fn pi(&self) -> DVector<f64> {
        self.p.diagonal()
    }

    pub fn pi1(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.p[(self.n + i, self.n + i)]).collect()
    }

    /// True when every unit shares the same treatment probability.
    pub fn equal_pi(&self) -> bool {
        let pi1 = self.pi1();
        pi1.iter().all(|p| (p - pi1[0]).abs() < 1e-12)
    }

    /// The design matrix d = (p − ππ′)/(ππ′), computed once.
    pub fn design_matrix(&self) -> Result<&DMatrix<f64>> {
        if let Some(d) = self.dmat.get() {
            return Ok(d);
        }
        let d = self.compute_design_matrix()?;
        Ok(self.dmat.get_or_init(|| d))
    }

    fn compute_design_matrix(&self) -> Result<DMatrix<f64>> {
        let pi = self.pi();
        let dim = 2 * self.n;
        let mut d = DMatrix::from_fn(dim, dim, |r, c| self.p[(r, c)] / (pi[r] * pi[c]) - 1.0);
        // Exact -1 where the pair is never jointly observed.
        for r in 0..dim {
            for c in 0..dim {
                if self.p[(r, c)] == 0.0 {
                    d[(r, c)] = -1.0;
                }
            }
        }
        let d = linalg::symmetrize(&d);
        if dim <= EIGEN_CHECK_MAX_DIM {
            let eigs = linalg::sym_eigenvalues(&d);
            let norm = linalg::sym_spectral_norm(&eigs);
            if eigs[0] < -linalg::PSD_RTOL * norm.max(1.0) {
                return Err(DbError::NotPsd { min_eig: eigs[0] });
            }
        }
        Ok(d)
    }

    /// Draw one assignment.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<bool>> {
        let n = self.n;
        match &self.provenance {
            Provenance::Complete { n1 } => {
                let mut z = vec![false; n];
                for i in sample_indices(rng, n, *n1) {
                    z[i] = true;
                }
                Ok(z)
            }
            Provenance::Bernoulli { pi1 } => Ok(pi1.iter().map(|&p| rng.random::<f64>() < p).collect()),
            Provenance::Cluster { m1, .. } => {
                let idx = self.clusters.as_ref().expect("cluster designs carry their index");
                let mut zc = vec![false; idx.n_clusters()];
                for c in sample_indices(rng, idx.n_clusters(), *m1) {
                    zc[c] = true;
                }
                Ok(idx.expand_assignment(&zc))
            }
            Provenance::Enumerated { support } => Ok(pick_from_support(support, rng)),
            Provenance::MonteCarlo { .. } => {
                let sampler = self
                    .sampler
                    .as_ref()
                    .ok_or_else(|| DbError::InvalidDesign("Monte-Carlo design has no attached sampler".into()))?;
                let mut inner = ChaCha8Rng::seed_from_u64(rng.random());
                Ok(sampler.sample(&mut inner))
            }
        }
    }

    /// Deterministic single draw from a seed.
    pub fn draw_seeded(&self, seed: u64) -> Result<Vec<bool>> {
        self.draw(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Probability of a particular assignment, when the design can say.
    pub fn assignment_probability(&self, z: &[bool]) -> Option<f64> {
        if z.len() != self.n {
            return Some(0.0);
        }
        match &self.provenance {
            Provenance::Complete { n1 } => {
                let k = z.iter().filter(|t| **t).count();
                Some(if k == *n1 { 1.0 / binomial(self.n, *n1) as f64 } else { 0.0 })
            }
            Provenance::Bernoulli { pi1 } => {
                Some(pi1.iter().zip(z).map(|(p, &t)| if t { *p } else { 1.0 - p }).product())
            }
            Provenance::Cluster { m1, .. } => {
                let idx = self.clusters.as_ref()?;
                match idx.cluster_assignment(z) {
                    Ok(zc) if zc.iter().filter(|t| **t).count() == *m1 => {
                        Some(1.0 / binomial(idx.n_clusters(), *m1) as f64)
                    }
                    _ => Some(0.0),
                }
            }
            Provenance::Enumerated { support } => {
                Some(support.iter().filter(|(s, _)| s.as_slice() == z).map(|(_, p)| p).sum())
            }
            Provenance::MonteCarlo { .. } => None,
        }
    }

    /// List every assignment with its probability, up to `cap` entries.
    pub fn enumerate_assignments(&self, cap: usize) -> Result<Vec<(Vec<bool>, f64)>> {
        let n = self.n;
        match &self.provenance {
            Provenance::Complete { n1 } => {
                let size = binomial(n, *n1);
                check_cap(size, cap)?;
                let prob = 1.0 / size as f64;
                Ok(combinations(n, *n1).into_iter().map(|z| (z, prob)).collect())
            }
            Provenance::Bernoulli { pi1 } => {
                let size = 1u128.checked_shl(n as u32).unwrap_or(u128::MAX);
                check_cap(size, cap)?;
                Ok((0..size as u64)
                    .map(|mask| {
                        let z: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                        let prob = pi1.iter().zip(&z).map(|(p, &t)| if t { *p } else { 1.0 - p }).product();
                        (z, prob)
                    })
                    .collect())
            }
            Provenance::Cluster { m1, .. } => {
                let idx = self.clusters.as_ref().expect("cluster designs carry their index");
                let size = binomial(idx.n_clusters(), *m1);
                check_cap(size, cap)?;
                let prob = 1.0 / size as f64;
                Ok(combinations(idx.n_clusters(), *m1)
                    .into_iter()
                    .map(|zc| (idx.expand_assignment(&zc), prob))
                    .collect())
            }
            Provenance::Enumerated { support } => {
                check_cap(support.len() as u128, cap)?;
                Ok(support.clone())
            }
            Provenance::MonteCarlo { .. } => Err(DbError::InvalidDesign(
                "Monte-Carlo designs have no exact support; draw from them instead".into(),
            )),
        }
    }

    /// For a cluster design, the equivalent complete randomization of clusters.
    pub fn cluster_level(&self) -> Result<(Design, ClusterIndex)> {
        match (&self.provenance, &self.clusters) {
            (Provenance::Cluster { m1, .. }, Some(idx)) => Ok((Design::complete(idx.n_clusters(), *m1)?, idx.clone())),
            _ => Err(DbError::InvalidDesign("not a cluster-randomized design".into())),
        }
    }
}

fn check_cap(size: u128, cap: usize) -> Result<()> {
    if size > cap as u128 {
        Err(DbError::SupportTooLarge { size, cap })
    } else {
        Ok(())
    }
}

/// Joint probabilities for complete randomization of `m` blocks with `m1`
/// treated, expanded to `n` units; `same(i, j)` says whether two units share a
/// block. With singleton blocks this is plain complete randomization.
fn complete_joint(n: usize, m: usize, m1: usize, same: impl Fn(usize, usize) -> bool) -> DMatrix<f64> {
    let (mf, m1f) = (m as f64, m1 as f64);
    let m0f = mf - m1f;
    let pair = mf * (mf - 1.0);
    let (p11, p00, p10) = (m1f * (m1f - 1.0) / pair, m0f * (m0f - 1.0) / pair, m1f * m0f / pair);
    let (pi1, pi0) = (m1f / mf, m0f / mf);
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let (i, j) = (r % n, c % n);
        let (tr, tc) = (r >= n, c >= n);
        if same(i, j) {
            match (tr, tc) {
                (true, true) => pi1,
                (false, false) => pi0,
                _ => 0.0,
            }
        } else {
            match (tr, tc) {
                (true, true) => p11,
                (false, false) => p00,
                _ => p10,
            }
        }
    })
}

/// n choose k as u128 (saturating).
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All 0/1 vectors of length n with exactly k ones, in lexicographic order of
/// the treated index sets.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<bool>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let mut z = vec![false; n];
        for &i in &idx {
            z[i] = true;
        }
        out.push(z);
        // advance
        let mut pos = k;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if idx[pos] < n - k + pos {
                break;
            }
        }
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn monte_carlo_joint(
    sampler: &dyn AssignmentSampler,
    draws: usize,
    seed: u64,
    exec: Execution,
) -> Result<(DMatrix<f64>, f64)> {
    const CHUNK: usize = 4096;
    let n = sampler.n();
    let dim = 2 * n;
    let chunks = draws.div_ceil(CHUNK);
    // Integer co-occurrence counts make the result independent of scheduling.
    let partial: Vec<Result<Vec<u64>>> = exec.map_indexed(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let mut counts = vec![0u64; dim * dim];
        let hi = ((c + 1) * CHUNK).min(draws);
        for _ in c * CHUNK..hi {
            let z = sampler.sample(&mut rng);
            if z.len() != n {
                return Err(DbError::Dimension(format!("sampler returned length {} for n = {n}", z.len())));
            }
            let rows = observed_rows(&z);
            for &a in &rows {
                for &b in &rows {
                    counts[a * dim + b] += 1;
                }
            }
        }
        Ok(counts)
    });
    let mut total = vec![0u64; dim * dim];
    for part in partial {
        for (t, v) in total.iter_mut().zip(part?) {
            *t += v;
        }
    }
    let raw = DMatrix::from_fn(dim, dim, |r, c| total[r * dim + c] as f64 / draws as f64);
    // Symmetrize and clip to the Design invariants; report how far we moved.
    let mut p = linalg::symmetrize(&raw);
    for r in 0..dim {
        for c in 0..dim {
            let cap = p[(r, r)].min(p[(c, c)]);
            p[(r, c)] = p[(r, c)].clamp(0.0, cap);
        }
        if r < n {
            p[(r, r + n)] = 0.0;
            p[(r + n, r)] = 0.0;
        }
    }
    let adj = (&p - &raw).abs().max();
    Ok((p, adj))
}
