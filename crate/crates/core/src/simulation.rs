//! The cluster-randomized simulation: one fixed finite population under the
//! sharp null, many cluster randomizations, four coefficient estimators and
//! four covariate sets, all with separate slopes per arm.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bounds::{as_bound, cluster_bound, BoundEstimator, Interval};
use crate::cluster::ClusterIndex;
use crate::covariates::{spec_cluster, spec_ii_labeled, zero_center, CovariateSpec, SpecKind};
use crate::design::{Design, StackedOutcomes};
use crate::error::{DbError, Result};
use crate::estimators::{coef_2r, coef_3ht, coef_ols_cluster_totals, coef_wls_pi, greg, Sample, WeightedSystem};
use crate::linalg::{self, pairwise_mean};
use crate::par::Execution;

/// RNG stream reserved for building the population. Replication `r` uses
/// stream `r`, so the two never overlap.
pub const POPULATION_STREAM: u64 = u64::MAX;

/// The spread of the outcome noise was reported as "N(0, 5)" without saying
/// whether 5 is a variance or a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseInterpretation {
    Variance,
    Sd,
}

impl NoiseInterpretation {
    pub fn sd(self) -> f64 {
        match self {
            NoiseInterpretation::Variance => 5f64.sqrt(),
            NoiseInterpretation::Sd => 5.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NoiseInterpretation::Variance => "variance",
            NoiseInterpretation::Sd => "sd",
        }
    }
}

/// Either a fixed interpretation or "whichever reproduces the target R²".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseChoice {
    #[default]
    Calibrated,
    Variance,
    Sd,
}

impl std::str::FromStr for NoiseChoice {
    type Err = DbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calibrated" => Ok(Self::Calibrated),
            "variance" => Ok(Self::Variance),
            "sd" => Ok(Self::Sd),
            other => Err(DbError::Input(format!("unknown noise interpretation '{other}'"))),
        }
    }
}

/// Target R² of the outcome on {x, x̄_c, n_c, n_c²} used for calibration.
pub const TARGET_R2: f64 = 0.173;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEstimator {
    WlsOls,
    ThreeHt,
    TwoR,
    OlsClusterTotals,
}

impl SimEstimator {
    pub const ALL: [SimEstimator; 4] =
        [SimEstimator::WlsOls, SimEstimator::ThreeHt, SimEstimator::TwoR, SimEstimator::OlsClusterTotals];

    pub fn label(self) -> &'static str {
        match self {
            SimEstimator::WlsOls => "wls_ols",
            SimEstimator::ThreeHt => "three_ht",
            SimEstimator::TwoR => "two_r",
            SimEstimator::OlsClusterTotals => "ols_cluster_totals",
        }
    }

    fn display(self) -> &'static str {
        match self {
            SimEstimator::WlsOls => "WLS/OLS",
            SimEstimator::ThreeHt => "3HT!",
            SimEstimator::TwoR => "2R!",
            SimEstimator::OlsClusterTotals => "OLS cluster totals",
        }
    }
}

impl std::str::FromStr for SimEstimator {
    type Err = DbError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.label() == s)
            .ok_or_else(|| DbError::Input(format!("unknown simulation estimator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_units: usize,
    pub n_clusters: usize,
    pub m1: usize,
    pub replications: usize,
    pub seed: u64,
    pub noise_interpretation: NoiseChoice,
    /// Covariate set ids, 1 through 4.
    pub spec_sets: Vec<u8>,
    pub estimators: Vec<SimEstimator>,
    pub execution: Execution,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_units: 1000,
            n_clusters: 100,
            m1: 40,
            replications: 5000,
            seed: 20240601,
            noise_interpretation: NoiseChoice::Calibrated,
            spec_sets: vec![1, 2, 3, 4],
            estimators: SimEstimator::ALL.to_vec(),
            execution: Execution::Parallel,
        }
    }
}

impl SimConfig {
    /// The small configuration used for quick checks: 60 units in 12 clusters.
    pub fn tiny() -> Self {
        Self { n_units: 60, n_clusters: 12, m1: 5, replications: 500, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units < 2 || self.n_clusters < 2 {
            return Err(DbError::Input("need at least two units and two clusters".into()));
        }
        if self.n_clusters > self.n_units {
            return Err(DbError::Input("more clusters than units".into()));
        }
        if self.replications == 0 {
            return Err(DbError::Input("replications must be positive".into()));
        }
        let mut seen = [false; 5];
        for &s in &self.spec_sets {
            if !(1..=4).contains(&s) {
                return Err(DbError::Input(format!("covariate set {s} does not exist (use 1 to 4)")));
            }
            if std::mem::replace(&mut seen[s as usize], true) {
                return Err(DbError::Input(format!("covariate set {s} listed twice")));
            }
        }
        let mut est = self.estimators.clone();
        est.sort();
        est.dedup();
        if est.len() != self.estimators.len() {
            return Err(DbError::Input("an estimator is listed twice".into()));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Cluster of unit i (1-based): trunc(1 + m((i − .5)/n)^1.2).
pub fn cluster_of(i: usize, n_units: usize, n_clusters: usize) -> i64 {
    let u = (i as f64 - 0.5) / n_units as f64;
    (1.0 + n_clusters as f64 * u.powf(1.2)).trunc() as i64
}

/// Size → number of clusters of that size.
pub fn cluster_size_table(index: &ClusterIndex) -> BTreeMap<usize, usize> {
    let mut t = BTreeMap::new();
    for &s in index.sizes() {
        *t.entry(s).or_insert(0) += 1;
    }
    t
}

/// The fixed finite population.
#[derive(Debug, Clone)]
pub struct Population {
    pub outcomes: StackedOutcomes,
    pub x: Vec<f64>,
    pub cluster_ids: Vec<i64>,
    pub index: ClusterIndex,
    pub noise: NoiseInterpretation,
}

impl Population {
    /// Unit-level n×k covariates of set 1..4 with their names, uncentered.
    pub fn covariates(&self, set: u8) -> Result<(DMatrix<f64>, Vec<String>)> {
        let n = self.x.len();
        let xbar = self.index.unit_means(&self.x);
        let size: Vec<f64> = self.index.membership().iter().map(|&c| self.index.sizes()[c] as f64).collect();
        let all: [(&str, Vec<f64>); 4] = [
            ("x", self.x.clone()),
            ("x_bar", xbar),
            ("n_c", size.clone()),
            ("n_c_sq", size.iter().map(|s| s * s).collect()),
        ];
        if !(1..=4).contains(&set) {
            return Err(DbError::Input(format!("covariate set {set} does not exist")));
        }
        let k = set as usize;
        let m = DMatrix::from_fn(n, k, |i, j| all[j].1[i]);
        Ok((m, all[..k].iter().map(|(s, _)| s.to_string()).collect()))
    }

    /// R² of y₀ on an intercept, x, x̄_c, n_c and n_c².
    pub fn r_squared(&self) -> f64 {
        let (cov, _) = self.covariates(4).expect("set 4 exists");
        r_squared(&cov, &self.outcomes.y0())
    }
}

/// OLS R² with an intercept.
pub fn r_squared(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = y.len();
    let design = x.clone().insert_column(0, 1.0);
    let yv = DVector::from_column_slice(y);
    let (inv, _) = linalg::pinv(&(design.tr_mul(&design)));
    let beta = inv * design.tr_mul(&yv);
    let resid = &yv - &design * beta;
    let mean = yv.sum() / n as f64;
    let sst: f64 = yv.iter().map(|v| (v - mean).powi(2)).sum();
    1.0 - resid.norm_squared() / sst
}

/// The raw draws behind a population, shared by both noise readings so that
/// calibration compares like with like.
struct PopulationDraws {
    cluster_ids: Vec<i64>,
    index: ClusterIndex,
    x: Vec<f64>,
    alpha_unit: Vec<f64>,
    noise: Vec<f64>,
}

fn draw_population(config: &SimConfig) -> Result<PopulationDraws> {
    let n = config.n_units;
    let cluster_ids: Vec<i64> = (1..=n).map(|i| cluster_of(i, n, config.n_clusters)).collect();
    let index = ClusterIndex::new(&cluster_ids)?;
    let mut rng = config.rng(POPULATION_STREAM);
    let alpha: Vec<f64> = (0..index.n_clusters()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let eps_x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let alpha_unit: Vec<f64> = index.membership().iter().map(|&c| alpha[c]).collect();
    let x = alpha_unit.iter().zip(&eps_x).map(|(a, e)| a + e).collect();
    Ok(PopulationDraws { cluster_ids, index, x, alpha_unit, noise })
}

fn assemble(draws: &PopulationDraws, noise: NoiseInterpretation) -> Result<Population> {
    let sd = noise.sd();
    let y: Vec<f64> = (0..draws.x.len())
        .map(|i| {
            let nc = draws.index.sizes()[draws.index.membership()[i]] as f64;
            -draws.alpha_unit[i] + draws.x[i] + nc - 0.025 * nc * nc + sd * draws.noise[i]
        })
        .collect();
    Ok(Population {
        outcomes: StackedOutcomes::new(&y, &y)?,
        x: draws.x.clone(),
        cluster_ids: draws.cluster_ids.clone(),
        index: draws.index.clone(),
        noise,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub r2_variance: f64,
    pub r2_sd: f64,
    pub chosen: NoiseInterpretation,
    pub target: f64,
}

/// R² under both noise readings, and the one closer to the target.
pub fn calibrate_noise(config: &SimConfig) -> Result<Calibration> {
    let draws = draw_population(config)?;
    let r2_variance = assemble(&draws, NoiseInterpretation::Variance)?.r_squared();
    let r2_sd = assemble(&draws, NoiseInterpretation::Sd)?.r_squared();
    let chosen = if (r2_variance - TARGET_R2).abs() <= (r2_sd - TARGET_R2).abs() {
        NoiseInterpretation::Variance
    } else {
        NoiseInterpretation::Sd
    };
    Ok(Calibration { r2_variance, r2_sd, chosen, target: TARGET_R2 })
}

/// Generate the population, resolving the noise reading by calibration when
/// the config asks for it.
pub fn build_population(config: &SimConfig) -> Result<(Population, Calibration)> {
    let calibration = calibrate_noise(config)?;
    let noise = match config.noise_interpretation {
        NoiseChoice::Calibrated => calibration.chosen,
        NoiseChoice::Variance => NoiseInterpretation::Variance,
        NoiseChoice::Sd => NoiseInterpretation::Sd,
    };
    Ok((assemble(&draw_population(config)?, noise)?, calibration))
}

/// Everything a replication needs that does not change between draws.
struct SetCache {
    set: u8,
    unit: CovariateSpec,
    cluster: CovariateSpec,
    system: Option<WeightedSystem>,
}

struct Fixture {
    population: Population,
    design: Design,
    cluster_design: Design,
    sets: Vec<SetCache>,
}

fn fixture(config: &SimConfig, population: Population, need_system: bool) -> Result<Fixture> {
    let m = population.index.n_clusters();
    if config.m1 == 0 || config.m1 >= m {
        return Err(DbError::Input(format!("m1 = {} but the population has {m} clusters", config.m1)));
    }
    let design = Design::cluster(&population.cluster_ids, config.m1)?;
    let (cluster_design, _) = design.cluster_level()?;
    let d = if need_system { Some(design.design_matrix()?) } else { None };
    let mut sets = Vec::new();
    for &set in &config.spec_sets {
        let (raw, names) = population.covariates(set)?;
        let unit = spec_ii_labeled(&zero_center(&raw), &names);
        let cluster = spec_cluster(&raw, &names, &population.index, SpecKind::II)?;
        let system = d.map(|d| WeightedSystem::new(&unit, d)).transpose()?;
        sets.push(SetCache { set, unit, cluster, system });
    }
    Ok(Fixture { population, design, cluster_design, sets })
}

fn estimate(fx: &Fixture, cache: &SetCache, est: SimEstimator, sample: &Sample) -> Result<f64> {
    let coef = match est {
        SimEstimator::WlsOls => coef_wls_pi(&cache.unit, sample, &fx.design)?,
        SimEstimator::ThreeHt => coef_3ht(cache.system.as_ref().expect("system cached"), &cache.unit, sample, &fx.design)?,
        SimEstimator::TwoR => coef_2r(cache.system.as_ref().expect("system cached"), &cache.unit, sample, &fx.design)?,
        SimEstimator::OlsClusterTotals => {
            let (coef, sc) = coef_ols_cluster_totals(&cache.cluster, sample)?;
            return Ok(greg(&sc, &fx.cluster_design, &cache.cluster, &coef)?.point);
        }
    };
    Ok(greg(sample, &fx.design, &cache.unit, &coef)?.point)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub estimator: SimEstimator,
    pub spec_set: u8,
    pub mean: f64,
    pub mse: f64,
    pub bias_sq: f64,
    pub se_sq: f64,
    /// 100(1 − MSE / MSE of WLS/OLS on the same set); absent without a benchmark.
    pub pct_mse_reduction: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub config: SimConfig,
    pub calibration: Calibration,
    pub noise: NoiseInterpretation,
    pub population_r2: f64,
    pub cluster_sizes: BTreeMap<usize, usize>,
    pub true_ate: f64,
    /// (set, estimator) in the column order of `estimates`.
    pub cells: Vec<(u8, SimEstimator)>,
    /// One row per replication; `None` marks a failed estimate.
    pub estimates: Vec<Vec<Option<f64>>>,
    pub metrics: Vec<CellMetrics>,
    pub failures: usize,
    pub failure_messages: Vec<String>,
}

fn summarize(values: &[f64], truth: f64) -> (f64, f64, f64, f64) {
    let mean = pairwise_mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - truth).powi(2)).collect();
    let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let mse = pairwise_mean(&sq);
    let se_sq = pairwise_mean(&dev);
    (mean, mse, (mean - truth).powi(2), se_sq)
}

/// Run every replication and aggregate. Output depends only on the config,
/// never on the execution strategy or thread count.
pub fn run_simulation(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let (population, calibration) = build_population(config)?;
    let noise = population.noise;
    let population_r2 = population.r_squared();
    let cluster_sizes = cluster_size_table(&population.index);
    let truth = population.outcomes.ate();
    let need_system = config.estimators.iter().any(|e| matches!(e, SimEstimator::ThreeHt | SimEstimator::TwoR));
    let fx = fixture(config, population, need_system)?;
    let cells: Vec<(u8, SimEstimator)> =
        fx.sets.iter().flat_map(|c| config.estimators.iter().map(move |&e| (c.set, e))).collect();

    let rows: Vec<(Vec<Option<f64>>, Vec<String>)> = config.execution.map_indexed(config.replications, |r| {
        let mut rng = config.rng(r as u64);
        let mut out = Vec::with_capacity(cells.len());
        let mut errors = Vec::new();
        let sample = match fx.design.draw(&mut rng) {
            Ok(z) => Sample::observe(&fx.population.outcomes, &z),
            Err(e) => return (vec![None; cells.len()], vec![format!("replication {r}: {e}")]),
        };
        for cache in &fx.sets {
            for &est in &config.estimators {
                match estimate(&fx, cache, est, &sample) {
                    Ok(v) if v.is_finite() => out.push(Some(v)),
                    Ok(v) => {
                        errors.push(format!("replication {r}, set {}, {}: estimate {v}", cache.set, est.label()));
                        out.push(None);
                    }
                    Err(e) => {
                        errors.push(format!("replication {r}, set {}, {}: {e}", cache.set, est.label()));
                        out.push(None);
                    }
                }
            }
        }
        (out, errors)
    });
    let mut estimates = Vec::with_capacity(rows.len());
    let mut failure_messages = Vec::new();
    for (row, errs) in rows {
        estimates.push(row);
        failure_messages.extend(errs);
    }
    let failures = failure_messages.len();
    if failures > 0 {
        log::warn!("{failures} estimates failed; first: {}", failure_messages[0]);
    }

    let mut metrics: Vec<CellMetrics> = cells
        .iter()
        .enumerate()
        .map(|(k, &(set, est))| {
            let vals: Vec<f64> = estimates.iter().filter_map(|row| row[k]).collect();
            let (mean, mse, bias_sq, se_sq) = summarize(&vals, truth);
            CellMetrics {
                estimator: est,
                spec_set: set,
                mean,
                mse,
                bias_sq,
                se_sq,
                pct_mse_reduction: None,
                successes: vals.len(),
                failures: estimates.len() - vals.len(),
            }
        })
        .collect();
    let bench: BTreeMap<u8, f64> =
        metrics.iter().filter(|m| m.estimator == SimEstimator::WlsOls).map(|m| (m.spec_set, m.mse)).collect();
    for m in &mut metrics {
        m.pct_mse_reduction = bench.get(&m.spec_set).map(|b| 100.0 * (1.0 - m.mse / b));
    }
    Ok(SimOutput {
        config: config.clone(),
        calibration,
        noise,
        population_r2,
        cluster_sizes,
        true_ate: truth,
        cells,
        estimates,
        metrics,
        failures,
        failure_messages,
    })
}

impl SimOutput {
    pub fn metric(&self, est: SimEstimator, set: u8) -> Option<&CellMetrics> {
        self.metrics.iter().find(|m| m.estimator == est && m.spec_set == set)
    }
}

/// Coverage of normal intervals around the 2R! point: one from the AS bound
/// with 2R! residuals, one from the cluster bound with the borrowed
/// coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub spec_set: u8,
    pub replications: usize,
    pub z: f64,
    pub as_coverage: f64,
    pub borrowed_coverage: f64,
    pub as_mean_width: f64,
    pub borrowed_mean_width: f64,
    pub as_truncated: usize,
    pub borrowed_truncated: usize,
    pub failures: usize,
}

pub fn run_coverage(config: &SimConfig, set: u8, z: f64) -> Result<CoverageSummary> {
    config.validate()?;
    let (population, _) = build_population(config)?;
    let truth = population.outcomes.ate();
    let cfg = SimConfig { spec_sets: vec![set], ..config.clone() };
    let fx = fixture(&cfg, population, true)?;
    let cache = &fx.sets[0];
    let d = fx.design.design_matrix()?;
    let as_b = as_bound(d)?;
    let cl_b = cluster_bound(d, &fx.population.index)?;
    let as_est = BoundEstimator::new(&as_b, &fx.design)?;
    let cl_est = BoundEstimator::new(&cl_b, &fx.design)?;
    let borrowed = WeightedSystem::new(&cache.unit, &cl_b.dtilde)?;
    let system = cache.system.as_ref().expect("system cached");
    let div = cache.unit.divisor();

    let rows: Vec<Option<(Interval, Interval)>> = cfg.execution.map_indexed(cfg.replications, |r| {
        let mut rng = cfg.rng(r as u64);
        let zr = fx.design.draw(&mut rng).ok()?;
        let sample = Sample::observe(&fx.population.outcomes, &zr);
        let coef = coef_2r(system, &cache.unit, &sample, &fx.design).ok()?;
        let point = greg(&sample, &fx.design, &cache.unit, &coef).ok()?.point;
        let resid = sample.stacked() - cache.unit.fitted(&coef.b);
        let v_as = as_est.evaluate(&zr, &resid, div);
        let b_tilde = borrowed.two_step(&cache.unit, &sample, &fx.design).ok()?;
        let resid_t = sample.stacked() - cache.unit.fitted(&b_tilde);
        let v_cl = cl_est.evaluate(&zr, &resid_t, div);
        Some((Interval::new(point, v_as, z), Interval::new(point, v_cl, z)))
    });
    let ok: Vec<&(Interval, Interval)> = rows.iter().flatten().collect();
    let count = ok.len().max(1) as f64;
    let rate = |f: &dyn Fn(&(Interval, Interval)) -> bool| ok.iter().filter(|p| f(p)).count() as f64 / count;
    let widths = |f: &dyn Fn(&(Interval, Interval)) -> f64| pairwise_mean(&ok.iter().map(|p| f(p)).collect::<Vec<_>>());
    Ok(CoverageSummary {
        spec_set: set,
        replications: cfg.replications,
        z,
        as_coverage: rate(&|p| p.0.covers(truth)),
        borrowed_coverage: rate(&|p| p.1.covers(truth)),
        as_mean_width: widths(&|p| p.0.width()),
        borrowed_mean_width: widths(&|p| p.1.width()),
        as_truncated: ok.iter().filter(|p| p.0.truncated).count(),
        borrowed_truncated: ok.iter().filter(|p| p.1.truncated).count(),
        failures: rows.len() - ok.len(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const METRICS_HEADER: [&str; 9] =
    ["estimator", "spec_set", "mse", "bias_sq", "se_sq", "pct_mse_reduction", "mean", "successes", "failures"];

/// Write `metrics.csv`, `replications.csv` and, when there is anything to
/// plot, `figure.svg` into `dir`. Returns the paths written.
pub fn emit_report(output: &SimOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(METRICS_HEADER)?;
    for m in &output.metrics {
        w.write_record([
            m.estimator.label().to_string(),
            m.spec_set.to_string(),
            m.mse.to_string(),
            m.bias_sq.to_string(),
            m.se_sq.to_string(),
            fmt_opt(m.pct_mse_reduction),
            m.mean.to_string(),
            m.successes.to_string(),
            m.failures.to_string(),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("replications.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["replication", "spec_set", "estimator", "estimate"])?;
    for (r, row) in output.estimates.iter().enumerate() {
        for (k, &(set, est)) in output.cells.iter().enumerate() {
            w.write_record([r.to_string(), set.to_string(), est.label().to_string(), fmt_opt(row[k])])?;
        }
    }
    w.flush()?;
    written.push(path);

    if !output.metrics.is_empty() {
        let path = dir.join("figure.svg");
        fs::write(&path, figure_svg(&output.metrics))?;
        written.push(path);
    }
    Ok(written)
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 4] = ["#1b6ca8", "#c0392b", "#27ae60", "#8e44ad"];

/// Four line panels in a 2×2 grid. Reading clockwise from the top left:
/// MSE, SE², % MSE reduction, bias².
pub fn figure_svg(metrics: &[CellMetrics]) -> String {
    type Getter = fn(&CellMetrics) -> Option<f64>;
    let panels: [(&str, usize, usize, Getter); 4] = [
        ("MSE", 0, 0, |m| Some(m.mse)),
        ("SE²", 1, 0, |m| Some(m.se_sq)),
        ("% MSE Reduction", 1, 1, |m| m.pct_mse_reduction),
        ("Bias²", 0, 1, |m| Some(m.bias_sq)),
    ];
    let mut sets: Vec<u8> = metrics.iter().map(|m| m.spec_set).collect();
    sets.sort();
    sets.dedup();
    let mut ests: Vec<SimEstimator> = metrics.iter().map(|m| m.estimator).collect();
    ests.sort();
    ests.dedup();

    let width = 2.0 * (PANEL_W + MARGIN) + MARGIN;
    let height = 2.0 * (PANEL_H + MARGIN) + MARGIN + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (title, col, row, get) in panels {
        let x0 = MARGIN + col as f64 * (PANEL_W + MARGIN);
        let y0 = MARGIN + row as f64 * (PANEL_H + MARGIN);
        let vals: Vec<f64> = metrics.iter().filter_map(get).filter(|v| v.is_finite()).collect();
        let (mut lo, mut hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if title != "% MSE Reduction" {
            lo = lo.min(0.0);
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let px = |k: usize| x0 + PANEL_W * (k as f64 + 0.5) / sets.len() as f64;
        let py = |v: f64| y0 + PANEL_H * (1.0 - (v - lo) / (hi - lo));
        let _ = writeln!(s, r#"<g class="panel" data-title="{title}">"#);
        let _ = writeln!(
            s,
            r##"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{title}</text>"#, x0 + PANEL_W / 2.0, y0 - 10.0);
        for t in 0..=4 {
            let v = lo + (hi - lo) * t as f64 / 4.0;
            let y = py(v);
            let _ = writeln!(s, r##"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="#444"/>"##, x0 - 4.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, tick_label(v));
        }
        for (k, set) in sets.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">set {set}</text>"#,
                px(k),
                y0 + PANEL_H + 16.0
            );
        }
        for (e, est) in ests.iter().enumerate() {
            let pts: Vec<String> = sets
                .iter()
                .enumerate()
                .filter_map(|(k, set)| {
                    let m = metrics.iter().find(|m| m.estimator == *est && m.spec_set == *set)?;
                    get(m).filter(|v| v.is_finite()).map(|v| format!("{:.2},{:.2}", px(k), py(v)))
                })
                .collect();
            if pts.is_empty() {
                continue;
            }
            let color = COLORS[e % COLORS.len()];
            let _ = writeln!(
                s,
                r#"<polyline data-estimator="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                est.label(),
                pts.join(" ")
            );
            for p in &pts {
                let (cx, cy) = p.split_once(',').expect("formatted above");
                let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
            }
        }
        let _ = writeln!(s, "</g>");
    }
    let ly = height - 20.0;
    for (e, est) in ests.iter().enumerate() {
        let lx = MARGIN + e as f64 * 170.0;
        let color = COLORS[e % COLORS.len()];
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 24.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, est.display());
    }
    s.push_str("</svg>\n");
    s
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_formula_reproduces_size_table() {
        let ids: Vec<i64> = (1..=1000).map(|i| cluster_of(i, 1000, 100)).collect();
        let table = cluster_size_table(&ClusterIndex::new(&ids).unwrap());
        let expected: BTreeMap<usize, usize> =
            [(8, 13), (9, 41), (10, 21), (11, 10), (12, 6), (13, 3), (14, 3), (16, 2), (22, 1)].into_iter().collect();
        assert_eq!(table, expected);
    }

    #[test]
    fn tiny_population_has_no_empty_cluster() {
        let ids: Vec<i64> = (1..=60).map(|i| cluster_of(i, 60, 12)).collect();
        assert_eq!(ClusterIndex::new(&ids).unwrap().n_clusters(), 12);
    }

    #[test]
    fn population_obeys_sharp_null() {
        let (pop, _) = build_population(&SimConfig::tiny()).unwrap();
        assert_eq!(pop.outcomes.y0(), pop.outcomes.y1());
        assert_eq!(pop.outcomes.ate(), 0.0);
    }

    #[test]
    fn covariate_sets_nest() {
        let (pop, _) = build_population(&SimConfig::tiny()).unwrap();
        let (c4, names) = pop.covariates(4).unwrap();
        assert_eq!(names, ["x", "x_bar", "n_c", "n_c_sq"]);
        for set in 1..=3u8 {
            let (c, _) = pop.covariates(set).unwrap();
            assert_eq!(c, c4.columns(0, set as usize).into_owned());
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SimConfig { spec_sets: vec![5], ..SimConfig::tiny() },
            SimConfig { spec_sets: vec![1, 1], ..SimConfig::tiny() },
            SimConfig { replications: 0, ..SimConfig::tiny() },
            SimConfig { m1: 12, ..SimConfig::tiny() },
        ] {
            assert!(run_simulation(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn mse_decomposes() {
        let cfg = SimConfig { replications: 40, ..SimConfig::tiny() };
        let out = run_simulation(&cfg).unwrap();
        assert_eq!(out.failures, 0);
        assert_eq!(out.metrics.len(), 16);
        for m in &out.metrics {
            assert!((m.mse - m.bias_sq - m.se_sq).abs() <= 1e-10 * m.mse.max(1.0), "{m:?}");
        }
    }

    #[test]
    fn svg_has_four_panels() {
        let cfg = SimConfig { replications: 10, spec_sets: vec![1, 2], ..SimConfig::tiny() };
        let svg = figure_svg(&run_simulation(&cfg).unwrap().metrics);
        assert_eq!(svg.matches(r#"class="panel""#).count(), 4);
        for t in ["MSE", "SE²", "% MSE Reduction", "Bias²"] {
            assert!(svg.contains(&format!(r#"data-title="{t}""#)));
        }
    }
}
