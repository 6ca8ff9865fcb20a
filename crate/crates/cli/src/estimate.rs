use clap::{Args, ValueEnum};
use dbexp_core::bounds::{
    bound_estimate_2r_borrowed, bound_estimate_greg, bound_estimate_ht, BoundMethod, Interval, DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
};
use dbexp_core::covariates::{spec, spec_cluster, SpecKind};
use dbexp_core::estimators::{
    coef_2r, coef_3ht, coef_ols, coef_ols_cluster_totals, coef_tyranny, coef_wls_pi, greg, ht_ate, CoefficientEstimate,
    WeightedSystem,
};
use serde_json::json;

use crate::inputs::{build_bound, write_csv, DataArgs};
use crate::manifest::Manifest;
use crate::Cli;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorName {
    Ht,
    Ols,
    Wls,
    Tyranny,
    #[value(name = "3ht")]
    ThreeHt,
    #[value(name = "2r")]
    TwoR,
    #[value(name = "ols-cluster", alias = "ols_cluster")]
    OlsCluster,
}

impl EstimatorName {
    fn label(self) -> &'static str {
        match self {
            EstimatorName::Ht => "ht",
            EstimatorName::Ols => "ols",
            EstimatorName::Wls => "wls",
            EstimatorName::Tyranny => "tyranny",
            EstimatorName::ThreeHt => "3ht",
            EstimatorName::TwoR => "2r",
            EstimatorName::OlsCluster => "ols-cluster",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundChoice {
    As,
    Iterative,
    Cluster,
    /// Add intervals for 2R! built from the bound-minimizing coefficient.
    Borrowed,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: DataArgs,

    #[arg(long, value_enum, value_delimiter = ',', default_value = "ht,ols,wls,2r")]
    pub estimators: Vec<EstimatorName>,

    /// The first of as, iterative or cluster sets the variance bound; adding
    /// `borrowed` appends borrowed-bound columns for 2R!.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "as")]
    pub bound: Vec<BoundChoice>,
}

const HEADER: [&str; 6] = ["estimator", "spec", "point", "variance_bound", "ci_low", "ci_high"];
const BORROWED: [&str; 3] = ["borrowed_variance_bound", "borrowed_ci_low", "borrowed_ci_high"];

pub fn execute(cli: &Cli, args: &EstimateArgs, record: &mut Manifest) -> anyhow::Result<()> {
    let loaded = args.input.load(record)?;
    let (design, sample, x, names) = (&loaded.design, &loaded.sample, &loaded.x, &loaded.names);
    let method = args
        .bound
        .iter()
        .find_map(|b| match b {
            BoundChoice::As => Some(BoundMethod::As),
            BoundChoice::Iterative => Some(BoundMethod::Iterative),
            BoundChoice::Cluster => Some(BoundMethod::Cluster),
            BoundChoice::Borrowed => None,
        })
        .unwrap_or(BoundMethod::As);
    let borrowed = args.bound.contains(&BoundChoice::Borrowed);
    if let Some(obj) = record.config.as_object_mut() {
        obj.insert("estimators".into(), json!(args.estimators.iter().map(|e| e.label()).collect::<Vec<_>>()));
        obj.insert("bound".into(), json!(method.label()));
        obj.insert("borrowed".into(), json!(borrowed));
    }

    let bound = build_bound(method, design, DEFAULT_MAX_ITERS, DEFAULT_TOL, false)?;
    let d = design.design_matrix()?;
    let n = design.n();
    let kind = args.input.spec;
    let unit_spec = spec(x, names, kind)?;
    let spec_i = spec(x, names, SpecKind::I)?;
    let z = cli.global.z;

    let mut header: Vec<&str> = HEADER.to_vec();
    if borrowed {
        header.extend(BORROWED);
    }
    let mut rows = Vec::new();
    let mut coefs = Vec::new();
    for &est in &args.estimators {
        let (spec_label, point, var, coef_labels, coef): (&str, f64, f64, Vec<String>, Option<CoefficientEstimate>) =
            match est {
                EstimatorName::Ht => ("none", ht_ate(sample, design, n)?, bound_estimate_ht(&bound, design, sample, n)?, vec![], None),
                EstimatorName::OlsCluster => {
                    let (cdesign, idx) = design.cluster_level()?;
                    let cspec = spec_cluster(x, names, &idx, kind)?;
                    let (coef, sc) = coef_ols_cluster_totals(&cspec, sample)?;
                    let cbound = build_bound(method, &cdesign, DEFAULT_MAX_ITERS, DEFAULT_TOL, true)?;
                    let point = greg(&sc, &cdesign, &cspec, &coef)?.point;
                    let var = bound_estimate_greg(&cbound, &cdesign, &sc, &cspec, &coef)?;
                    (kind.label(), point, var, cspec.labels().to_vec(), Some(coef))
                }
                _ => {
                    let s = if est == EstimatorName::Tyranny { &spec_i } else { &unit_spec };
                    let coef = match est {
                        EstimatorName::Ols => coef_ols(s, sample)?,
                        EstimatorName::Wls => coef_wls_pi(s, sample, design)?,
                        EstimatorName::Tyranny => coef_tyranny(s, sample, design)?,
                        EstimatorName::ThreeHt => coef_3ht(&WeightedSystem::new(s, d)?, s, sample, design)?,
                        EstimatorName::TwoR => coef_2r(&WeightedSystem::new(s, d)?, s, sample, design)?,
                        EstimatorName::Ht | EstimatorName::OlsCluster => unreachable!("handled above"),
                    };
                    if coef.rank_deficient {
                        record.warn(format!(
                            "{}: normal matrix has rank {} of {}; the minimum-norm solution is used",
                            est.label(),
                            coef.rank,
                            s.ncols()
                        ));
                    }
                    let point = greg(sample, design, s, &coef)?.point;
                    let var = bound_estimate_greg(&bound, design, sample, s, &coef)?;
                    (s.kind().label(), point, var, s.labels().to_vec(), Some(coef))
                }
            };
        let iv = Interval::new(point, var, z);
        if iv.truncated {
            record.warn(format!("{}: negative variance estimate {var} floored at zero", est.label()));
        }
        let mut row = vec![est.label().to_string(), spec_label.to_string(), fmt(point), fmt(var), fmt(iv.low), fmt(iv.high)];
        if borrowed {
            if est == EstimatorName::TwoR {
                let (bv, _) = bound_estimate_2r_borrowed(&bound, design, sample, &unit_spec)?;
                let biv = Interval::new(point, bv, z);
                row.extend([fmt(bv), fmt(biv.low), fmt(biv.high)]);
            } else {
                row.extend([String::new(), String::new(), String::new()]);
            }
        }
        rows.push(row);
        if let Some(c) = coef {
            for (label, value) in coef_labels.iter().zip(c.b.iter()) {
                coefs.push(vec![est.label().to_string(), label.clone(), fmt(*value)]);
            }
        }
    }

    let dir = &cli.global.out_dir;
    write_csv(dir, "report.csv", &header, &rows, record)?;
    let path = dir.join("coefficients.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["estimator", "term", "value"])?;
    for r in &coefs {
        w.write_record(r)?;
    }
    w.flush()?;
    record.output(&path);
    Ok(())
}

pub fn fmt(v: f64) -> String {
    format!("{v}")
}
