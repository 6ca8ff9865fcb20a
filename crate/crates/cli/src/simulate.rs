use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use dbexp_core::simulation::{emit_report, run_coverage, run_simulation, NoiseChoice, SimConfig, SimEstimator};
use dbexp_core::Execution;
use serde_json::{json, Value};

use crate::manifest::Manifest;
use crate::Cli;

/// Flags win over the config file; the manifest keeps both.
#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON config; missing fields take their defaults.
    #[arg(long, conflicts_with = "defaults")]
    pub config: Option<PathBuf>,

    /// Run the full-scale default study.
    #[arg(long)]
    pub defaults: bool,

    /// Monte-Carlo draws of the assignment.
    #[arg(long)]
    pub replications: Option<usize>,

    #[arg(long)]
    pub n_units: Option<usize>,

    /// Clusters the population is split into.
    #[arg(long)]
    pub n_clusters: Option<usize>,

    /// Clusters assigned to treatment.
    #[arg(long)]
    pub m1: Option<usize>,

    /// Noise reading: calibrated, variance or sd.
    #[arg(long)]
    pub noise: Option<NoiseChoice>,

    /// Covariate sets, 1 to 4.
    #[arg(long, value_delimiter = ',')]
    pub spec_sets: Option<Vec<u8>>,

    /// Comma-separated: wls_ols, three_ht, two_r, ols_cluster_totals. An
    /// empty string runs none, which yields a header-only metrics file.
    #[arg(long, value_parser = parse_estimators)]
    pub estimators: Option<EstimatorList>,

    /// Run replications in a single thread.
    #[arg(long)]
    pub sequential: bool,

    /// Also measure interval coverage on this covariate set.
    #[arg(long)]
    pub coverage_set: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct EstimatorList(Vec<SimEstimator>);

fn parse_estimators(s: &str) -> Result<EstimatorList, dbexp_core::DbError> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(str::parse).collect::<Result<_, _>>().map(EstimatorList)
}

fn resolve(cli: &Cli, args: &SimulateArgs) -> anyhow::Result<(SimConfig, Value, BTreeMap<&'static str, Value>)> {
    let (mut cfg, file_value) = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let cfg: SimConfig = serde_json::from_value(value.clone()).with_context(|| format!("parsing {}", path.display()))?;
            (cfg, value)
        }
        None => (SimConfig::default(), Value::Null),
    };
    let mut overrides = BTreeMap::new();
    macro_rules! apply {
        ($flag:expr, $name:literal, $field:ident) => {
            if let Some(v) = $flag.clone() {
                overrides.insert($name, json!(v));
                cfg.$field = v;
            }
        };
    }
    apply!(cli.global.seed, "seed", seed);
    apply!(args.replications, "replications", replications);
    apply!(args.n_units, "n_units", n_units);
    apply!(args.n_clusters, "n_clusters", n_clusters);
    apply!(args.m1, "m1", m1);
    apply!(args.noise, "noise_interpretation", noise_interpretation);
    apply!(args.spec_sets, "spec_sets", spec_sets);
    apply!(args.estimators.as_ref().map(|l| l.0.clone()), "estimators", estimators);
    if args.sequential {
        overrides.insert("execution", json!(Execution::Sequential));
        cfg.execution = Execution::Sequential;
    }
    cfg.validate()?;
    Ok((cfg, file_value, overrides))
}

pub fn execute(cli: &Cli, args: &SimulateArgs, record: &mut Manifest) -> anyhow::Result<()> {
    let (cfg, file_value, overrides) = resolve(cli, args)?;
    record.seed = Some(cfg.seed);
    record.config = json!({
        "config_file": args.config,
        "config_file_contents": file_value,
        "defaults": args.defaults,
        "overrides": overrides,
        "resolved": cfg,
    });

    let out = run_simulation(&cfg)?;
    let dir = &cli.global.out_dir;
    for path in emit_report(&out, dir)? {
        record.output(&path);
    }
    if out.failures > 0 {
        record.warn(format!("{} estimates failed; first: {}", out.failures, out.failure_messages.first().cloned().unwrap_or_default()));
    }
    if let Some(obj) = record.config.as_object_mut() {
        obj.insert("calibration".into(), json!(out.calibration));
        obj.insert("noise_used".into(), json!(out.noise));
        obj.insert("population_r2".into(), json!(out.population_r2));
        obj.insert("true_ate".into(), json!(out.true_ate));
        obj.insert("cluster_sizes".into(), json!(out.cluster_sizes));
    }
    println!("population R^2 {:.4} (noise read as {})", out.population_r2, out.noise.label());
    for m in &out.metrics {
        let pct = m.pct_mse_reduction.map(|p| format!("{p:.1}%")).unwrap_or_else(|| "-".into());
        println!("set {} {:<20} mse {:.5} bias^2 {:.5} se^2 {:.5} reduction {pct}", m.spec_set, m.estimator.label(), m.mse, m.bias_sq, m.se_sq);
    }

    if let Some(set) = args.coverage_set {
        let cov = run_coverage(&cfg, set, cli.global.z)?;
        let path = dir.join("coverage.json");
        serde_json::to_writer_pretty(std::fs::File::create(&path)?, &cov)?;
        record.output(&path);
        println!(
            "coverage on set {set}: AS {:.2}% (mean width {:.4}), borrowed {:.2}% (mean width {:.4})",
            100.0 * cov.as_coverage,
            cov.as_mean_width,
            100.0 * cov.borrowed_coverage,
            cov.borrowed_mean_width
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_lists() {
        assert!(parse_estimators("").unwrap().0.is_empty());
        assert_eq!(parse_estimators(" two_r, wls_ols ").unwrap().0.len(), 2);
        assert!(parse_estimators("two_r,bogus").is_err());
    }
}
