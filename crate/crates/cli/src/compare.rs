use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use dbexp_core::bounds::{compare_bounds, BoundMatrix, BoundMethod, Certificate, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use dbexp_core::io::read_data_file;
use dbexp_core::DbError;
use serde_json::json;

use crate::inputs::{build_bound, write_csv, DesignArgs};
use crate::manifest::Manifest;
use crate::Cli;

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub design: DesignArgs,

    /// Number of units, when no data file supplies it.
    #[arg(long)]
    pub n: Option<usize>,

    /// Data CSV supplying the unit count and, for cluster designs, cluster ids.
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Bounds to compare: as, iterative, cluster.
    #[arg(long, value_delimiter = ',', default_value = "as,iterative")]
    pub methods: Vec<BoundMethod>,

    /// Iteration cap for the iterative bound.
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,

    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,

    /// Also write the iterative bound's eigenvalue trace.
    #[arg(long)]
    pub diagnostics: bool,
}

pub const TRACE_FILE: &str = "iterative_trace.csv";
const HEADER: [&str; 7] = ["bound_a", "bound_b", "psd_verdict", "sharpnull_verdict", "min_eig", "max_eig", "eig_sum"];

fn write_trace(dir: &Path, trace: &[f64], record: &mut Manifest) -> anyhow::Result<()> {
    let path = dir.join(TRACE_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["iteration", "min_eig"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    record.output(&path);
    Ok(())
}

fn certificate(b: &BoundMatrix) -> serde_json::Value {
    match &b.certificate {
        Certificate::DiagonalDominance => json!("diagonal_dominance"),
        Certificate::GramFactor => json!("gram_factor"),
        Certificate::Eigen { min_eig } => json!({ "eigen": { "min_eig": min_eig } }),
    }
}

pub fn execute(cli: &Cli, args: &CompareArgs, record: &mut Manifest) -> anyhow::Result<()> {
    if args.methods.is_empty() {
        return Err(DbError::Input("name at least one bound method".into()).into());
    }
    let data = args.data.as_ref().map(|p| read_data_file(p).with_context(|| format!("reading {}", p.display()))).transpose()?;
    let n = match (&data, args.n) {
        (Some(d), Some(n)) if d.n() != n => {
            return Err(DbError::Input(format!("--n {n} disagrees with {} rows of data", d.n())).into())
        }
        (Some(d), _) => d.n(),
        (None, Some(n)) => n,
        (None, None) => return Err(DbError::Input("give --n or --data".into()).into()),
    };
    let design = args.design.build(n, data.as_ref().and_then(|d| d.cluster_ids.as_deref()))?;
    record.config = json!({
        "design": args.design.describe(&design)?,
        "data": args.data,
        "methods": args.methods.iter().map(|m| m.label()).collect::<Vec<_>>(),
        "max_iters": args.max_iters,
        "tol": args.tol,
        "diagnostics": args.diagnostics,
    });

    let dir = &cli.global.out_dir;
    let mut bounds = Vec::new();
    let mut summary = Vec::new();
    for &m in &args.methods {
        let b = match build_bound(m, &design, args.max_iters, args.tol, false) {
            Ok(b) => b,
            Err(e) => {
                if let Some(DbError::NotConverged { trace, .. }) = e.downcast_ref::<DbError>() {
                    write_trace(dir, trace, record)?;
                }
                return Err(e);
            }
        };
        if m == BoundMethod::Iterative && args.diagnostics {
            write_trace(dir, &b.trace, record)?;
        }
        summary.push(json!({ "method": m.label(), "iterations": b.iterations, "certificate": certificate(&b) }));
        bounds.push(b);
    }
    if let Some(obj) = record.config.as_object_mut() {
        obj.insert("bounds".into(), json!(summary));
    }

    let pairs: Vec<(usize, usize)> = if bounds.len() == 1 {
        vec![(0, 0)]
    } else {
        (0..bounds.len()).flat_map(|i| (i + 1..bounds.len()).map(move |j| (i, j))).collect()
    };
    let mut rows = Vec::new();
    for (i, j) in pairs {
        let c = compare_bounds(&bounds[i], &bounds[j])?;
        rows.push(vec![
            c.bound_a.label().to_string(),
            c.bound_b.label().to_string(),
            c.psd_verdict.label().to_string(),
            c.sharp_null_verdict.label().to_string(),
            c.min_eig.to_string(),
            c.max_eig.to_string(),
            c.eig_sum.to_string(),
        ]);
    }
    write_csv(dir, "comparison.csv", &HEADER, &rows, record)
}
