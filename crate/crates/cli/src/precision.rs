use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use dbexp_core::bounds::{precision_test, BoundMethod, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use dbexp_core::covariates::spec;
use dbexp_core::io::read_vector;
use nalgebra::DVector;
use serde_json::json;

use crate::inputs::{build_bound, DataArgs};
use crate::manifest::Manifest;
use crate::Cli;

#[derive(Debug, Clone, Args)]
pub struct PrecisionArgs {
    #[command(flatten)]
    pub input: DataArgs,

    /// Fixed coefficient vector: a JSON array or one number per line, in the
    /// column order of the chosen layout.
    #[arg(long)]
    pub coef: PathBuf,

    /// Bound used for the standard error: as, iterative or cluster.
    #[arg(long, default_value = "as")]
    pub bound: BoundMethod,
}

pub fn execute(cli: &Cli, args: &PrecisionArgs, record: &mut Manifest) -> anyhow::Result<()> {
    let loaded = args.input.load(record)?;
    let b = DVector::from_vec(read_vector(&args.coef).with_context(|| format!("reading {}", args.coef.display()))?);
    let layout = spec(&loaded.x, &loaded.names, args.input.spec)?;
    if let Some(obj) = record.config.as_object_mut() {
        obj.insert("coef".into(), json!(args.coef));
        obj.insert("coefficient".into(), json!(b.as_slice()));
        obj.insert("terms".into(), json!(layout.labels()));
        obj.insert("bound".into(), json!(args.bound.label()));
    }
    let bound = build_bound(args.bound, &loaded.design, DEFAULT_MAX_ITERS, DEFAULT_TOL, false)?;
    let d = loaded.design.design_matrix()?;
    let result = precision_test(&loaded.design, d, &loaded.sample, &layout, &b, &bound)?;
    if result.degenerate {
        record.warn("degenerate test: zero coefficient or zero standard error");
    }

    let path = cli.global.out_dir.join("precision_test.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.serialize(&result)?;
    w.flush()?;
    record.output(&path);
    println!("statistic {}", result.statistic);
    println!("threshold {}", result.threshold);
    println!("standard_error {}", result.standard_error);
    println!("p_value {}", result.p_value);
    println!("note: {}", result.caveat);
    Ok(())
}
