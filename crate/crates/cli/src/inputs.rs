//! Loading data, designs and covariate layouts from command-line arguments.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use dbexp_core::bounds::{as_bound, cluster_bound, iterative_bound, BoundMatrix, BoundMethod};
use dbexp_core::cluster::ClusterIndex;
use dbexp_core::covariates::{zero_center, SpecKind};
use dbexp_core::design::Design;
use dbexp_core::estimators::Sample;
use dbexp_core::io::{design_to_json, read_data_file, read_design_json, DataSet, DesignDescriptor};
use dbexp_core::DbError;
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::manifest::Manifest;

/// Where the design comes from: a descriptor or a serialized design.
#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    /// `complete:n1=K`, `bernoulli:p=P`, `bernoulli:file=PATH`, `cluster:m1=K`
    /// (cluster ids from the data) or `custom:file=PATH`.
    #[arg(long, required_unless_present = "design_json", conflicts_with = "design_json")]
    pub design: Option<String>,

    /// A design saved as JSON.
    #[arg(long)]
    pub design_json: Option<PathBuf>,
}

impl DesignArgs {
    pub fn build(&self, n: usize, cluster_ids: Option<&[i64]>) -> anyhow::Result<Design> {
        let design = match (&self.design, &self.design_json) {
            (Some(text), _) => text.parse::<DesignDescriptor>()?.build(n, cluster_ids)?,
            (None, Some(path)) => {
                read_design_json(path).with_context(|| format!("reading design {}", path.display()))?
            }
            (None, None) => return Err(DbError::Input("a design is required".into()).into()),
        };
        if design.n() != n {
            return Err(DbError::Input(format!("the design describes {} units but the data has {n}", design.n())).into());
        }
        Ok(design)
    }

    pub fn describe(&self, design: &Design) -> anyhow::Result<Value> {
        Ok(json!({
            "descriptor": self.design,
            "design_json": self.design_json,
            "resolved": design_to_json(design)?,
        }))
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV with `outcome`, `treatment`, optional `cluster_id` and numeric covariates.
    #[arg(long)]
    pub data: PathBuf,

    #[command(flatten)]
    pub design: DesignArgs,

    /// Covariate layout: I (common slopes) or II (separate slopes).
    #[arg(long, default_value = "II")]
    pub spec: SpecKind,

    /// Covariate columns to use, in order (default: all).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,

    /// Use covariates as given instead of subtracting their means.
    #[arg(long)]
    pub no_center: bool,
}

pub struct Loaded {
    pub design: Design,
    pub sample: Sample,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

impl DataArgs {
    pub fn load(&self, record: &mut Manifest) -> anyhow::Result<Loaded> {
        let mut data: DataSet =
            read_data_file(&self.data).with_context(|| format!("reading {}", self.data.display()))?;
        if !self.covariates.is_empty() {
            data = data.select(&self.covariates)?;
        }
        let design = self.design.build(data.n(), data.cluster_ids.as_deref())?;
        if design.assignment_probability(&data.z).is_some_and(|p| p <= 1e-15) {
            record.warn("the observed assignment has probability zero under the stated design");
        }
        let x = if self.no_center { data.covariates.clone() } else { zero_center(&data.covariates) };
        record.config = json!({
            "data": self.data,
            "design": self.design.describe(&design)?,
            "spec": self.spec.label(),
            "covariates": data.covariate_names,
            "center": !self.no_center,
        });
        Ok(Loaded { sample: data.sample()?, design, x, names: data.covariate_names })
    }
}

/// Build one bound. For the cluster bound the design must carry clusters,
/// unless `singletons` allows treating every unit as its own cluster.
pub fn build_bound(
    method: BoundMethod,
    design: &Design,
    max_iters: usize,
    tol: f64,
    singletons: bool,
) -> anyhow::Result<BoundMatrix> {
    let d = design.design_matrix()?;
    Ok(match method {
        BoundMethod::As => as_bound(d)?,
        BoundMethod::Iterative => iterative_bound(d, max_iters, tol)?,
        BoundMethod::Cluster => match design.clusters() {
            Some(idx) => cluster_bound(d, idx)?,
            None if singletons => {
                let ids: Vec<i64> = (0..design.n() as i64).collect();
                cluster_bound(d, &ClusterIndex::new(&ids)?)?
            }
            None => return Err(DbError::Input("the cluster bound needs a cluster-randomized design".into()).into()),
        },
        BoundMethod::Custom => return Err(DbError::Input("custom bounds are not available from the command line".into()).into()),
    })
}

/// Write `rows` as CSV to `dir/name` and echo them to stdout.
pub fn write_csv(dir: &std::path::Path, name: &str, header: &[&str], rows: &[Vec<String>], record: &mut Manifest) -> anyhow::Result<()> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    record.output(&path);
    let mut out = csv::Writer::from_writer(std::io::stdout());
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}
