//! File formats: the unit-level data CSV, design descriptors and design JSON.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::design::{Design, Provenance};
use crate::error::{DbError, Result};
use crate::estimators::Sample;

pub const OUTCOME_COLUMN: &str = "outcome";
pub const TREATMENT_COLUMN: &str = "treatment";
pub const CLUSTER_COLUMN: &str = "cluster_id";

/// One row per unit, as read from disk.
#[derive(Debug, Clone)]
pub struct DataSet {
    pub y: Vec<f64>,
    pub z: Vec<bool>,
    pub cluster_ids: Option<Vec<i64>>,
    /// n×k, in file column order.
    pub covariates: DMatrix<f64>,
    pub covariate_names: Vec<String>,
}

impl DataSet {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn sample(&self) -> Result<Sample> {
        Sample::new(self.z.clone(), self.y.clone())
    }

    /// Keep only the named covariates, in the order given.
    pub fn select(&self, names: &[String]) -> Result<DataSet> {
        let mut cols = Vec::with_capacity(names.len());
        for name in names {
            let j = self
                .covariate_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| DbError::Input(format!("no covariate column named '{name}'")))?;
            cols.push(j);
        }
        let covariates = DMatrix::from_fn(self.n(), cols.len(), |i, k| self.covariates[(i, cols[k])]);
        Ok(DataSet { covariates, covariate_names: names.to_vec(), ..self.clone() })
    }
}

fn cell_error(row: usize, column: &str, msg: impl std::fmt::Display) -> DbError {
    // Row numbers count the header as line 1, matching what an editor shows.
    DbError::Input(format!("line {}, column '{column}': {msg}", row + 2))
}

/// Parse a data CSV. The header must name `outcome` and `treatment`;
/// `cluster_id` is optional and every other column is a numeric covariate.
pub fn read_data<R: Read>(reader: R) -> Result<DataSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let oc = find(OUTCOME_COLUMN).ok_or_else(|| DbError::Input(format!("header has no '{OUTCOME_COLUMN}' column")))?;
    let tc = find(TREATMENT_COLUMN).ok_or_else(|| DbError::Input(format!("header has no '{TREATMENT_COLUMN}' column")))?;
    let cc = find(CLUSTER_COLUMN);
    let cov_idx: Vec<usize> = (0..headers.len()).filter(|&j| j != oc && j != tc && Some(j) != cc).collect();
    let covariate_names: Vec<String> = cov_idx.iter().map(|&j| headers[j].to_string()).collect();
    let mut seen = BTreeMap::new();
    for (j, h) in headers.iter().enumerate() {
        if let Some(prev) = seen.insert(h.to_string(), j) {
            return Err(DbError::Input(format!("columns {} and {} share the name '{h}'", prev + 1, j + 1)));
        }
    }

    let (mut y, mut z, mut ids, mut cov) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| DbError::Input(format!("line {}: {e}", row + 2)))?;
        let get = |j: usize| rec.get(j).unwrap_or("");
        let num = |j: usize| -> Result<f64> {
            let s = get(j);
            if s.is_empty() {
                return Err(cell_error(row, &headers[j], "missing value"));
            }
            let v: f64 = s.parse().map_err(|_| cell_error(row, &headers[j], format!("'{s}' is not a number")))?;
            if !v.is_finite() {
                return Err(cell_error(row, &headers[j], format!("'{s}' is not finite")));
            }
            Ok(v)
        };
        y.push(num(oc)?);
        z.push(match get(tc) {
            "1" => true,
            "0" => false,
            "" => return Err(cell_error(row, TREATMENT_COLUMN, "missing value")),
            other => return Err(cell_error(row, TREATMENT_COLUMN, format!("'{other}' is not 0 or 1"))),
        });
        if let Some(c) = cc {
            let s = get(c);
            ids.push(s.parse::<i64>().map_err(|_| cell_error(row, CLUSTER_COLUMN, format!("'{s}' is not an integer id")))?);
        }
        for &j in &cov_idx {
            cov.push(num(j)?);
        }
    }
    if y.is_empty() {
        return Err(DbError::Input("data file has a header but no rows".into()));
    }
    let n = y.len();
    let k = cov_idx.len();
    Ok(DataSet {
        y,
        z,
        cluster_ids: cc.map(|_| ids),
        covariates: DMatrix::from_row_slice(n, k, &cov),
        covariate_names,
    })
}

pub fn read_data_file(path: &Path) -> Result<DataSet> {
    read_data(File::open(path)?)
}

/// A list of numbers stored as a JSON array or as one value per line.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_vector(&text)
}

pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return Ok(serde_json::from_str(trimmed)?);
    }
    trimmed
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|_| DbError::Input(format!("line {}: '{}' is not a number", i + 1, l.trim())))
        })
        .collect()
}

/// An explicit assignment distribution: `{"support": [{"z": [0,1,...], "prob": p}, ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportFile {
    pub support: Vec<SupportEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportEntry {
    pub z: Vec<u8>,
    pub prob: f64,
}

impl SupportFile {
    pub fn into_support(self) -> Result<Vec<(Vec<bool>, f64)>> {
        self.support
            .into_iter()
            .enumerate()
            .map(|(k, e)| {
                let z = e
                    .z
                    .iter()
                    .map(|v| match v {
                        0 => Ok(false),
                        1 => Ok(true),
                        _ => Err(DbError::Input(format!("support entry {} has a non-binary assignment", k + 1))),
                    })
                    .collect::<Result<Vec<bool>>>()?;
                Ok((z, e.prob))
            })
            .collect()
    }
}

pub fn read_support(path: &Path) -> Result<Vec<(Vec<bool>, f64)>> {
    let f: SupportFile = serde_json::from_reader(File::open(path)?)?;
    f.into_support()
}

/// A design written as text: `complete:n1=K`, `bernoulli:file=PATH`,
/// `bernoulli:p=P`, `cluster:m1=K` or `custom:file=PATH`.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignDescriptor {
    Complete { n1: usize },
    Bernoulli { file: Option<String>, p: Option<f64> },
    Cluster { m1: usize },
    Custom { file: String },
}

impl std::str::FromStr for DesignDescriptor {
    type Err = DbError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params = BTreeMap::new();
        for kv in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| DbError::Input(format!("design parameter '{kv}' is not key=value")))?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
        let int = |key: &str| -> Result<usize> {
            params
                .get(key)
                .ok_or_else(|| DbError::Input(format!("design '{kind}' needs {key}=...")))?
                .parse()
                .map_err(|_| DbError::Input(format!("{key} must be a nonnegative integer")))
        };
        match kind {
            "complete" => Ok(Self::Complete { n1: int("n1")? }),
            "cluster" => Ok(Self::Cluster { m1: int("m1")? }),
            "bernoulli" => {
                let p = params
                    .get("p")
                    .map(|v| v.parse::<f64>().map_err(|_| DbError::Input("p must be a number".into())))
                    .transpose()?;
                let file = params.get("file").cloned();
                if p.is_none() == file.is_none() {
                    return Err(DbError::Input("bernoulli needs exactly one of file=... or p=...".into()));
                }
                Ok(Self::Bernoulli { file, p })
            }
            "custom" => Ok(Self::Custom {
                file: params.get("file").cloned().ok_or_else(|| DbError::Input("custom needs file=...".into()))?,
            }),
            other => Err(DbError::Input(format!("unknown design kind '{other}'"))),
        }
    }
}

impl DesignDescriptor {
    /// Build the design for `n` units; cluster designs take ids from the data.
    pub fn build(&self, n: usize, cluster_ids: Option<&[i64]>) -> Result<Design> {
        match self {
            Self::Complete { n1 } => Design::complete(n, *n1),
            Self::Cluster { m1 } => {
                let ids = cluster_ids
                    .ok_or_else(|| DbError::Input(format!("cluster design needs a '{CLUSTER_COLUMN}' column")))?;
                Design::cluster(ids, *m1)
            }
            Self::Bernoulli { file, p } => {
                let pi1 = match (file, p) {
                    (Some(f), _) => read_vector(Path::new(f))?,
                    (None, Some(p)) => vec![*p; n],
                    (None, None) => unreachable!("validated in from_str"),
                };
                if pi1.len() != n {
                    return Err(DbError::Input(format!("{} treatment probabilities for {n} units", pi1.len())));
                }
                Design::bernoulli(&pi1)
            }
            Self::Custom { file } => {
                let path = Path::new(file);
                let text = std::fs::read_to_string(path)?;
                let value: Value = serde_json::from_str(&text)?;
                let design = if value.get("support").is_some() {
                    Design::enumerated(serde_json::from_value::<SupportFile>(value)?.into_support()?)?
                } else {
                    design_from_json(&serde_json::from_value(value)?)?
                };
                if design.n() != n {
                    return Err(DbError::Input(format!("design file describes {} units but the data has {n}", design.n())));
                }
                Ok(design)
            }
        }
    }
}

/// Serialized design: `{n, kind, params, p?}`. `p` is the dense row-major
/// joint matrix, present when it cannot be rebuilt from `params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignJson {
    pub n: usize,
    pub kind: String,
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
}

pub fn design_to_json(design: &Design) -> Result<DesignJson> {
    let mut params = serde_json::to_value(design.provenance())?;
    if let Value::Object(map) = &mut params {
        map.remove("kind");
    }
    let p = match design.provenance() {
        Provenance::Enumerated { .. } | Provenance::MonteCarlo { .. } => {
            let m = design.joint();
            Some((0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])).collect())
        }
        _ => None,
    };
    Ok(DesignJson { n: design.n(), kind: design.provenance().name().into(), params, p })
}

pub fn design_from_json(j: &DesignJson) -> Result<Design> {
    let mut tagged = j.params.clone();
    match &mut tagged {
        Value::Object(map) => {
            map.insert("kind".into(), json!(j.kind));
        }
        Value::Null => tagged = json!({ "kind": j.kind }),
        _ => return Err(DbError::Input("design params must be an object".into())),
    }
    let provenance: Provenance = serde_json::from_value(tagged)?;
    let design = match (&provenance, &j.p) {
        (Provenance::Complete { n1 }, None) => Design::complete(j.n, *n1)?,
        (Provenance::Bernoulli { pi1 }, None) => Design::bernoulli(pi1)?,
        (Provenance::Cluster { cluster_ids, m1 }, None) => Design::cluster(cluster_ids, *m1)?,
        (Provenance::Enumerated { support }, None) => Design::enumerated(support.clone())?,
        (Provenance::MonteCarlo { .. }, None) => {
            return Err(DbError::Input("a Monte-Carlo design must carry its joint matrix p".into()))
        }
        (_, Some(p)) => {
            let dim = 2 * j.n;
            if p.len() != dim * dim {
                return Err(DbError::Dimension(format!("p has {} entries; expected {}", p.len(), dim * dim)));
            }
            Design::from_joint(DMatrix::from_row_slice(dim, dim, p), provenance)?
        }
    };
    if design.n() != j.n {
        return Err(DbError::Input(format!("design params describe {} units but n = {}", design.n(), j.n)));
    }
    Ok(design)
}

pub fn read_design_json(path: &Path) -> Result<Design> {
    design_from_json(&serde_json::from_reader(File::open(path)?)?)
}

pub fn write_design_json(design: &Design, path: &Path) -> Result<()> {
    serde_json::to_writer_pretty(File::create(path)?, &design_to_json(design)?)?;
    Ok(())
}
