//! The run manifest: enough to say what produced a directory of outputs and
//! to produce it again.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Cli, GlobalArgs};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub command: String,
    /// The argument vector as typed, program name first.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    /// Global settings after flags and `DBEXP_*` variables were applied.
    pub seed: Option<u64>,
    pub z: f64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    /// Command-specific inputs and resolved settings.
    pub config: Value,
    /// Files written into `out_dir`, manifest excluded.
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub exit_code: u8,
}

impl Manifest {
    pub fn new(cli: &Cli, argv: Vec<String>) -> anyhow::Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: dbexp_core::VERSION.into(),
            command: cli.command.name().into(),
            argv,
            cwd: std::env::current_dir()?,
            seed: cli.global.seed,
            z: cli.global.z,
            threads: cli.global.threads,
            out_dir: cli.global.out_dir.clone(),
            config: Value::Null,
            outputs: Vec::new(),
            warnings: Vec::new(),
            status: "running".into(),
            error: None,
            exit_code: 0,
        })
    }

    pub fn output(&mut self, path: &Path) {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if !self.outputs.contains(&name) {
            self.outputs.push(name);
        }
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn finish(&mut self, failure: Option<(String, u8)>) {
        match failure {
            None => self.status = "ok".into(),
            Some((msg, code)) => {
                self.status = "error".into();
                self.error = Some(msg);
                self.exit_code = code;
            }
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(FILE_NAME);
        let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}

/// Rebuild the recorded invocation. Outputs go to the caller's `--out-dir`,
/// while every other setting, including the seed, comes from the manifest.
pub fn replay_cli(path: &Path, caller: &GlobalArgs) -> anyhow::Result<(Cli, Vec<String>)> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let m: Manifest = serde_json::from_reader(file).with_context(|| format!("parsing {}", path.display()))?;
    let out_dir = std::env::current_dir()?.join(&caller.out_dir);
    std::env::set_current_dir(&m.cwd).with_context(|| format!("entering recorded directory {}", m.cwd.display()))?;
    let mut cli = Cli::try_parse_from(&m.argv)?;
    cli.global = GlobalArgs { seed: m.seed, z: m.z, threads: m.threads, out_dir };
    Ok((cli, m.argv))
}
