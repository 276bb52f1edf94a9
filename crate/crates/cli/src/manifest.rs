use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use volcount_core::regnet::{save_model, Model, ModelSidecar};

use crate::spec::ExperimentSpec;
use crate::table::Table;

pub const TOOLKIT_VERSION: &str = concat!("volcount ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

/// What was run, on which data, and what it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub spec_sha256: String,
    pub toolkit_version: String,
    pub threads: usize,
    pub seeds: BTreeMap<String, u64>,
    /// Scan ids per named split.
    pub splits: BTreeMap<String, Vec<String>>,
    pub wall_clock_seconds: f64,
    /// SHA-256 of every output file, keyed by path relative to the run directory.
    pub outputs: BTreeMap<String, String>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub spec: ExperimentSpec,
}

/// The output directory of one run. The manifest is written on creation and
/// rewritten whenever a split or an output is recorded.
pub struct RunContext {
    dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunContext {
    pub fn begin(dir: &Path, command: &str, spec: &ExperimentSpec, threads: usize) -> Result<Self> {
        for sub in ["models", "maps"] {
            std::fs::create_dir_all(dir.join(sub)).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut seeds = BTreeMap::new();
        seeds.insert("master".to_string(), spec.seed);
        let ctx = Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                spec_sha256: spec.sha256(),
                toolkit_version: TOOLKIT_VERSION.to_string(),
                threads,
                seeds,
                splits: BTreeMap::new(),
                wall_clock_seconds: 0.0,
                outputs: BTreeMap::new(),
                status: RunStatus::Running,
                error: None,
                spec: spec.clone(),
            },
            started: Instant::now(),
        };
        ctx.flush()?;
        Ok(ctx)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn flush(&self) -> Result<()> {
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn record_seed(&mut self, name: &str, seed: u64) -> Result<()> {
        self.manifest.seeds.insert(name.to_string(), seed);
        self.flush()
    }

    pub fn record_split(&mut self, name: &str, ids: Vec<String>) -> Result<()> {
        self.manifest.splits.insert(name.to_string(), ids);
        self.flush()
    }

    /// Records the digest of an output already written at `rel`.
    pub fn record_output(&mut self, rel: &str) -> Result<()> {
        let digest = sha256_file(&self.dir.join(rel))?;
        self.manifest.outputs.insert(rel.to_string(), digest);
        self.flush()
    }

    pub fn write_csv(&mut self, rel: &str, table: &Table) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        std::fs::write(&path, table.to_bytes()).with_context(|| format!("writing {}", path.display()))?;
        self.record_output(rel)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        self.record_output(rel)?;
        Ok(path)
    }

    /// Saves `models/<name>.{tnsr,json}` and returns the stem.
    pub fn save_model(&mut self, name: &str, model: &Model, sidecar: &ModelSidecar) -> Result<PathBuf> {
        let stem = self.dir.join("models").join(name);
        save_model(&stem, model, sidecar)?;
        self.record_output(&format!("models/{name}.tnsr"))?;
        self.record_output(&format!("models/{name}.json"))?;
        Ok(stem)
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.status = RunStatus::Complete;
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        self.flush()?;
        Ok(self.manifest)
    }

    /// Marks the run failed; outputs recorded so far stay listed.
    pub fn fail(mut self, err: &anyhow::Error) -> Result<RunManifest> {
        self.manifest.status = RunStatus::Failed;
        self.manifest.error = Some(format!("{err:#}"));
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        self.flush()?;
        Ok(self.manifest)
    }
}
