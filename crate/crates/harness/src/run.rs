//! Config resolution, run directories and manifests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind, Scale};
use crate::error::{HarnessError, Result};
use crate::experiments::{run_experiment, SeedStatus};

pub const RESULTS_FILE: &str = "results.csv";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunManifest {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    /// Resolved config, relative to the run directory.
    pub config_file: String,
    pub summary: String,
    pub provenance: String,
    /// Every file written, relative to the run directory.
    pub artifacts: Vec<String>,
    pub wall_time_secs: f64,
    pub seeds: Vec<SeedStatus>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fails unless `cfg` hashes to the recorded config hash.
    pub fn check(&self, cfg: &ExperimentConfig) -> Result<()> {
        let actual = cfg.hash();
        if actual != self.config_hash {
            return Err(HarnessError::HashMismatch {
                expected: self.config_hash.clone(),
                actual,
            });
        }
        Ok(())
    }
}

/// Command-line overrides applied on top of a preset or config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub scale: Option<Scale>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn resolve(experiment: ExperimentKind, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &o.config {
        Some(path) => ExperimentConfig::load(path, experiment, o.scale)?,
        None => ExperimentConfig::preset(
            experiment,
            o.scale.unwrap_or(Scale::Desk),
            ExperimentConfig::default_family(experiment),
        ),
    };
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.finalize()
}

/// `runs/<experiment>-<hash prefix>` unless the config names a directory.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}", cfg.experiment, &cfg.hash()[..12])))
}

fn write(dir: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))
}

/// Runs `cfg` and writes results, report, extra artifacts, the resolved
/// config and the manifest into its output directory.
pub fn execute(cfg: &ExperimentConfig) -> Result<(PathBuf, RunManifest)> {
    let dir = output_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let start = Instant::now();
    let out = run_experiment(cfg)?;
    let hash = cfg.hash();
    let mut artifacts = vec![RESULTS_FILE.to_string(), REPORT_FILE.to_string(), CONFIG_FILE.to_string()];
    write(&dir, RESULTS_FILE, out.results_csv.as_bytes())?;
    let mut report = serde_json::to_string_pretty(&out.report)?;
    report.push('\n');
    write(&dir, REPORT_FILE, report.as_bytes())?;
    write(&dir, CONFIG_FILE, cfg.to_toml()?.as_bytes())?;
    for (rel, bytes) in &out.files {
        write(&dir, rel, bytes)?;
        artifacts.push(rel.clone());
    }
    let manifest = RunManifest {
        experiment: cfg.experiment,
        provenance: format!(
            "lengen {}-g{} {} seeds {}..{}",
            env!("CARGO_PKG_VERSION"),
            &hash[..12],
            cfg.experiment,
            cfg.seed,
            cfg.seed + cfg.seeds as u64 - 1
        ),
        config_hash: hash,
        config_file: CONFIG_FILE.into(),
        summary: cfg.summary(),
        artifacts,
        wall_time_secs: start.elapsed().as_secs_f64(),
        seeds: out.seeds,
    };
    write(&dir, MANIFEST_FILE, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok((dir, manifest))
}
