//! Run-directory layout and the manifest that records a run's identity.
//!
//! A run directory is content-addressed by its effective config (see
//! [`crate::config::FileConfig::run_id`]) and holds everything downstream
//! commands need:
//!
//! ```text
//! runs/<run_id>/
//!   manifest.json              identity, status, artifact paths
//!   config.toml                fully explicit effective config
//!   suite.jsonl                the generated task suite
//!   metrics.jsonl              one probe record per line
//!   checkpoints/               periodic + final trainer checkpoints
//!   analysis/                  eval/calibration/depth/profile outputs
//! ```
//!
//! The manifest is written with status `running` before training starts and
//! finalized to `complete` afterwards, so interrupted runs are detectable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use aec_core::evalkit::write_text_atomic;
use aec_core::taskenv::Split;

use crate::config::FileConfig;
use crate::errors::CliError;

pub const MANIFEST_FORMAT: &str = "aec-run-manifest-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
}

/// Artifact locations, relative to the run directory root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPaths {
    pub config: String,
    pub suite: String,
    pub metrics: String,
    pub checkpoints: String,
    pub final_checkpoint: String,
    pub analysis: String,
}

impl Default for ManifestPaths {
    fn default() -> Self {
        ManifestPaths {
            config: "config.toml".into(),
            suite: "suite.jsonl".into(),
            metrics: "metrics.jsonl".into(),
            checkpoints: "checkpoints".into(),
            final_checkpoint: "checkpoints/checkpoint_final.json".into(),
            analysis: "analysis".into(),
        }
    }
}

/// Identity card of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub run_id: String,
    pub status: RunStatus,
    pub seed: u64,
    /// SHA-256 of the canonical effective config.
    pub config_sha256: String,
    /// Unix seconds; informational only, never feeds any computation.
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub config: FileConfig,
    pub paths: ManifestPaths,
}

impl RunManifest {
    pub fn new(config: FileConfig) -> Self {
        RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            run_id: config.run_id(),
            status: RunStatus::Running,
            seed: config.seed,
            config_sha256: config.sha256_hex(),
            started_unix: unix_now(),
            finished_unix: None,
            config,
            paths: ManifestPaths::default(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_text_atomic(path, &text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| CliError::missing_artifact(path, "run `aec train` first"))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{} is not a run manifest: {e}", path.display())))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(CliError::Usage(format!(
                "{} has format tag '{}', expected '{MANIFEST_FORMAT}'",
                path.display(),
                manifest.format
            )));
        }
        Ok(manifest)
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Resolved file locations of one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    /// Resolves the run directory that owns a checkpoint file: checkpoints
    /// live one level below the run root.
    pub fn from_checkpoint(checkpoint: &Path) -> Option<Self> {
        let dir = checkpoint.parent()?;
        if dir.file_name()? == "checkpoints" {
            Some(RunPaths::new(dir.parent()?))
        } else {
            Some(RunPaths::new(dir))
        }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn suite(&self) -> PathBuf {
        self.root.join("suite.jsonl")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("checkpoint_final.json")
    }

    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.analysis().join("eval.csv")
    }

    /// Machine-readable evaluation table for one split, consumed by the
    /// calibrate/depth/report subcommands.
    pub fn eval_json(&self, split: Split) -> PathBuf {
        self.analysis().join(format!("eval_{split}.json"))
    }

    pub fn calibration_csv(&self) -> PathBuf {
        self.analysis().join("calibration.csv")
    }

    pub fn calibration_report(&self) -> PathBuf {
        self.analysis().join("calibration_report.json")
    }

    pub fn depth_csv(&self) -> PathBuf {
        self.analysis().join("depth.csv")
    }

    pub fn profiles_csv(&self) -> PathBuf {
        self.analysis().join("profiles.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.analysis().join("report.txt")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DEFAULT_SEED;

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let config = FileConfig::default_aec(DEFAULT_SEED);
        let mut manifest = RunManifest::new(config);
        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();
        let loaded = RunManifest::load(&path).unwrap();
        assert_eq!(loaded, manifest);

        manifest.status = RunStatus::Complete;
        manifest.finished_unix = Some(manifest.started_unix + 1);
        manifest.save(&path).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap().status, RunStatus::Complete);
    }

    #[test]
    fn missing_manifest_names_the_file() {
        let err = RunManifest::load(Path::new("/nonexistent/manifest.json")).unwrap_err();
        assert!(err.to_string().contains("manifest.json"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn checkpoint_paths_resolve_to_the_run_root() {
        let paths =
            RunPaths::from_checkpoint(Path::new("runs/run-ab12/checkpoints/checkpoint_final.json"))
                .unwrap();
        assert_eq!(paths.root, Path::new("runs/run-ab12"));
        assert_eq!(paths.suite(), Path::new("runs/run-ab12/suite.jsonl"));
        assert_eq!(
            paths.eval_json(Split::Validation),
            Path::new("runs/run-ab12/analysis/eval_validation.json")
        );
    }
}
