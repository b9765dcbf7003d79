//! JSON configuration schemas: applications, setups, platform parameters,
//! and experiment descriptions. Field names match the domain types exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{AppSpec, PlatformConfig};
use crate::experiment::Campaign;
use crate::optimizer::{Cadence, Objective};
use crate::workloads::{builtin, Protocol, Workload};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse `{path}`: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid application: {0}")]
    App(String),
    #[error("invalid platform configuration: {0}")]
    Platform(String),
    #[error("unknown builtin app `{0}` (expected tree, iot, or web)")]
    UnknownBuiltin(String),
}

/// Application file schema: the tasks and roots of [`AppSpec`] plus an
/// optional list of scheduled operations (defaults to the roots).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppFile {
    #[serde(flatten)]
    pub app: AppSpec,
    #[serde(default)]
    pub ops: Option<Vec<String>>,
}

/// One experiment: which app, which protocol, and how the optimizer runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Builtin name (`tree`, `iot`, `web`) or a path to an application file.
    pub app: String,
    pub protocol: Protocol,
    /// Path to a platform configuration file; defaults apply when absent.
    #[serde(default)]
    pub platform: Option<PathBuf>,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub cadence: Cadence,
    /// Mandatory: simulations take no entropy from the wall clock.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Campaign artifact of a prior OPT run; required for cold/scale.
    #[serde(default)]
    pub opt_campaign: Option<PathBuf>,
    /// Also write records.jsonl and billing.csv.
    #[serde(default)]
    pub emit_records: bool,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    read_json(path)
}

pub fn load_campaign(path: &Path) -> Result<Campaign, ConfigError> {
    read_json(path)
}

/// Resolves an app reference: builtin name or application file path.
pub fn load_workload(reference: &str) -> Result<Workload, ConfigError> {
    if let Some(w) = builtin(reference) {
        return Ok(w);
    }
    let path = Path::new(reference);
    if !path.exists() {
        return Err(ConfigError::UnknownBuiltin(reference.to_string()));
    }
    let file: AppFile = read_json(path)?;
    file.app
        .validate()
        .map_err(|e| ConfigError::App(e.to_string()))?;
    let ops = match file.ops {
        Some(ops) if !ops.is_empty() => {
            for op in &ops {
                if !file.app.roots.contains(op) {
                    return Err(ConfigError::App(format!(
                        "operation `{op}` is not a root of the application"
                    )));
                }
            }
            ops
        }
        _ => file.app.roots.iter().cloned().collect(),
    };
    Ok(Workload { app: file.app, ops })
}

pub fn load_platform(path: Option<&Path>) -> Result<PlatformConfig, ConfigError> {
    let cfg: PlatformConfig = match path {
        Some(p) => read_json(p)?,
        None => PlatformConfig::default(),
    };
    cfg.validate()
        .map_err(|e| ConfigError::Platform(e.to_string()))?;
    Ok(cfg)
}
