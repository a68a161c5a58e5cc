use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dashgauss::schedule::ScheduleOptions;
use dashgauss::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::TargetFactor;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything `analyze` needs besides its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub total_iters: usize,
    pub p_init: usize,
    pub significance_ratio: f64,
    pub levels: usize,
    pub gamma: f64,
    pub eta: f64,
    pub schedule: ScheduleOptions,
    pub target_factor: TargetFactor,
}

/// The command and its fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "lowercase")]
pub enum Invocation {
    Analyze(AnalyzeConfig),
    Fit(TrainConfig),
    /// Shared configuration; the mode is set per arm.
    Compare(TrainConfig),
}

/// Written next to every output; `dashgauss replay` re-executes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    #[serde(flatten)]
    pub invocation: Invocation,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    /// Worker threads of the recording run (informational; results do not depend on it).
    pub threads: usize,
}

impl RunManifest {
    pub fn new(invocation: Invocation, seed: Option<u64>, inputs: &[PathBuf], output_dir: &Path) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                p.canonicalize()
                    .with_context(|| format!("cannot resolve input {}", p.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        let output_dir = output_dir
            .canonicalize()
            .with_context(|| format!("cannot resolve output directory {}", output_dir.display()))?;
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            invocation,
            seed,
            inputs,
            output_dir,
            threads: rayon::current_num_threads(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))
    }
}
