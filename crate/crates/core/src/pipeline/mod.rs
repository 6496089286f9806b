//! Staged experiment harness: ingest → stl → pairs → sample → predictor →
//! search → baselines → report. Every stage is idempotent for a fixed
//! (config, seed): reruns reuse the on-disk caches.

pub mod config;
pub mod report;
mod stages;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
pub use config::RunConfig;
pub use report::{ComparisonReport, MethodRow};
pub use stages::pairwise_summary;

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

/// Provenance envelope around every JSON artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub data: T,
}

impl<T: Serialize + DeserializeOwned> Artifact<T> {
    pub fn new(cfg: &RunConfig, data: T) -> Self {
        Artifact {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            data,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Loads an artifact produced by an earlier stage of the same run.
    pub fn load(path: &Path, cfg: &RunConfig, stage: Stage, producer: Stage) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPrerequisiteStage {
                stage: stage.to_string(),
                artifact: path.display().to_string(),
                hint: producer.to_string(),
            });
        }
        let raw = std::fs::read_to_string(path)?;
        let art: Artifact<T> = serde_json::from_str(&raw)?;
        if art.config_hash != cfg.config_hash() || art.seed != cfg.seed {
            return Err(Error::MissingPrerequisiteStage {
                stage: stage.to_string(),
                artifact: format!(
                    "{} (stale: produced under a different config or seed)",
                    path.display()
                ),
                hint: producer.to_string(),
            });
        }
        Ok(art)
    }

    /// Loads if present and produced by this exact (config, seed).
    pub fn load_if_current(path: &Path, cfg: &RunConfig) -> Option<Self> {
        let raw = std::fs::read_to_string(path).ok()?;
        let art: Artifact<T> = serde_json::from_str(&raw).ok()?;
        (art.config_hash == cfg.config_hash() && art.seed == cfg.seed).then_some(art)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Stl,
    Pairs,
    Sample,
    Predictor,
    Search,
    Baselines,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Stl,
        Stage::Pairs,
        Stage::Sample,
        Stage::Predictor,
        Stage::Search,
        Stage::Baselines,
        Stage::Report,
    ];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Ingest => "ingest",
            Stage::Stl => "stl",
            Stage::Pairs => "pairs",
            Stage::Sample => "sample",
            Stage::Predictor => "predictor",
            Stage::Search => "search",
            Stage::Baselines => "baselines",
            Stage::Report => "report",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ingest" => Ok(Stage::Ingest),
            "stl" => Ok(Stage::Stl),
            "pairs" => Ok(Stage::Pairs),
            "sample" => Ok(Stage::Sample),
            "predictor" => Ok(Stage::Predictor),
            "search" => Ok(Stage::Search),
            "baselines" => Ok(Stage::Baselines),
            "report" => Ok(Stage::Report),
            other => Err(Error::ConfigInvalid(format!("unknown stage `{other}`"))),
        }
    }
}

/// Paths of all artifacts under the configured directory.
pub struct Paths {
    pub dir: PathBuf,
}

impl Paths {
    pub fn new(cfg: &RunConfig) -> Self {
        Paths {
            dir: cfg.artifacts_dir.clone(),
        }
    }

    pub fn taskset_raw(&self) -> PathBuf {
        self.dir.join("taskset_raw.json")
    }
    pub fn taskset_scaled(&self) -> PathBuf {
        self.dir.join("taskset_scaled.json")
    }
    pub fn norm_stats(&self) -> PathBuf {
        self.dir.join("norm_stats.json")
    }
    pub fn true_partition(&self) -> PathBuf {
        self.dir.join("true_partition.json")
    }
    pub fn stl_results(&self) -> PathBuf {
        self.dir.join("stl_results.json")
    }
    pub fn pairs(&self) -> PathBuf {
        self.dir.join("pairs.json")
    }
    pub fn simple_mtl(&self) -> PathBuf {
        self.dir.join("simple_mtl.json")
    }
    pub fn pair_features_csv(&self) -> PathBuf {
        self.dir.join("pair_features.csv")
    }
    pub fn features_schema(&self) -> PathBuf {
        self.dir.join("features_schema.json")
    }
    pub fn mtl_cache_dir(&self) -> PathBuf {
        self.dir.join("mtl_cache")
    }
    pub fn sample(&self) -> PathBuf {
        self.dir.join("sample.json")
    }
    pub fn predictor(&self) -> PathBuf {
        self.dir.join("predictor.json")
    }
    pub fn predictor_log(&self) -> PathBuf {
        self.dir.join("predictor_log.csv")
    }
    pub fn trace(&self, repeat: usize) -> PathBuf {
        self.dir.join(format!("trace_{repeat}.jsonl"))
    }
    pub fn result(&self) -> PathBuf {
        self.dir.join("result.json")
    }
    pub fn search_runs(&self) -> PathBuf {
        self.dir.join("search_runs.json")
    }
    pub fn baselines(&self) -> PathBuf {
        self.dir.join("baselines.json")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.dir.join("report.csv")
    }
    pub fn report_md(&self) -> PathBuf {
        self.dir.join("report.md")
    }
    pub fn run_meta(&self) -> PathBuf {
        self.dir.join("run_meta.json")
    }
}

/// Runs one stage.
pub fn run_stage(stage: Stage, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.artifacts_dir)?;
    let started = std::time::Instant::now();
    match stage {
        Stage::Ingest => stages::ingest(cfg)?,
        Stage::Stl => stages::stl(cfg)?,
        Stage::Pairs => stages::pairs(cfg)?,
        Stage::Sample => stages::sample(cfg)?,
        Stage::Predictor => stages::predictor(cfg)?,
        Stage::Search => stages::search(cfg)?,
        Stage::Baselines => stages::baselines(cfg)?,
        Stage::Report => stages::report(cfg)?,
    }
    stages::record_wall_time(cfg, stage, started.elapsed().as_secs_f64())?;
    Ok(())
}

/// Runs every stage in order.
pub fn run_all(cfg: &RunConfig) -> Result<()> {
    for stage in Stage::ALL {
        run_stage(stage, cfg)?;
    }
    Ok(())
}
