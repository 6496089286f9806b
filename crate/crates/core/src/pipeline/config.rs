//! Run configuration: one JSON document drives every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CsvSchema, SplitSpec, TaskKind};
use crate::error::{Error, Result};
use crate::nn::{Activation, LossKind, OutputActivation, TrainConfig};
use crate::mtl::MtlArch;
use crate::search::cluster::{GainTransform, Linkage};
use crate::search::SearchConfig;
use crate::util::sha256_hex;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub splits: SplitFractions,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub predictor: PredictorSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default)]
    pub report: ReportConfig,
    pub artifacts_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub csv: Option<CsvSource>,
    #[serde(default)]
    pub synth: Option<SynthSource>,
    /// Force the task kind instead of inferring it from the targets.
    #[serde(default)]
    pub kind_override: Option<TaskKind>,
    /// Z-score features for training; `None` picks true for real-valued
    /// data and false for binary data (Hamming needs raw 0/1).
    #[serde(default)]
    pub normalize: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default = "default_id_col")]
    pub id_col: String,
    #[serde(default = "default_target_col")]
    pub target_col: String,
}

fn default_id_col() -> String {
    "task_id".into()
}

fn default_target_col() -> String {
    "target".into()
}

impl CsvSource {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            id_col: self.id_col.clone(),
            target_col: self.target_col.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSource {
    pub n_tasks: usize,
    pub n_clusters: usize,
    pub d: usize,
    pub samples_per_task: usize,
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train_frac: 0.7,
            val_frac: 0.15,
            test_frac: 0.15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub stl_hidden: Vec<usize>,
    pub mtl_pre: Vec<usize>,
    pub mtl_shared: Vec<usize>,
    pub mtl_post: Vec<usize>,
    pub hidden_activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` derives the batch size from the training-set size.
    pub batch_size: Option<usize>,
    /// Affinity recording period in the all-task model.
    pub z_every: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stl_hidden: vec![16],
            mtl_pre: Vec::new(),
            mtl_shared: vec![16],
            mtl_post: Vec::new(),
            hidden_activation: Activation::Tanh,
            learning_rate: 0.02,
            epochs: 30,
            batch_size: None,
            z_every: 10,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    /// Number of uniform partitions to draw; `None` scales with the task
    /// count as `max(50, ceil(1.5 n))`.
    #[serde(default)]
    pub partitions: Option<usize>,
}

impl SampleConfig {
    pub fn resolve(&self, n_tasks: usize) -> usize {
        self.partitions
            .unwrap_or_else(|| (1.5 * n_tasks as f64).ceil().max(50.0) as usize)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSection {
    pub hidden_widths: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default)]
    pub features: Option<Vec<String>>,
    pub warm_start: bool,
}

impl Default for PredictorSection {
    fn default() -> Self {
        PredictorSection {
            hidden_widths: vec![16, 12, 16, 12],
            learning_rate: 1.2e-3,
            epochs: 200,
            features: None,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub gamma_max: usize,
    pub gamma_retrain: usize,
    #[serde(default)]
    pub k: Option<f64>,
    pub pi_t_start: f64,
    pub pi_t_end: f64,
    #[serde(default)]
    pub budget_mtl: Option<usize>,
    pub start_rank: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        let c = SearchConfig::default();
        SearchSection {
            gamma_max: c.gamma_max,
            gamma_retrain: c.gamma_retrain,
            k: c.k,
            pi_t_start: c.pi_t_start,
            pi_t_end: c.pi_t_end,
            budget_mtl: c.budget_mtl,
            start_rank: c.start_rank,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub random_search: bool,
    pub hierarchical: bool,
    pub kmeans: bool,
    pub cluster_k_min: usize,
    pub cluster_k_max: usize,
    pub hierarchical_transform: GainTransform,
    pub linkage: Linkage,
    pub random_max_draws: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            random_search: true,
            hierarchical: true,
            kmeans: true,
            cluster_k_min: 2,
            cluster_k_max: 6,
            hierarchical_transform: GainTransform::Exponential,
            linkage: Linkage::Average,
            random_max_draws: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub repeats: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { repeats: 5 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&raw)
            .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.csv, &self.dataset.synth) {
            (Some(_), Some(_)) => {
                return Err(Error::ConfigInvalid(
                    "dataset: give either csv or synth, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::ConfigInvalid(
                    "dataset: either csv or synth is required".into(),
                ))
            }
            _ => {}
        }
        if let Some(csv) = &self.dataset.csv {
            if !csv.path.exists() {
                return Err(Error::ConfigInvalid(format!(
                    "dataset file {} does not exist",
                    csv.path.display()
                )));
            }
        }
        let s = &self.splits;
        SplitSpec::new(s.train_frac, s.val_frac, s.test_frac, 0)
            .map_err(|e| Error::ConfigInvalid(format!("splits: {e}")))?;
        if self.model.epochs == 0 {
            return Err(Error::ConfigInvalid("model.epochs must be >= 1".into()));
        }
        if self.model.mtl_shared.is_empty() {
            return Err(Error::ConfigInvalid("model.mtl_shared must be nonempty".into()));
        }
        if self.report.repeats == 0 {
            return Err(Error::ConfigInvalid("report.repeats must be >= 1".into()));
        }
        if self.baselines.cluster_k_min < 2 || self.baselines.cluster_k_max < self.baselines.cluster_k_min
        {
            return Err(Error::ConfigInvalid(
                "baselines: need 2 <= cluster_k_min <= cluster_k_max".into(),
            ));
        }
        self.search_config(self.seed).validate()?;
        Ok(())
    }

    /// Stable hash of the full configuration (artifact provenance).
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(&json)[..16].to_string()
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_frac: self.splits.train_frac,
            val_frac: self.splits.val_frac,
            test_frac: self.splits.test_frac,
            seed: crate::util::derive_seed(self.seed, &["split"]),
        }
    }

    /// Loss kind and output activation follow the task kind.
    pub fn loss_kind(&self, kind: TaskKind) -> LossKind {
        match kind {
            TaskKind::Regression => LossKind::Mse,
            TaskKind::Classification => LossKind::Bce,
        }
    }

    pub fn output_activation(&self, kind: TaskKind) -> OutputActivation {
        match kind {
            TaskKind::Regression => OutputActivation::Linear,
            TaskKind::Classification => OutputActivation::Sigmoid,
        }
    }

    pub fn stl_spec(&self, input_dim: usize, kind: TaskKind) -> crate::nn::NetSpec {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(&self.model.stl_hidden);
        widths.push(1);
        crate::nn::NetSpec {
            layer_widths: widths,
            hidden_activation: self.model.hidden_activation,
            output_activation: self.output_activation(kind),
            learning_rate: self.model.learning_rate,
        }
    }

    pub fn mtl_arch(&self, kind: TaskKind) -> MtlArch {
        MtlArch {
            pre_widths: self.model.mtl_pre.clone(),
            shared_widths: self.model.mtl_shared.clone(),
            post_widths: self.model.mtl_post.clone(),
            hidden_activation: self.model.hidden_activation,
            output_activation: self.output_activation(kind),
            learning_rate: self.model.learning_rate,
        }
    }

    pub fn train_config(&self, kind: TaskKind) -> TrainConfig {
        TrainConfig {
            epochs: self.model.epochs,
            batch_size: self.model.batch_size,
            seed: self.seed,
            loss_kind: self.loss_kind(kind),
            curve_checkpoints: crate::nn::DEFAULT_CHECKPOINTS.to_vec(),
        }
    }

    pub fn predictor_config(&self, seed: u64) -> crate::predictor::PredictorConfig {
        crate::predictor::PredictorConfig {
            hidden_widths: self.predictor.hidden_widths.clone(),
            hidden_activation: Activation::Tanh,
            learning_rate: self.predictor.learning_rate,
            epochs: self.predictor.epochs,
            seed,
            feature_names: self.predictor.features.clone(),
            warm_start: self.predictor.warm_start,
        }
    }

    pub fn search_config(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            gamma_max: self.search.gamma_max,
            gamma_retrain: self.search.gamma_retrain,
            k: self.search.k,
            pi_t_start: self.search.pi_t_start,
            pi_t_end: self.search.pi_t_end,
            seed,
            budget_mtl: self.search.budget_mtl,
            start_rank: self.search.start_rank,
            use_predictor: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_config(dir: &Path) -> RunConfig {
        RunConfig {
            dataset: DatasetConfig {
                csv: None,
                synth: Some(SynthSource {
                    n_tasks: 6,
                    n_clusters: 2,
                    d: 4,
                    samples_per_task: 40,
                    noise: 0.1,
                }),
                kind_override: None,
                normalize: None,
            },
            splits: SplitFractions::default(),
            model: ModelConfig::default(),
            sample: SampleConfig::default(),
            predictor: PredictorSection::default(),
            search: SearchSection::default(),
            baselines: BaselineConfig::default(),
            report: ReportConfig::default(),
            artifacts_dir: dir.to_path_buf(),
            seed: 7,
        }
    }

    #[test]
    fn config_roundtrip_and_hash_stability() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth_config(dir.path());
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg.config_hash(), back.config_hash());
    }

    #[test]
    fn rejects_double_or_missing_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = synth_config(dir.path());
        cfg.dataset.csv = Some(CsvSource {
            path: dir.path().join("nope.csv"),
            id_col: default_id_col(),
            target_col: default_target_col(),
        });
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
        cfg.dataset.csv = None;
        cfg.dataset.synth = None;
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn sample_size_default_scales_with_tasks() {
        let s = SampleConfig { partitions: None };
        assert_eq!(s.resolve(12), 50);
        assert_eq!(s.resolve(100), 150);
        let s = SampleConfig {
            partitions: Some(30),
        };
        assert_eq!(s.resolve(100), 30);
    }
}
