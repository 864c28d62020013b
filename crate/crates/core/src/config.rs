//! Run configuration: one JSON document covering data, session plan, model,
//! both training phases, evaluation, analysis, seeds and output location.
//!
//! Every section has defaults; unknown keys are rejected. The resolved
//! document (defaults filled in) is echoed into every output file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::MinAngleConfig;
use crate::data::{self, generate_gaussian_clusters, make_session_plan, DatasetSource, SessionPlan, TrainTestSplit};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::protocol::{FinetuneConfig, PhaseConfig, PretrainConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "format", deny_unknown_fields)]
pub enum DataSourceConfig {
    Synthetic {
        num_classes: usize,
        d_in: usize,
        samples_per_class: usize,
        cluster_std: f64,
        /// Shared shift added to every coordinate.
        #[serde(default)]
        offset: f64,
    },
    Csv {
        path: PathBuf,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSourceConfig,
    /// Per-class share of samples kept for training.
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSourceConfig::Synthetic {
                num_classes: 60,
                d_in: 32,
                samples_per_class: 60,
                cluster_std: 0.25,
                offset: 0.0,
            },
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionPlanConfig {
    pub num_base_classes: usize,
    pub ways: usize,
    pub shots: usize,
    pub num_sessions: usize,
}

impl Default for SessionPlanConfig {
    fn default() -> Self {
        Self {
            num_base_classes: 20,
            ways: 5,
            shots: 5,
            num_sessions: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub save_checkpoints: bool,
    /// Extra pre-training checkpoints every `k` epochs.
    pub pretrain_checkpoint_every: Option<usize>,
    /// Write extractor features of the test split after the run.
    pub export_embeddings: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            save_checkpoints: true,
            pretrain_checkpoint_every: None,
            export_embeddings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Write ψ over the base classes after the run.
    pub psi_after_run: bool,
    pub min_angle: MinAngleConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            psi_after_run: true,
            min_angle: MinAngleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    /// Synthetic data generation.
    pub data: u64,
    /// Train/test split and session plan.
    pub plan: u64,
    /// Initialization, batching and augmentation draws.
    pub run: u64,
}

/// Settings for the `gradcheck` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub eps: f64,
    pub sample_fraction: f64,
    pub tolerance: f64,
    /// Test hook: multiplies analytic gradients before comparison.
    pub corrupt_scale: f64,
    pub d_in: usize,
    pub model: ModelConfig,
    /// Source labels of the check batch; each source expands to `m` views.
    pub labels: Vec<u32>,
    pub m: usize,
    pub tau: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            sample_fraction: 0.3,
            tolerance: 1e-4,
            corrupt_scale: 1.0,
            d_in: 6,
            model: ModelConfig {
                extractor_dims: vec![8, 8, 6],
                head_hidden: 6,
                projection_dim: 4,
                ..ModelConfig::default()
            },
            labels: vec![0, 0, 1, 1],
            m: 3,
            tau: 0.5,
            alpha: 1.5,
            lambda: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub session_plan: SessionPlanConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub evaluation: EvaluationConfig,
    pub analysis: AnalysisConfig,
    pub seeds: SeedConfig,
    pub output_dir: PathBuf,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            session_plan: SessionPlanConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            evaluation: EvaluationConfig::default(),
            analysis: AnalysisConfig::default(),
            seeds: SeedConfig::default(),
            output_dir: PathBuf::from("bsc-output"),
            gradcheck: GradcheckSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses JSON; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn phases(&self) -> PhaseConfig {
        PhaseConfig {
            pretrain: self.pretrain.clone(),
            finetune: self.finetune.clone(),
            seed: self.seeds.run,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| match e {
            Error::Config(msg) => Error::Config(format!("{name}: {msg}")),
            other => other,
        };
        if let DataSourceConfig::Synthetic {
            num_classes,
            d_in,
            samples_per_class,
            cluster_std,
            offset,
        } = self.data.source
        {
            if !offset.is_finite() {
                return Err(Error::Config("data.source.offset: must be finite".into()));
            }
            if num_classes == 0 || d_in == 0 || samples_per_class < 2 {
                return Err(Error::Config(
                    "data.source: synthetic data needs classes, d_in ≥ 1 and ≥ 2 samples per class".into(),
                ));
            }
            if !(cluster_std > 0.0 && cluster_std.is_finite()) {
                return Err(Error::Config("data.source.cluster_std: must be positive".into()));
            }
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config("data.train_fraction: must lie in (0, 1)".into()));
        }
        let sp = &self.session_plan;
        if sp.num_sessions == 0 || sp.num_base_classes == 0 {
            return Err(Error::Config(
                "session_plan: need ≥ 1 session and ≥ 1 base class".into(),
            ));
        }
        if sp.num_sessions > 1 && (sp.ways == 0 || sp.shots == 0) {
            return Err(Error::Config("session_plan: ways and shots must be positive".into()));
        }
        self.model.validate().map_err(|e| field("model", e))?;
        self.phases().validate().map_err(|e| field("pretrain/finetune", e))?;
        let g = &self.gradcheck;
        if !(g.eps > 0.0) || !(g.sample_fraction > 0.0 && g.sample_fraction <= 1.0) || !(g.tolerance > 0.0) {
            return Err(Error::Config(
                "gradcheck: eps and tolerance must be positive, sample_fraction in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Loads or generates the dataset and splits it per class.
    pub fn load_split(&self) -> Result<TrainTestSplit> {
        let dataset = match &self.data.source {
            DataSourceConfig::Synthetic {
                num_classes,
                d_in,
                samples_per_class,
                cluster_std,
                offset,
            } => {
                let mut ds =
                    generate_gaussian_clusters(*num_classes, *d_in, *samples_per_class, *cluster_std, self.seeds.data)?;
                data::add_offset(&mut ds, *offset);
                ds
            }
            DataSourceConfig::Csv { path } => data::load_dataset(&DatasetSource::Csv { path: path.clone() })?,
            DataSourceConfig::Idx { images, labels } => data::load_dataset(&DatasetSource::Idx {
                images: images.clone(),
                labels: labels.clone(),
            })?,
        };
        dataset.split_train_test(self.data.train_fraction, derive_seed(self.seeds.plan, &[0]))
    }

    pub fn make_plan(&self, split: &TrainTestSplit) -> Result<SessionPlan> {
        let sp = &self.session_plan;
        make_session_plan(
            split,
            sp.num_base_classes,
            sp.ways,
            sp.shots,
            sp.num_sessions,
            derive_seed(self.seeds.plan, &[1]),
        )
    }
}
