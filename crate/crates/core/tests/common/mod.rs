#![allow(dead_code)]

use bsc_core::data::{generate_gaussian_clusters, make_session_plan, SessionPlan, TrainTestSplit};
use bsc_core::model::ModelConfig;
use bsc_core::protocol::{FinetuneConfig, PhaseConfig, PretrainConfig};

pub fn small_model() -> ModelConfig {
    ModelConfig {
        extractor_dims: vec![32, 32, 32],
        head_hidden: 32,
        projection_dim: 16,
        ..ModelConfig::default()
    }
}

/// 16 classes in 12-D: 6 base classes and five 2-way 3-shot sessions.
pub fn small_problem(seed: u64) -> (TrainTestSplit, SessionPlan) {
    let data = generate_gaussian_clusters(16, 12, 30, 0.2, seed).unwrap();
    let split = data.split_train_test(0.8, seed + 100).unwrap();
    let plan = make_session_plan(&split, 6, 2, 3, 6, seed + 200).unwrap();
    (split, plan)
}

pub fn short_phases(pretrain_epochs: usize, finetune_epochs: usize, seed: u64) -> PhaseConfig {
    PhaseConfig {
        pretrain: PretrainConfig {
            epochs: pretrain_epochs,
            batch_size: 32,
            ..PretrainConfig::default()
        },
        finetune: FinetuneConfig {
            epochs: finetune_epochs,
            batch_size: 32,
            ..FinetuneConfig::default()
        },
        seed,
    }
}
