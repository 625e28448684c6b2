//! Two-cluster 2-D benchmark with two anomaly types, one living next to
//! each normal cluster.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{rng, scenario_new_anomalies, Dataset, Label, Sample, ScenarioSplit};
use crate::error::{Result, SpadeError};
use crate::neuralnet::AdamConfig;
use crate::trainer::TrainConfig;

pub const TYPE_A: i64 = 1;
pub const TYPE_B: i64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Normals per cluster, before the train/test split.
    pub n_normal: usize,
    /// Anomalies per type.
    pub n_anomaly: usize,
    pub cluster_1: [f64; 2],
    pub cluster_2: [f64; 2],
    pub normal_std: f64,
    pub anomaly_a: [f64; 2],
    pub anomaly_b: [f64; 2],
    pub anomaly_std: f64,
    pub test_frac: f64,
    pub label_frac: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_normal: 1000,
            n_anomaly: 150,
            cluster_1: [-4.0, 0.0],
            cluster_2: [4.0, 0.0],
            normal_std: 1.0,
            anomaly_a: [-4.0, 5.0],
            anomaly_b: [4.0, -5.0],
            anomaly_std: 0.5,
            test_frac: 0.3,
            label_frac: 0.1,
        }
    }
}

/// Draws the full dataset; type 0 are normals.
pub fn generate(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    if cfg.n_normal == 0 || cfg.n_anomaly == 0 {
        return Err(SpadeError::invalid("synthetic benchmark needs normals and anomalies"));
    }
    let mut r = rng(seed);
    let noise = |sd: f64| Normal::new(0.0, sd).map_err(|e| SpadeError::invalid(e.to_string()));
    let (nn, na) = (noise(cfg.normal_std)?, noise(cfg.anomaly_std)?);
    let groups = [
        (cfg.cluster_1, cfg.n_normal, 0, &nn),
        (cfg.cluster_2, cfg.n_normal, 0, &nn),
        (cfg.anomaly_a, cfg.n_anomaly, TYPE_A, &na),
        (cfg.anomaly_b, cfg.n_anomaly, TYPE_B, &na),
    ];
    let mut samples = Vec::new();
    for (center, n, t, dist) in groups {
        for _ in 0..n {
            let features = center.iter().map(|c| c + dist.sample(&mut r)).collect();
            samples.push(Sample {
                id: samples.len(),
                features,
                label: if t == 0 { Label::Normal } else { Label::Anomalous },
                anomaly_type: Some(t),
                timestamp: None,
            });
        }
    }
    Dataset::new("synthetic", vec!["x0".into(), "x1".into()], samples)
}

/// New-anomaly split where only type A is labeled.
pub fn benchmark_split(cfg: &SyntheticConfig, seed: u64) -> Result<ScenarioSplit> {
    let ds = generate(cfg, seed)?;
    let (train, test) = crate::dataset::split_train_test(&ds, cfg.test_frac, seed)?;
    scenario_new_anomalies(&train, &test, &[TYPE_A].into(), cfg.label_frac, seed)
}

/// Training settings used for this benchmark: a width-8 encoder with
/// smaller batches and a larger step than the defaults.
pub fn benchmark_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        hidden_dim: Some(8),
        batch_size: 32,
        adam: AdamConfig {
            lr: 0.005,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    }
}
