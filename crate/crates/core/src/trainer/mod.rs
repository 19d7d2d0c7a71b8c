//! Training loop, evaluation, metrics and ablation sweeps.
//!
//! Each epoch runs in two phases. Phase 1 freezes the parameters, embeds every
//! instance of every training bag, clusters the l2-normalized embeddings per
//! bag and fixes a sampling plan; it is parallel over bags. Phase 2 visits the
//! bags one at a time in a shuffled order and takes one Adam step per bag on
//! the sampled instances.

mod ablate;
mod adam;
mod epoch;
mod evaluate;
mod metrics;
mod report;
mod toy;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterError;
use crate::diffcore::DiffError;
use crate::loss::LossWeights;
use crate::model::{ModelConfig, ModelError, Pooling};

pub use ablate::{ablate, AblationAxis, AblationRow};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use epoch::{run_epoch, split_validation, train, train_with, EpochRecord, SamplingAudit, TrainOutcome};
pub use evaluate::{attention_uniformity_stats, evaluate, AttentionRecord, BagPrediction, Evaluation, UniformityStats};
pub use metrics::{compute_metrics, roc_auc, Confusion, MetricsReport};
pub use report::{ablation_table, metrics_table, write_ablation, write_attention_csv, write_epoch_log, write_metrics};
pub use toy::{toy_gradient_check, toy_problem, ToyProblem};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("non-finite value in epoch {epoch}, bag {bag_id}: {detail}")]
    NonFinite { epoch: usize, bag_id: u64, detail: String },
    #[error("sampling invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    Cluster,
    Topk,
    Random,
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingStrategy::Cluster => "cluster",
            SamplingStrategy::Topk => "topk",
            SamplingStrategy::Random => "random",
        })
    }
}

impl FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cluster" => Ok(SamplingStrategy::Cluster),
            "topk" => Ok(SamplingStrategy::Topk),
            "random" => Ok(SamplingStrategy::Random),
            _ => Err(format!(
                "unknown sampling strategy {s:?} (expected cluster, topk or random)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub k_prime: usize,
    pub n_prime_cap: usize,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub sampling_strategy: SamplingStrategy,
    pub pooling: Pooling,
    pub adam: AdamConfig,
    /// Fraction of training bags held out for per-epoch validation.
    pub validation_fraction: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 8,
            k_prime: 8,
            n_prime_cap: 64,
            weights: LossWeights::default(),
            learning_rate: 1e-4,
            epochs: 30,
            seed: 0,
            sampling_strategy: SamplingStrategy::Cluster,
            pooling: Pooling::Attention,
            adam: AdamConfig::default(),
            validation_fraction: 0.15,
            kmeans_restarts: 5,
            kmeans_max_iter: 100,
            kmeans_tol: 1e-6,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.k == 0 || self.k_prime == 0 || self.n_prime_cap == 0 {
            return bad("k, k_prime and n_prime_cap must all be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.kmeans_restarts == 0 || self.kmeans_max_iter == 0 {
            return bad("k-means restarts and max_iter must be at least 1".into());
        }
        self.weights.validate().map_err(TrainError::Config)?;
        self.adam.validate().map_err(TrainError::Config)?;
        self.model.validate()?;
        Ok(())
    }
}
