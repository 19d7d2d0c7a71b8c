//! Flag sets shared by the CLI and `--config` files. Every field is optional
//! so a file value can sit underneath a flag value: flags win, then the file,
//! then the library default. File keys are the flag names without dashes in
//! front (`k-prime = 8`).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use c2c::bagdata::{BagDatasetConfig, Split};
use c2c::diffcore::GradCheckOptions;
use c2c::model::Pooling;
use c2c::trainer::{AblationAxis, SamplingStrategy, TrainConfig};
use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenDataOptions {
    /// IDX image file the training bags are drawn from.
    #[arg(long)]
    pub mnist_images: Option<PathBuf>,
    #[arg(long)]
    pub mnist_labels: Option<PathBuf>,
    /// Separate IDX pair for the test bags (defaults to the training pair).
    #[arg(long)]
    pub mnist_test_images: Option<PathBuf>,
    #[arg(long)]
    pub mnist_test_labels: Option<PathBuf>,
    #[arg(long)]
    pub train_bags: Option<usize>,
    #[arg(long)]
    pub test_bags: Option<usize>,
    #[arg(long)]
    pub mean_size: Option<f64>,
    #[arg(long)]
    pub size_std: Option<f64>,
    /// Comma-separated digits that make a bag positive.
    #[arg(long, value_delimiter = ',')]
    pub positive_digits: Option<Vec<u8>>,
    /// Force half of the bags positive (default true).
    #[arg(long)]
    pub balance: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl GenDataOptions {
    pub fn merged(self, file: Self) -> Self {
        Self {
            mnist_images: self.mnist_images.or(file.mnist_images),
            mnist_labels: self.mnist_labels.or(file.mnist_labels),
            mnist_test_images: self.mnist_test_images.or(file.mnist_test_images),
            mnist_test_labels: self.mnist_test_labels.or(file.mnist_test_labels),
            train_bags: self.train_bags.or(file.train_bags),
            test_bags: self.test_bags.or(file.test_bags),
            mean_size: self.mean_size.or(file.mean_size),
            size_std: self.size_std.or(file.size_std),
            positive_digits: self.positive_digits.or(file.positive_digits),
            balance: self.balance.or(file.balance),
            seed: self.seed.or(file.seed),
            out: self.out.or(file.out),
        }
    }

    pub fn dataset_config(&self) -> BagDatasetConfig {
        let d = BagDatasetConfig::default();
        BagDatasetConfig {
            n_train_bags: self.train_bags.unwrap_or(d.n_train_bags),
            n_test_bags: self.test_bags.unwrap_or(d.n_test_bags),
            mean_bag_size: self.mean_size.unwrap_or(d.mean_bag_size),
            bag_size_std: self.size_std.unwrap_or(d.bag_size_std),
            positive_digits: self.positive_digits.clone().unwrap_or(d.positive_digits),
            seed: self.seed.unwrap_or(d.seed),
            balance: self.balance.unwrap_or(d.balance),
        }
    }
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainOptions {
    /// Dataset manifest written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Clusters per bag.
    #[arg(long)]
    pub k: Option<usize>,
    /// Instances drawn per cluster.
    #[arg(long)]
    pub k_prime: Option<usize>,
    /// Maximum instances per bag per step.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sampling: Option<SamplingStrategy>,
    #[arg(long)]
    pub pooling: Option<Pooling>,
    /// Fraction of training bags held out for per-epoch validation.
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Attention hidden width.
    #[arg(long)]
    pub attention_dim: Option<usize>,
    /// Embedding width.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainOptions {
    pub fn merged(self, file: Self) -> Self {
        Self {
            data: self.data.or(file.data),
            k: self.k.or(file.k),
            k_prime: self.k_prime.or(file.k_prime),
            cap: self.cap.or(file.cap),
            alpha: self.alpha.or(file.alpha),
            beta: self.beta.or(file.beta),
            gamma: self.gamma.or(file.gamma),
            lr: self.lr.or(file.lr),
            epochs: self.epochs.or(file.epochs),
            seed: self.seed.or(file.seed),
            sampling: self.sampling.or(file.sampling),
            pooling: self.pooling.or(file.pooling),
            validation_fraction: self.validation_fraction.or(file.validation_fraction),
            attention_dim: self.attention_dim.or(file.attention_dim),
            embed_dim: self.embed_dim.or(file.embed_dim),
            out: self.out.or(file.out),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig::default();
        macro_rules! take {
            ($($src:ident => $($dst:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$src.clone() { c.$($dst).+ = v; })*
            };
        }
        take! {
            k => k,
            k_prime => k_prime,
            cap => n_prime_cap,
            alpha => weights.alpha,
            beta => weights.beta,
            gamma => weights.gamma,
            lr => learning_rate,
            epochs => epochs,
            seed => seed,
            sampling => sampling_strategy,
            pooling => pooling,
            validation_fraction => validation_fraction,
            attention_dim => model.attention_dim,
            embed_dim => model.embed_dim,
        }
        c
    }
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalOptions {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// train or test (default test).
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EvalOptions {
    pub fn merged(self, file: Self) -> Self {
        Self {
            data: self.data.or(file.data),
            checkpoint: self.checkpoint.or(file.checkpoint),
            split: self.split.or(file.split),
            out: self.out.or(file.out),
        }
    }
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", try_from = "RawAblate")]
pub struct AblateOptions {
    /// k, gamma, sampling or pooling.
    #[arg(long)]
    pub axis: Option<AblationAxis>,
    /// One run per value, e.g. `--values 4 6 8 10`.
    #[arg(long, num_args = 1..)]
    pub values: Option<Vec<String>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainOptions,
}

/// Flattened fields skip `deny_unknown_fields`, so the train keys are
/// collected loosely and then parsed strictly.
#[derive(Deserialize)]
struct RawAblate {
    axis: Option<AblationAxis>,
    values: Option<Vec<String>>,
    #[serde(flatten)]
    rest: serde_json::Map<String, serde_json::Value>,
}

impl TryFrom<RawAblate> for AblateOptions {
    type Error = serde_json::Error;

    fn try_from(raw: RawAblate) -> Result<Self, Self::Error> {
        Ok(Self {
            axis: raw.axis,
            values: raw.values,
            train: serde_json::from_value(serde_json::Value::Object(raw.rest))?,
        })
    }
}

impl AblateOptions {
    pub fn merged(self, file: Self) -> Self {
        Self {
            axis: self.axis.or(file.axis),
            values: self.values.or(file.values),
            train: self.train.merged(file.train),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GradcheckOptions {
    /// f32 or f64 (default f64).
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// Maximum allowed relative error (default 1e-4).
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Central-difference step (default 1e-5 for f64, 1e-2 for f32).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Coordinates sampled per tensor.
    #[arg(long)]
    pub coords: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the JSON report and run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl GradcheckOptions {
    pub fn merged(self, file: Self) -> Self {
        Self {
            precision: self.precision.or(file.precision),
            tolerance: self.tolerance.or(file.tolerance),
            epsilon: self.epsilon.or(file.epsilon),
            coords: self.coords.or(file.coords),
            seed: self.seed.or(file.seed),
            out: self.out.or(file.out),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision.unwrap_or(Precision::F64)
    }

    pub fn check_options(&self) -> GradCheckOptions {
        let d = GradCheckOptions::default();
        let eps = match self.precision() {
            Precision::F64 => d.epsilon,
            Precision::F32 => 1e-2,
        };
        GradCheckOptions {
            epsilon: self.epsilon.unwrap_or(eps),
            tolerance: self.tolerance.unwrap_or(d.tolerance),
            coords_per_tensor: self.coords.unwrap_or(d.coords_per_tensor),
            seed: self.seed.unwrap_or(d.seed),
            ..d
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: TrainOptions = toml::from_str("k = 4\ngamma = 0.5\nsampling = \"topk\"\n").unwrap();
        let flags = TrainOptions {
            gamma: Some(0.0),
            ..Default::default()
        };
        let c = flags.merged(file).train_config();
        assert_eq!(c.k, 4);
        assert_eq!(c.weights.gamma, 0.0);
        assert_eq!(c.sampling_strategy, SamplingStrategy::Topk);
        assert_eq!(c.k_prime, 8);
    }

    #[test]
    fn unknown_file_key_is_rejected() {
        assert!(toml::from_str::<TrainOptions>("clusters = 4\n").is_err());
        let ok: GenDataOptions = toml::from_str("positive-digits = [9]\nmean-size = 50.0\n").unwrap();
        assert_eq!(ok.dataset_config().positive_digits, vec![9]);
    }

    #[test]
    fn ablate_file_carries_train_keys() {
        let a: AblateOptions = toml::from_str("axis = \"gamma\"\nvalues = [\"1\", \"0.1\"]\nk = 4\n").unwrap();
        assert_eq!(a.axis, Some(AblationAxis::Gamma));
        assert_eq!(a.train.k, Some(4));
        assert!(toml::from_str::<AblateOptions>("axis = \"k\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn single_precision_uses_wider_step() {
        let g = GradcheckOptions {
            precision: Some(Precision::F32),
            ..Default::default()
        };
        assert_eq!(g.check_options().epsilon, 1e-2);
        assert_eq!(GradcheckOptions::default().check_options().tolerance, 1e-4);
    }
}
