//! Bags of instances: the data model, MNIST IDX ingestion, synthetic
//! MNIST-bags generation and the on-disk dataset manifest.

mod generate;
mod idx;
mod manifest;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::ContainerError;

pub use generate::{generate_bags, generate_bags_from_pools, LabeledImage};
pub use idx::{
    load_idx_images, load_idx_labels, load_mnist_pool, parse_idx_images, parse_idx_labels, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use manifest::{decode_manifest, encode_manifest, load_manifest, save_manifest, MANIFEST_VERSION};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: bad magic number, expected {expected:#010x}, found {found:#010x}")]
    Format {
        what: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("{what}: expected {expected} bytes, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("label {index} has value {value}, labels must be digits 0-9")]
    InvalidLabel { index: usize, value: u8 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(#[from] ContainerError),
    #[error("manifest record is inconsistent: {0}")]
    Corrupt(String),
}

/// Grayscale image with 8-bit levels; pixel intensities are `level / 255`,
/// so every pixel lies in `[0, 1]` by construction.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub levels: Vec<u8>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, levels: Vec<u8>) -> Result<Self, DataError> {
        if rows * cols != levels.len() {
            return Err(DataError::Length {
                what: "image",
                expected: rows * cols,
                found: levels.len(),
            });
        }
        Ok(Self { rows, cols, levels })
    }

    pub fn filled(rows: usize, cols: usize, level: u8) -> Self {
        Self {
            rows,
            cols,
            levels: vec![level; rows * cols],
        }
    }

    pub fn pixel(&self, r: usize, c: usize) -> f64 {
        self.levels[r * self.cols + c] as f64 / 255.0
    }

    /// Row-major intensities in `[0, 1]`.
    pub fn pixels(&self) -> Vec<f64> {
        self.levels.iter().map(|&v| v as f64 / 255.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub instance_id: u32,
    pub image: Image,
    /// Source digit; diagnostics only, never shown to the model.
    pub digit: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bag {
    pub bag_id: u64,
    pub instances: Vec<Instance>,
    /// 0 = negative, 1 = positive.
    pub label: u8,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagDatasetConfig {
    pub n_train_bags: usize,
    pub n_test_bags: usize,
    pub mean_bag_size: f64,
    /// Standard deviation of the bag size (not variance).
    pub bag_size_std: f64,
    pub positive_digits: Vec<u8>,
    pub seed: u64,
    /// Force ⌈n/2⌉ positive and ⌊n/2⌋ negative bags per split.
    pub balance: bool,
}

impl Default for BagDatasetConfig {
    fn default() -> Self {
        Self {
            n_train_bags: 400,
            n_test_bags: 100,
            mean_bag_size: 400.0,
            bag_size_std: 10.0,
            positive_digits: vec![8, 9],
            seed: 0,
            balance: true,
        }
    }
}

impl BagDatasetConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.mean_bag_size.is_finite() && self.mean_bag_size > 0.0) {
            return Err(DataError::Config(format!(
                "mean_bag_size must be positive, got {}",
                self.mean_bag_size
            )));
        }
        if !(self.bag_size_std.is_finite() && self.bag_size_std >= 0.0) {
            return Err(DataError::Config(format!(
                "bag_size_std must be non-negative, got {}",
                self.bag_size_std
            )));
        }
        if self.positive_digits.is_empty() {
            return Err(DataError::Config("positive_digits must not be empty".into()));
        }
        if let Some(d) = self.positive_digits.iter().find(|&&d| d > 9) {
            return Err(DataError::Config(format!("positive digit {d} is outside 0-9")));
        }
        Ok(())
    }

    pub fn is_positive_digit(&self, digit: u8) -> bool {
        self.positive_digits.contains(&digit)
    }
}

/// A generated dataset: both splits plus the configuration that made them.
#[derive(Clone, Debug, PartialEq)]
pub struct BagDataset {
    pub config: BagDatasetConfig,
    /// Free-form provenance string (e.g. source file names).
    pub source: String,
    pub train: Vec<Bag>,
    pub test: Vec<Bag>,
}

impl BagDataset {
    pub fn split(&self, name: Split) -> &[Bag] {
        match name {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}
