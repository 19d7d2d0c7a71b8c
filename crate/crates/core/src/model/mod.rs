//! The learnable pipeline: instance encoder, tanh attention scorer,
//! bag and instance heads. Tape builders are generic over precision and are
//! used for training; the plain `f64` functions below them are the inference
//! path and double as independent references in tests.

mod checkpoint;
mod forward;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::ContainerError;
use crate::diffcore::{DiffError, ParamSet, ParamTensor};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION,
};
pub use forward::{
    aggregate, attention_weights, bag_predict, encode, forward_bag, instance_predict, mean_aggregate, BagForward,
    ModelVars,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] ContainerError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderKind {
    /// conv 6@5×5 → pool → conv 16@5×5 → pool → 120 → 84 → l.
    LeNet5,
    /// Fully connected ReLU stack on flattened pixels, then a projection to l.
    Dense { hidden: Vec<usize> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Attention,
    Mean,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Attention => "attention",
            Pooling::Mean => "mean",
        })
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "attention" => Ok(Pooling::Attention),
            "mean" => Ok(Pooling::Mean),
            _ => Err(format!("unknown pooling {s:?} (expected attention or mean)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub input_rows: usize,
    pub input_cols: usize,
    /// Embedding width `l`.
    pub embed_dim: usize,
    /// Attention hidden width `d`.
    pub attention_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::LeNet5,
            input_rows: 28,
            input_cols: 28,
            embed_dim: 64,
            attention_dim: 64,
        }
    }
}

pub(crate) const LENET_C1: usize = 6;
pub(crate) const LENET_C2: usize = 16;
pub(crate) const LENET_K: usize = 5;
pub(crate) const LENET_FC1: usize = 120;
pub(crate) const LENET_FC2: usize = 84;

impl ModelConfig {
    /// Flattened width after the LeNet5 convolution/pool stack.
    pub(crate) fn lenet_flat(&self) -> Option<usize> {
        let side = |s: usize| {
            let a = s.checked_sub(LENET_K - 1)? / 2;
            let b = a.checked_sub(LENET_K - 1)? / 2;
            (b > 0).then_some(b)
        };
        Some(LENET_C2 * side(self.input_rows)? * side(self.input_cols)?)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.attention_dim == 0 {
            return Err(ModelError::Config(
                "embedding and attention widths must be positive".into(),
            ));
        }
        if self.input_rows == 0 || self.input_cols == 0 {
            return Err(ModelError::Config("input image must be non-empty".into()));
        }
        match &self.encoder {
            EncoderKind::LeNet5 if self.lenet_flat().is_none() => Err(ModelError::Config(format!(
                "{}x{} input is too small for the LeNet5 encoder",
                self.input_rows, self.input_cols
            ))),
            EncoderKind::Dense { hidden } if hidden.contains(&0) => {
                Err(ModelError::Config("dense hidden widths must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Parameter names and shapes in registration order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let dense = |out: &mut Vec<(String, Vec<usize>)>, name: &str, fan_in: usize, fan_out: usize| {
            out.push((format!("{name}.weight"), vec![fan_out, fan_in]));
            out.push((format!("{name}.bias"), vec![fan_out]));
        };
        let l = self.embed_dim;
        match &self.encoder {
            EncoderKind::LeNet5 => {
                out.push(("encoder.conv1.weight".into(), vec![LENET_C1, 1, LENET_K, LENET_K]));
                out.push(("encoder.conv1.bias".into(), vec![LENET_C1]));
                out.push((
                    "encoder.conv2.weight".into(),
                    vec![LENET_C2, LENET_C1, LENET_K, LENET_K],
                ));
                out.push(("encoder.conv2.bias".into(), vec![LENET_C2]));
                let flat = self.lenet_flat().unwrap_or(0);
                dense(&mut out, "encoder.fc1", flat, LENET_FC1);
                dense(&mut out, "encoder.fc2", LENET_FC1, LENET_FC2);
                dense(&mut out, "encoder.proj", LENET_FC2, l);
            }
            EncoderKind::Dense { hidden } => {
                let mut width = self.input_rows * self.input_cols;
                for (i, &h) in hidden.iter().enumerate() {
                    dense(&mut out, &format!("encoder.fc{}", i + 1), width, h);
                    width = h;
                }
                dense(&mut out, "encoder.proj", width, l);
            }
        }
        out.push(("attention.v1".into(), vec![self.attention_dim, l]));
        out.push(("attention.v2".into(), vec![self.attention_dim]));
        dense(&mut out, "bag_head", l, 2);
        dense(&mut out, "instance_head", l, 2);
        out
    }
}

/// Glorot fan sizes; convolution fans include the receptive field.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, 1),
        [o, i] => (*i, *o),
        [o, c, kh, kw] => (c * kh * kw, o * kh * kw),
        _ => (1, 1),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    /// Xavier-uniform weights, zero biases.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in config.layout() {
            let n: usize = shape.iter().product();
            let values = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let (fi, fo) = fans(&shape);
                let bound = (6.0 / (fi + fo) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            };
            params.push(ParamTensor::new(name, shape, values)?)?;
        }
        Ok(Self { config, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in config.layout() {
            params.push(ParamTensor::zeros(name, shape))?;
        }
        Ok(Self { config, params })
    }

    /// Checks that `params` carries exactly the tensors `config` requires.
    pub fn from_parts(config: ModelConfig, params: ParamSet) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(ModelError::Shape(format!(
                "model needs {} tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (name, shape) in &layout {
            match params.get(name) {
                Some(p) if &p.shape == shape => {}
                Some(p) => {
                    return Err(ModelError::Shape(format!(
                        "{name}: expected shape {shape:?}, found {:?}",
                        p.shape
                    )))
                }
                None => return Err(ModelError::Shape(format!("missing tensor {name}"))),
            }
        }
        Ok(Self { config, params })
    }

    pub(crate) fn values(&self, name: &str) -> &[f64] {
        &self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("validated model lacks {name}"))
            .values
    }
}
