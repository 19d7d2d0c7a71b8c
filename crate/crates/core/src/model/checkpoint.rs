//! Parameter checkpoints: JSON header with the model config, an optional
//! echo of the training config and the tensor table; payload of raw
//! little-endian `f64` values in table order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};
use crate::container::{self, ContainerError, Cursor};
use crate::diffcore::{ParamSet, ParamTensor};

const MAGIC: &[u8; 8] = b"C2CCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    requires_grad: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dtype: String,
    model: ModelConfig,
    train_config: Option<serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>, ModelError> {
    let header = Header {
        format: "c2c-checkpoint".into(),
        version: CHECKPOINT_VERSION,
        dtype: "f64".into(),
        model: ckpt.model.config.clone(),
        train_config: ckpt.train_config.clone(),
        tensors: ckpt
            .model
            .params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                requires_grad: p.requires_grad,
            })
            .collect(),
    };
    let header = serde_json::to_vec_pretty(&header).map_err(ContainerError::from)?;
    let mut payload = Vec::with_capacity(ckpt.model.params.num_values() * 8);
    for p in ckpt.model.params.iter() {
        p.values
            .iter()
            .for_each(|v| payload.extend_from_slice(&v.to_le_bytes()));
    }
    Ok(container::encode(MAGIC, CHECKPOINT_VERSION, &header, &payload))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let c = container::decode(MAGIC, CHECKPOINT_VERSION, bytes)?;
    let header: Header = serde_json::from_slice(c.header).map_err(ContainerError::from)?;
    if header.dtype != "f64" {
        return Err(ModelError::Shape(format!(
            "unsupported checkpoint dtype {:?}",
            header.dtype
        )));
    }
    let mut cur = Cursor::new(c.payload);
    let mut params = ParamSet::new();
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let values = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>, _>>()?;
        let mut p = ParamTensor::new(t.name, t.shape, values)?;
        p.requires_grad = t.requires_grad;
        params.push(p)?;
    }
    if !cur.is_done() {
        return Err(ModelError::Shape("checkpoint payload has trailing bytes".into()));
    }
    Ok(Checkpoint {
        model: Model::from_parts(header.model, params)?,
        train_config: header.train_config,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ckpt)?).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn ckpt() -> Checkpoint {
        Checkpoint {
            model: Model::init(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap(),
            train_config: Some(serde_json::json!({"epochs": 3})),
        }
    }

    #[test]
    fn bit_identical_round_trip() {
        let c = ckpt();
        let bytes = encode_checkpoint(&c).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        for (a, b) in c.model.params.iter().zip(back.model.params.iter()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.values), bits(&b.values));
        }
        assert_eq!(back, c);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_checkpoint(&ckpt()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(ModelError::Checkpoint(ContainerError::Checksum))
        ));
        assert!(matches!(
            decode_checkpoint(b"C2CBAGS\0rest"),
            Err(ModelError::Checkpoint(ContainerError::Magic { .. }))
        ));
    }
}
