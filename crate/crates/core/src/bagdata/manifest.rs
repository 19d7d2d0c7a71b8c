//! Dataset manifest: a [`crate::container`] file whose JSON header echoes the
//! generation config and whose payload stores every bag with raw pixels.
//!
//! Payload records, little-endian, train split first then test:
//!
//! ```text
//! bag:      bag_id u64 | label u8 | n_instances u32 | instance*
//! instance: instance_id u32 | digit u8 | rows u16 | cols u16 | rows*cols levels
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bag, BagDataset, BagDatasetConfig, DataError, Image, Instance};
use crate::container::{self, Cursor};

const MAGIC: &[u8; 8] = b"C2CBAGS\0";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    config: BagDatasetConfig,
    source: String,
    train_bags: usize,
    test_bags: usize,
    train_instances: usize,
    test_instances: usize,
}

fn write_bags(out: &mut Vec<u8>, bags: &[Bag]) -> Result<(), DataError> {
    for bag in bags {
        out.extend_from_slice(&bag.bag_id.to_le_bytes());
        out.push(bag.label);
        out.extend_from_slice(&(bag.instances.len() as u32).to_le_bytes());
        for inst in &bag.instances {
            let (rows, cols) = (inst.image.rows, inst.image.cols);
            if rows > u16::MAX as usize || cols > u16::MAX as usize {
                return Err(DataError::Corrupt(format!(
                    "image {rows}x{cols} too large for manifest"
                )));
            }
            out.extend_from_slice(&inst.instance_id.to_le_bytes());
            out.push(inst.digit);
            out.extend_from_slice(&(rows as u16).to_le_bytes());
            out.extend_from_slice(&(cols as u16).to_le_bytes());
            out.extend_from_slice(&inst.image.levels);
        }
    }
    Ok(())
}

fn read_bags(cur: &mut Cursor<'_>, n: usize) -> Result<Vec<Bag>, DataError> {
    let mut bags = Vec::with_capacity(n);
    for _ in 0..n {
        let bag_id = cur.u64()?;
        let label = cur.u8()?;
        if label > 1 {
            return Err(DataError::Corrupt(format!("bag {bag_id} has label {label}")));
        }
        let count = cur.u32()? as usize;
        let mut instances = Vec::with_capacity(count);
        for _ in 0..count {
            let instance_id = cur.u32()?;
            let digit = cur.u8()?;
            let rows = cur.u16()? as usize;
            let cols = cur.u16()? as usize;
            let levels = cur.take(rows * cols)?.to_vec();
            instances.push(Instance {
                instance_id,
                image: Image { rows, cols, levels },
                digit,
            });
        }
        bags.push(Bag {
            bag_id,
            instances,
            label,
        });
    }
    Ok(bags)
}

pub fn encode_manifest(dataset: &BagDataset) -> Result<Vec<u8>, DataError> {
    let header = Header {
        format: "c2c-bag-manifest".into(),
        version: MANIFEST_VERSION,
        seed: dataset.config.seed,
        config: dataset.config.clone(),
        source: dataset.source.clone(),
        train_bags: dataset.train.len(),
        test_bags: dataset.test.len(),
        train_instances: dataset.train.iter().map(Bag::len).sum(),
        test_instances: dataset.test.iter().map(Bag::len).sum(),
    };
    let header = serde_json::to_vec_pretty(&header).map_err(container::ContainerError::from)?;
    let mut payload = Vec::new();
    write_bags(&mut payload, &dataset.train)?;
    write_bags(&mut payload, &dataset.test)?;
    Ok(container::encode(MAGIC, MANIFEST_VERSION, &header, &payload))
}

pub fn decode_manifest(bytes: &[u8]) -> Result<BagDataset, DataError> {
    let c = container::decode(MAGIC, MANIFEST_VERSION, bytes)?;
    let header: Header = serde_json::from_slice(c.header).map_err(container::ContainerError::from)?;
    let mut cur = Cursor::new(c.payload);
    let train = read_bags(&mut cur, header.train_bags)?;
    let test = read_bags(&mut cur, header.test_bags)?;
    if !cur.is_done() {
        return Err(DataError::Corrupt("unread bytes after the last bag".into()));
    }
    let counted = (
        train.iter().map(Bag::len).sum::<usize>(),
        test.iter().map(Bag::len).sum::<usize>(),
    );
    if counted != (header.train_instances, header.test_instances) {
        return Err(DataError::Corrupt(format!(
            "header declares {:?} instances, records hold {counted:?}",
            (header.train_instances, header.test_instances)
        )));
    }
    Ok(BagDataset {
        config: header.config,
        source: header.source,
        train,
        test,
    })
}

pub fn save_manifest(dataset: &BagDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, encode_manifest(dataset)?).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<BagDataset, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_manifest(&bytes)
}
