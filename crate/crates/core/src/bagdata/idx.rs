use std::fs;
use std::path::Path;

use super::{DataError, Image, LabeledImage};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(DataError::Length {
            what,
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX3 image file (magic 0x00000803, big-endian count/rows/cols,
/// row-major unsigned bytes).
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image>, DataError> {
    let magic = be_u32(bytes, 0, "idx image header")?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::Format {
            what: "idx image file",
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, "idx image header")? as usize;
    let rows = be_u32(bytes, 8, "idx image header")? as usize;
    let cols = be_u32(bytes, 12, "idx image header")? as usize;
    let plane = rows * cols;
    let expected = 16 + count * plane;
    if bytes.len() != expected {
        return Err(DataError::Length {
            what: "idx image payload",
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[16..]
        .chunks_exact(plane.max(1))
        .take(count)
        .map(|c| Image {
            rows,
            cols,
            levels: c.to_vec(),
        })
        .collect())
}

/// Parses an IDX1 label file (magic 0x00000801). Every label must be 0-9.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0, "idx label header")?;
    if magic != LABEL_MAGIC {
        return Err(DataError::Format {
            what: "idx label file",
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, "idx label header")? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(DataError::Length {
            what: "idx label payload",
            expected,
            found: bytes.len(),
        });
    }
    let labels = bytes[8..].to_vec();
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &v)| v > 9) {
        return Err(DataError::InvalidLabel { index, value });
    }
    Ok(labels)
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<Image>, DataError> {
    parse_idx_images(&read(path.as_ref())?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>, DataError> {
    parse_idx_labels(&read(path.as_ref())?)
}

/// Loads a paired image/label file set into a labelled pool.
pub fn load_mnist_pool(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Vec<LabeledImage>, DataError> {
    let imgs = load_idx_images(images)?;
    let labs = load_idx_labels(labels)?;
    if imgs.len() != labs.len() {
        return Err(DataError::Length {
            what: "label count for paired image file",
            expected: imgs.len(),
            found: labs.len(),
        });
    }
    Ok(imgs
        .into_iter()
        .zip(labs)
        .map(|(image, digit)| LabeledImage { image, digit })
        .collect())
}
