//! Checksummed binary container shared by dataset manifests and model
//! checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON
//! payload_len  u64
//! payload      payload_len bytes
//! sha256       32 bytes over every preceding byte
//! ```

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: String, found: String },
    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checksum mismatch: file is corrupt or was modified")]
    Checksum,
    #[error("container truncated: {0}")]
    Truncated(&'static str),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
}

pub struct Container<'a> {
    pub header: &'a [u8],
    pub payload: &'a [u8],
}

pub fn encode(magic: &[u8; 8], version: u32, header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + 8 + payload.len() + 32);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn show(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).trim_end_matches('\0').to_string()
}

pub fn decode<'a>(magic: &[u8; 8], supported: u32, bytes: &'a [u8]) -> Result<Container<'a>, ContainerError> {
    if bytes.len() < 8 {
        return Err(ContainerError::Truncated("missing magic"));
    }
    if &bytes[..8] != magic {
        return Err(ContainerError::Magic {
            expected: show(magic),
            found: show(&bytes[..8]),
        });
    }
    if bytes.len() < 8 + 4 + 8 + 8 + 32 {
        return Err(ContainerError::Truncated("shorter than the fixed fields"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ContainerError::Checksum);
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != supported {
        return Err(ContainerError::Version {
            found: version,
            supported,
        });
    }
    let mut cur = Cursor { buf: body, pos: 12 };
    let header_len = cur.u64()? as usize;
    let header = cur.take(header_len)?;
    let payload_len = cur.u64()? as usize;
    let payload = cur.take(payload_len)?;
    if cur.pos != body.len() {
        return Err(ContainerError::Truncated("trailing bytes after payload"));
    }
    Ok(Container { header, payload })
}

/// Minimal little-endian reader over a byte slice.
pub(crate) struct Cursor<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.buf.len() - self.pos < n {
            return Err(ContainerError::Truncated("record runs past the end"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, ContainerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTFMT\0";

    #[test]
    fn round_trip() {
        let bytes = encode(MAGIC, 3, b"{\"a\":1}", &[1, 2, 3]);
        let c = decode(MAGIC, 3, &bytes).unwrap();
        assert_eq!(c.header, b"{\"a\":1}");
        assert_eq!(c.payload, &[1, 2, 3]);
    }

    #[test]
    fn detects_flipped_byte() {
        let mut bytes = encode(MAGIC, 1, b"{}", &[9; 64]);
        bytes[40] ^= 0x10;
        assert!(matches!(decode(MAGIC, 1, &bytes), Err(ContainerError::Checksum)));
    }

    #[test]
    fn rejects_other_version_and_magic() {
        let bytes = encode(MAGIC, 2, b"{}", &[]);
        assert!(matches!(
            decode(MAGIC, 1, &bytes),
            Err(ContainerError::Version { found: 2, supported: 1 })
        ));
        assert!(matches!(
            decode(b"OTHERFMT", 2, &bytes),
            Err(ContainerError::Magic { .. })
        ));
    }
}
