//! IQD v1 binary dataset format.
//!
//! All integers little-endian.
//!
//! ```text
//! header   magic "IQD1" | u32 version (=1) | u32 frame count | u16 frame_len
//! record   u8 label | i8 snr_db | u8 split tag | f32 × frame_len (I) | f32 × frame_len (Q)
//! trailer  u32 CRC32 (IEEE) of every preceding byte
//! ```
//!
//! Split tags: 0 unassigned, 1 train, 2 val, 3 test.

use std::fs;
use std::path::Path;

use super::{Dataset, IqFrame, Provenance, SplitTag};
use crate::error::{Error, Result};

pub const IQD_MAGIC: [u8; 4] = *b"IQD1";
pub const IQD_VERSION: u32 = 1;
pub const IQD_HEADER_LEN: usize = 14;

fn record_len(frame_len: usize) -> usize {
    3 + 8 * frame_len
}

pub fn encode(dataset: &Dataset) -> Result<Vec<u8>> {
    let n = dataset.frame_len();
    if n > u16::MAX as usize {
        return Err(Error::InvalidConfig(format!("frame_len {n} exceeds u16")));
    }
    let count = u32::try_from(dataset.len())
        .map_err(|_| Error::InvalidConfig("too many frames for IQD v1".into()))?;
    let mut buf = Vec::with_capacity(IQD_HEADER_LEN + dataset.len() * record_len(n) + 4);
    buf.extend_from_slice(&IQD_MAGIC);
    buf.extend_from_slice(&IQD_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&(n as u16).to_le_bytes());
    for idx in 0..dataset.len() {
        buf.push(dataset.labels()[idx]);
        buf.push(dataset.snrs_db()[idx] as u8);
        buf.push(dataset.splits()[idx] as u8);
        for v in dataset.frame(idx).as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: IQD_HEADER_LEN + 4,
            found: bytes.len(),
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if magic != IQD_MAGIC {
        return Err(Error::BadMagic {
            expected: IQD_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < IQD_HEADER_LEN + 4 {
        return Err(Error::Truncated {
            expected: IQD_HEADER_LEN + 4,
            found: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != IQD_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = u16::from_le_bytes(bytes[12..14].try_into().unwrap()) as usize;
    let expected = IQD_HEADER_LEN + count * record_len(n) + 4;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes {
            expected,
            found: bytes.len(),
        });
    }
    let body = &bytes[..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    if count > 0 && n == 0 {
        return Err(Error::Malformed("zero frame length".into()));
    }

    let mut frames = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut snrs = Vec::with_capacity(count);
    let mut splits = Vec::with_capacity(count);
    for rec in body[IQD_HEADER_LEN..].chunks_exact(record_len(n)) {
        labels.push(rec[0]);
        snrs.push(rec[1] as i8);
        splits.push(SplitTag::from_code(rec[2])?);
        let values: Vec<f32> = rec[3..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        frames.push(IqFrame::from_rows(values)?);
    }
    Dataset::from_parts(frames, labels, snrs, splits, Provenance::Converted)
}

pub fn save(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(dataset)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an IQD v1 file. Provenance is reported as `Converted` since the
/// format does not record it.
pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
