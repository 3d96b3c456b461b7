//! Flat checkpoint container: parameter-path strings mapped to shaped
//! little-endian `f64` payloads.
//!
//! Byte layout (all integers little-endian), version 1:
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"DCDPCKPT"
//! 8       4     format version (u32) = 1
//! 12      4     entry count (u32)
//! then per entry:
//!         2     name length (u16)
//!         n     name (utf-8)
//!         1     ndim (u8)
//!         4*d   dims (u32 each)
//!         8*k   data (f64, little-endian), k = product(dims)
//! ```
//!
//! The layout is stable across releases; readers must reject unknown
//! versions rather than guess.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

pub const CKPT_MAGIC: &[u8; 8] = b"DCDPCKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (expected {expected}, found {found})")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("truncated file while reading {0}")]
    Truncated(String),
    #[error("invalid utf-8 in entry name")]
    BadName,
    #[error("entry `{name}`: shape {shape:?} does not match payload length {len}")]
    ShapeMismatch { name: String, shape: Vec<usize>, len: usize },
    #[error("{0}")]
    Invalid(String),
}

/// One named tensor in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn serialize(entries: &[Entry]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(e.shape.len() as u8);
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn deserialize(bytes: &[u8]) -> Result<Vec<Entry>, FormatError> {
    let mut cur = io::Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(|_| FormatError::Truncated("magic".into()))?;
    if &magic != CKPT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(CKPT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let version = read_u32(&mut cur, "version")?;
    if version != CKPT_VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let count = read_u32(&mut cur, "entry count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut cur, "name length")? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name).map_err(|_| FormatError::Truncated("name".into()))?;
        let name = String::from_utf8(name).map_err(|_| FormatError::BadName)?;
        let mut nd = [0u8; 1];
        cur.read_exact(&mut nd).map_err(|_| FormatError::Truncated("ndim".into()))?;
        let mut shape = Vec::with_capacity(nd[0] as usize);
        for _ in 0..nd[0] {
            shape.push(read_u32(&mut cur, "dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            cur.read_exact(&mut b).map_err(|_| FormatError::Truncated(name.clone()))?;
            data.push(f64::from_le_bytes(b));
        }
        entries.push(Entry { name, shape, data });
    }
    Ok(entries)
}

pub fn save(path: &Path, entries: &[Entry]) -> Result<(), FormatError> {
    let bytes = serialize(entries);
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Entry>, FormatError> {
    let bytes = fs::read(path)?;
    deserialize(&bytes)
}

fn read_u32(cur: &mut io::Cursor<&[u8]>, what: &str) -> Result<u32, FormatError> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).map_err(|_| FormatError::Truncated(what.into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(cur: &mut io::Cursor<&[u8]>, what: &str) -> Result<u16, FormatError> {
    let mut b = [0u8; 2];
    cur.read_exact(&mut b).map_err(|_| FormatError::Truncated(what.into()))?;
    Ok(u16::from_le_bytes(b))
}

/// FNV-1a over the canonical serialization; used to assert parameters are
/// untouched across evaluation runs.
pub fn checksum(entries: &[Entry]) -> u64 {
    fnv1a(&serialize(entries))
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Entry> {
        vec![
            Entry { name: "a/w".into(), shape: vec![2, 3], data: vec![1.0, -2.5, 0.0, 3.25, 4.0, 5.5] },
            Entry { name: "a/b".into(), shape: vec![3], data: vec![0.1, 0.2, 0.3] },
        ]
    }

    #[test]
    fn round_trip() {
        let e = sample();
        let got = deserialize(&serialize(&e)).unwrap();
        assert_eq!(e, got);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = serialize(&sample());
        bytes[0] = b'X';
        match deserialize(&bytes) {
            Err(FormatError::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_error() {
        let bytes = serialize(&sample());
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(deserialize(cut), Err(FormatError::Truncated(_))));
    }

    #[test]
    fn version_bump_rejected() {
        let mut bytes = serialize(&sample());
        bytes[8] = 9;
        assert!(matches!(deserialize(&bytes), Err(FormatError::BadVersion(9))));
    }

    #[test]
    fn checksum_tracks_content() {
        let e = sample();
        let c1 = checksum(&e);
        let mut e2 = e.clone();
        e2[0].data[0] += 1e-9;
        assert_ne!(c1, checksum(&e2));
        assert_eq!(c1, checksum(&e));
    }
}
