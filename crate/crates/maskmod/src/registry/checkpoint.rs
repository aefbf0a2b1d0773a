//! Binary checkpoint container.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic      b"MTMK"
//! version    u16 = 1
//! kind       u8   (0 = baseline, 1 = task)
//! desc_len   u32, then desc_len bytes of canonical JSON descriptor
//! entries    repeated until 32 bytes remain:
//!   name_len u32, name bytes (UTF-8)
//!   dtype    u8   (0 = f32 array, 1 = bit-packed mask)
//!   rank     u8
//!   extents  u32 × rank
//!   payload  f32 × prod(extents)   |  ceil(prod/8) bytes, LSB-first
//! digest     32 bytes: SHA-256 of everything before it
//! ```

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub const MAGIC: [u8; 4] = *b"MTMK";
pub const VERSION: u16 = 1;
pub const KIND_BASELINE: u8 = 0;
pub const KIND_TASK: u8 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_BITS: u8 = 1;

/// One named array in a container.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    Bits(BinaryMask),
}

impl Entry {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Entry {
            name: name.into(),
            payload: Payload::F32 { shape, data },
        }
    }

    pub fn bits(name: impl Into<String>, mask: BinaryMask) -> Self {
        Entry {
            name: name.into(),
            payload: Payload::Bits(mask),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match &self.payload {
            Payload::F32 { shape, .. } => shape,
            Payload::Bits(m) => m.shape(),
        }
    }

    /// Size of the raw payload region in bytes.
    pub fn payload_bytes(&self) -> usize {
        match &self.payload {
            Payload::F32 { data, .. } => 4 * data.len(),
            Payload::Bits(m) => m.packed_bytes().len(),
        }
    }
}

pub fn serialize(kind: u8, descriptor_json: &str, entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind);
    let desc = descriptor_json.as_bytes();
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(desc);
    for entry in entries {
        let name = entry.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        match &entry.payload {
            Payload::F32 { shape, data } => {
                out.push(DTYPE_F32);
                out.push(shape.len() as u8);
                for &e in shape {
                    out.extend_from_slice(&(e as u32).to_le_bytes());
                }
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::Bits(mask) => {
                out.push(DTYPE_BITS);
                out.push(mask.shape().len() as u8);
                for &e in mask.shape() {
                    out.extend_from_slice(&(e as u32).to_le_bytes());
                }
                out.extend_from_slice(mask.packed_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                msg: format!("{what}: need {n} bytes at offset {}", self.pos),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Parses and digest-verifies a container, returning `(kind, descriptor,
/// entries)`.
pub fn deserialize(bytes: &[u8], expected_kind: Option<u8>) -> Result<(u8, String, Vec<Entry>)> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated {
            msg: "file shorter than magic".into(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            found: [bytes[0], bytes[1], bytes[2], bytes[3]],
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::BadVersion {
            found: version,
            expected: VERSION,
        });
    }
    let kind = r.u8("kind")?;
    if let Some(expected) = expected_kind {
        if kind != expected {
            return Err(Error::WrongKind {
                found: kind,
                expected,
            });
        }
    }
    if bytes.len() < r.pos + 32 {
        return Err(Error::Truncated {
            msg: "file shorter than header plus digest".into(),
        });
    }
    // Bound all further reads to the body so a short file surfaces as
    // truncation; the digest is verified once the structure parses.
    let body_end = bytes.len() - 32;
    r.bytes = &bytes[..body_end];

    let desc_len = r.u32("descriptor length")? as usize;
    let desc = std::str::from_utf8(r.take(desc_len, "descriptor")?)
        .map_err(|_| Error::Truncated {
            msg: "descriptor is not valid UTF-8".into(),
        })?
        .to_string();

    let mut entries = Vec::new();
    while r.pos < body_end {
        let name_len = r.u32("entry name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "entry name")?)
            .map_err(|_| Error::Truncated {
                msg: "entry name is not valid UTF-8".into(),
            })?
            .to_string();
        let dtype = r.u8("dtype")?;
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        // Corrupt extents must surface as errors, not arithmetic overflow.
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&n| n.checked_mul(4).is_some())
            .ok_or_else(|| Error::Truncated {
                msg: format!("entry `{name}` declares an impossible element count"),
            })?;
        let payload = match dtype {
            DTYPE_F32 => {
                let raw = r.take(4 * numel, &format!("payload of `{name}`"))?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                Payload::F32 { shape, data }
            }
            DTYPE_BITS => {
                let raw = r.take(numel.div_ceil(8), &format!("mask payload of `{name}`"))?;
                Payload::Bits(BinaryMask::from_packed(shape, raw.to_vec())?)
            }
            other => {
                return Err(Error::Truncated {
                    msg: format!("unknown dtype tag {other} in entry `{name}`"),
                })
            }
        };
        entries.push(Entry { name, payload });
    }

    let digest = Sha256::digest(&bytes[..body_end]);
    if digest.as_slice() != &bytes[body_end..] {
        return Err(Error::DigestMismatch {
            msg: "stored digest does not match file contents".into(),
        });
    }
    Ok((kind, desc, entries))
}

/// SHA-256 over a whole serialized container (including its stored digest).
pub fn file_digest(bytes: &[u8]) -> [u8; 32] {
    let d = Sha256::digest(bytes);
    let mut out = [0u8; 32];
    out.copy_from_slice(&d);
    out
}
