//! Little-endian layout:
//!
//! ```text
//! magic "SFCU" | version u8 | client_id u32 | round u32 | bits u8 |
//! dim u32 | kept u32 | norm f32 | k records of (index:32, sign:1, code:bits-1)
//! ```
//!
//! Records are packed least-significant bit first and the stream is
//! zero-padded to a byte boundary.

use super::{BitWidth, CodecError, CompressedUpdate, QuantEntry};

pub const MAGIC: &[u8; 4] = b"SFCU";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 1 + 4 + 4 + 4;

/// Exact size of an encoded update with `kept` records.
pub fn encoded_len(kept: usize, bit_width: BitWidth) -> usize {
    HEADER_LEN + (kept * (32 + bit_width.bits() as usize)).div_ceil(8)
}

struct BitWriter {
    bytes: Vec<u8>,
    used: usize,
}

impl BitWriter {
    fn push(&mut self, value: u32, bits: usize) {
        for b in 0..bits {
            if self.used.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (value >> b) & 1 == 1 {
                *self.bytes.last_mut().unwrap() |= 1 << (self.used % 8);
            }
            self.used += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn take(&mut self, bits: usize) -> u32 {
        let mut v = 0u32;
        for b in 0..bits {
            let bit = (self.bytes[self.pos / 8] >> (self.pos % 8)) & 1;
            v |= u32::from(bit) << b;
            self.pos += 1;
        }
        v
    }
}

pub fn encode_wire(cu: &CompressedUpdate) -> Vec<u8> {
    let mut out = Vec::with_capacity(cu.wire_len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&cu.client_id.to_le_bytes());
    out.extend_from_slice(&cu.round.to_le_bytes());
    out.push(cu.bit_width.bits());
    out.extend_from_slice(&cu.dim.to_le_bytes());
    out.extend_from_slice(&(cu.entries.len() as u32).to_le_bytes());
    out.extend_from_slice(&cu.norm.to_le_bytes());
    let code_bits = cu.bit_width.bits() as usize - 1;
    let mut w = BitWriter {
        bytes: out,
        used: HEADER_LEN * 8,
    };
    for e in &cu.entries {
        w.push(e.index, 32);
        w.push(u32::from(e.negative), 1);
        w.push(e.code, code_bits);
    }
    w.bytes
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Parses one encoded update. Rejects anything but an exact,
/// well-formed stream.
pub fn decode_wire(bytes: &[u8]) -> Result<CompressedUpdate, CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated {
            need: HEADER_LEN,
            have: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(CodecError::Version(bytes[4]));
    }
    let client_id = u32_at(bytes, 5);
    let round = u32_at(bytes, 9);
    let bit_width = BitWidth::from_bits(bytes[13])?;
    let dim = u32_at(bytes, 14);
    let kept = u32_at(bytes, 18);
    let norm = f32::from_le_bytes(bytes[22..26].try_into().unwrap());
    if kept > dim {
        return Err(CodecError::KeptExceedsDim { k: kept, dim });
    }
    if !norm.is_finite() || norm < 0.0 {
        return Err(CodecError::Norm(norm));
    }
    let need = encoded_len(kept as usize, bit_width);
    if bytes.len() < need {
        return Err(CodecError::Truncated {
            need,
            have: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(CodecError::TrailingBytes(bytes.len() - need));
    }
    let code_bits = bit_width.bits() as usize - 1;
    let levels = bit_width.levels();
    let mut r = BitReader {
        bytes,
        pos: HEADER_LEN * 8,
    };
    let mut entries = Vec::with_capacity(kept as usize);
    let mut prev: Option<u32> = None;
    for _ in 0..kept {
        let index = r.take(32);
        let negative = r.take(1) == 1;
        let code = r.take(code_bits);
        if index >= dim || prev.is_some_and(|p| index <= p) {
            return Err(CodecError::Index { index, dim, prev });
        }
        if code > levels {
            return Err(CodecError::Code { code, max: levels });
        }
        prev = Some(index);
        entries.push(QuantEntry {
            index,
            negative,
            code,
        });
    }
    if r.pos < bytes.len() * 8 && r.take(bytes.len() * 8 - r.pos) != 0 {
        return Err(CodecError::Padding);
    }
    Ok(CompressedUpdate {
        client_id,
        round,
        bit_width,
        dim,
        norm,
        entries,
    })
}
