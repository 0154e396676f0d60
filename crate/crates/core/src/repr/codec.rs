//! On-disk format of a sealed representation.
//!
//! ```text
//! "CPMT" | u16 version | u8 kind | u64 n | u64 n_prime | u16 epsilon
//! | u8 item_bits | u8 seed_count | seed_count x u32 | u8 flags | [u8; 16] mac
//! payload (bit-packed fields)
//! cuckoo only: u16 capacity | u16 count | count x (4 x u64 slot, u32 fingerprint)
//! ```
//!
//! All integers are little-endian. The MAC covers everything except itself.

use std::io::{Read, Write};

use crate::bitpack::packed_len;
use crate::error::{PmtError, Result};
use crate::keys::ProviderKey;
use crate::model::{HashFamily, RangeMap};

use super::{CuckooStash, DictRepresentation, ReprKind, SeqDiffMode, StashEntry};

pub const MAGIC: &[u8; 4] = b"CPMT";
pub const VERSION: u16 = 1;

const FLAG_PARTITIONED: u8 = 1;
const FLAG_LEADING_ZERO: u8 = 1 << 1;
const FLAG_MODULO: u8 = 1 << 2;
const FLAG_HASHED_VALUES: u8 = 1 << 3;

fn flags(r: &DictRepresentation) -> u8 {
    let mut f = 0;
    if r.partitioned {
        f |= FLAG_PARTITIONED;
    }
    if r.leading_zero_value {
        f |= FLAG_LEADING_ZERO;
    }
    if r.hashes.range_map == RangeMap::Modulo {
        f |= FLAG_MODULO;
    }
    if r.seqdiff_mode == SeqDiffMode::Hash {
        f |= FLAG_HASHED_VALUES;
    }
    f
}

/// Header up to but excluding the MAC.
pub fn header_bytes(r: &DictRepresentation) -> Vec<u8> {
    let mut h = Vec::with_capacity(32 + 4 * r.hashes.len());
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&VERSION.to_le_bytes());
    h.push(r.kind as u8);
    h.extend_from_slice(&r.n.to_le_bytes());
    h.extend_from_slice(&r.n_prime.to_le_bytes());
    h.extend_from_slice(&(r.epsilon as u16).to_le_bytes());
    h.push(r.item_bits as u8);
    h.push(r.hashes.len() as u8);
    for s in &r.hashes.seeds {
        h.extend_from_slice(&s.to_le_bytes());
    }
    h.push(flags(r));
    h
}

/// Stash section following the payload; empty for non-cuckoo kinds.
pub fn trailer_bytes(r: &DictRepresentation) -> Vec<u8> {
    if r.kind != ReprKind::Cuckoo4 {
        return Vec::new();
    }
    let mut t = Vec::with_capacity(4 + 36 * r.stash.entries.len());
    t.extend_from_slice(&(r.stash.capacity as u16).to_le_bytes());
    t.extend_from_slice(&(r.stash.entries.len() as u16).to_le_bytes());
    for e in &r.stash.entries {
        for s in e.slots {
            t.extend_from_slice(&s.to_le_bytes());
        }
        t.extend_from_slice(&e.fingerprint.to_le_bytes());
    }
    t
}

/// Length of the payload implied by the header fields.
pub fn payload_len(kind: ReprKind, n_prime: u64, item_bits: u32) -> usize {
    match kind {
        ReprKind::Bloom => n_prime.div_ceil(8) as usize,
        _ => packed_len(n_prime as usize, item_bits),
    }
}

pub fn to_bytes(r: &DictRepresentation) -> Vec<u8> {
    let mut out = header_bytes(r);
    out.extend_from_slice(&r.mac);
    out.extend_from_slice(&r.payload);
    out.extend_from_slice(&trailer_bytes(r));
    out
}

pub fn serialize<W: Write>(r: &DictRepresentation, mut out: W) -> Result<()> {
    out.write_all(&to_bytes(r))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.buf.len() {
            return Err(PmtError::TruncatedPayload {
                expected: self.pos + len,
                actual: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses without checking the MAC.
pub fn from_bytes_unverified(buf: &[u8]) -> Result<DictRepresentation> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(PmtError::BadMagic);
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(PmtError::BadVersion(version));
    }
    let kind = ReprKind::from_tag(c.u8()?)?;
    let n = c.u64()?;
    let n_prime = c.u64()?;
    let epsilon = c.u16()? as u32;
    let item_bits = c.u8()? as u32;
    if item_bits == 0 || item_bits > 57 {
        return Err(PmtError::InvalidParams(format!("item_bits {item_bits}")));
    }
    let seed_count = c.u8()? as usize;
    let seeds = (0..seed_count).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let f = c.u8()?;
    let mac: [u8; 16] = c.take(16)?.try_into().unwrap();
    let payload = c.take(payload_len(kind, n_prime, item_bits))?.to_vec();
    let stash = if kind == ReprKind::Cuckoo4 {
        let capacity = c.u16()? as usize;
        let count = c.u16()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let mut slots = [0u64; 4];
            for s in &mut slots {
                *s = c.u64()?;
            }
            entries.push(StashEntry {
                slots,
                fingerprint: c.u32()?,
            });
        }
        CuckooStash { entries, capacity }
    } else {
        CuckooStash::empty(0)
    };
    let range_map = if f & FLAG_MODULO != 0 {
        RangeMap::Modulo
    } else {
        RangeMap::MulShift
    };
    Ok(DictRepresentation {
        kind,
        payload,
        n,
        n_prime,
        epsilon,
        item_bits,
        hashes: HashFamily::new(seeds, range_map),
        partitioned: f & FLAG_PARTITIONED != 0,
        leading_zero_value: f & FLAG_LEADING_ZERO != 0,
        seqdiff_mode: if f & FLAG_HASHED_VALUES != 0 {
            SeqDiffMode::Hash
        } else {
            SeqDiffMode::Truncate
        },
        stash,
        mac,
    })
}

/// Parses and authenticates a sealed representation.
pub fn from_bytes(buf: &[u8], key: &ProviderKey) -> Result<DictRepresentation> {
    let r = from_bytes_unverified(buf)?;
    r.verify(key)?;
    Ok(r)
}

pub fn deserialize<R: Read>(mut input: R, key: &ProviderKey) -> Result<DictRepresentation> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    from_bytes(&buf, key)
}
