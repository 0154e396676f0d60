//! Dictionary representations cycled through the trusted application:
//! sequence of differences, Bloom filter and 4-ary cuckoo table.

mod bloom;
pub mod codec;
mod cuckoo;
pub mod fpr;
mod seqdiff;

use std::fmt;
use std::str::FromStr;

use crate::bitpack::read_field;
use crate::crypto::{mac16, mac16_verify};
use crate::error::{PmtError, Result};
use crate::keys::ProviderKey;
use crate::model::{hashlittle2, truncate_hash, Dictionary, HashFamily, ItemId, PmtParams, RangeMap};

pub use bloom::{bloom_bit_count, build_bloom};
pub use cuckoo::{build_cuckoo4, build_cuckoo4_with_rehash, cuckoo_quarter, cuckoo_slot_count};
pub use seqdiff::{build_seqdiff, decode_differences, encode_differences};

#[repr(u8)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReprKind {
    SeqDiff = 1,
    Bloom = 2,
    Cuckoo4 = 3,
}

impl ReprKind {
    pub const ALL: [ReprKind; 3] = [ReprKind::SeqDiff, ReprKind::Bloom, ReprKind::Cuckoo4];

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(ReprKind::SeqDiff),
            2 => Ok(ReprKind::Bloom),
            3 => Ok(ReprKind::Cuckoo4),
            t => Err(PmtError::BadKind(t)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReprKind::SeqDiff => "seqdiff",
            ReprKind::Bloom => "bloom",
            ReprKind::Cuckoo4 => "cuckoo",
        }
    }
}

impl fmt::Display for ReprKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReprKind {
    type Err = PmtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seqdiff" => Ok(ReprKind::SeqDiff),
            "bloom" => Ok(ReprKind::Bloom),
            "cuckoo" | "cuckoo4" => Ok(ReprKind::Cuckoo4),
            other => Err(PmtError::InvalidParams(format!("unknown kind {other:?}"))),
        }
    }
}

/// How sequence-of-differences values are derived from an item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SeqDiffMode {
    /// Low-order bits of the id.
    #[default]
    Truncate,
    /// Low-order bits of a seeded 64-bit lookup3 digest.
    Hash,
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub seed: u64,
    /// Cuckoo only: each hash function maps into its own quarter of the table.
    pub partitioned: bool,
    pub range_map: RangeMap,
    pub seqdiff_mode: SeqDiffMode,
    pub max_kicks: usize,
    pub stash_capacity: usize,
    /// Full rebuilds with fresh seeds attempted after a stash overflow.
    pub max_rehash: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            seed: 0,
            partitioned: false,
            range_map: RangeMap::MulShift,
            seqdiff_mode: SeqDiffMode::Truncate,
            max_kicks: 5000,
            stash_capacity: CuckooStash::DEFAULT_CAPACITY,
            max_rehash: 8,
        }
    }
}

impl BuildOptions {
    pub fn seeded(seed: u64) -> Self {
        BuildOptions {
            seed,
            ..Default::default()
        }
    }

    pub fn partitioned(mut self, yes: bool) -> Self {
        self.partitioned = yes;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StashEntry {
    pub slots: [u64; 4],
    pub fingerprint: u32,
}

/// Constant-capacity overflow area for cuckoo entries that could not be placed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CuckooStash {
    pub entries: Vec<StashEntry>,
    pub capacity: usize,
}

impl CuckooStash {
    pub const DEFAULT_CAPACITY: usize = 16;

    pub fn empty(capacity: usize) -> Self {
        CuckooStash {
            entries: Vec::new(),
            capacity,
        }
    }

    pub fn contains(&self, slots: &[u64; 4], fingerprint: u32) -> bool {
        self.entries
            .iter()
            .any(|e| e.fingerprint == fingerprint && &e.slots == slots)
    }
}

/// A packed dictionary representation `Y` plus the metadata needed to query it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DictRepresentation {
    pub kind: ReprKind,
    /// The bytes cycled through the TA.
    pub payload: Vec<u8>,
    pub n: u64,
    /// SeqDiff: fields incl. dummies. Bloom: bit count. Cuckoo: slot count.
    pub n_prime: u64,
    pub epsilon: u32,
    /// Bits per entry of `payload` (1 for Bloom).
    pub item_bits: u32,
    pub hashes: HashFamily,
    pub partitioned: bool,
    /// SeqDiff: the first field is a literal zero value rather than a dummy.
    pub leading_zero_value: bool,
    pub seqdiff_mode: SeqDiffMode,
    pub stash: CuckooStash,
    pub mac: [u8; 16],
}

impl DictRepresentation {
    /// Width of SeqDiff values, `epsilon + ceil(log2 n)`.
    pub fn value_bits(&self) -> u32 {
        seqdiff::value_bits(self.epsilon, self.n as usize)
    }

    /// Largest SeqDiff field value, `2^(epsilon+2) - 1`; zero fields add this.
    pub fn max_step(&self) -> u64 {
        (1u64 << self.item_bits) - 1
    }

    /// Number of processing units in `payload`: fields, or bytes for Bloom.
    pub fn entry_count(&self) -> usize {
        match self.kind {
            ReprKind::Bloom => self.payload.len(),
            _ => self.n_prime as usize,
        }
    }

    /// Bits per processing unit.
    pub fn entry_bits(&self) -> u32 {
        match self.kind {
            ReprKind::Bloom => 8,
            _ => self.item_bits,
        }
    }

    #[inline]
    pub fn entry(&self, i: usize) -> u64 {
        match self.kind {
            ReprKind::Bloom => self.payload[i] as u64,
            _ => read_field(&self.payload, i, self.item_bits),
        }
    }

    pub fn seqdiff_value(&self, q: &ItemId) -> u64 {
        let bits = self.value_bits();
        match self.seqdiff_mode {
            SeqDiffMode::Truncate => truncate_hash(q, bits).expect("value width in range"),
            SeqDiffMode::Hash => {
                let (c, b) = hashlittle2(q.as_bytes(), self.hashes.seeds[0], 0);
                let v = ((b as u64) << 32) | c as u64;
                if bits == 64 {
                    v
                } else {
                    v & ((1u64 << bits) - 1)
                }
            }
        }
    }

    /// Bloom bit positions `H_i(q)`, one per hash function.
    pub fn bloom_positions(&self, q: &ItemId) -> Vec<u64> {
        (0..self.hashes.len())
            .map(|i| self.hashes.index(i, q, self.n_prime))
            .collect()
    }

    /// Start and length of the table region hash `i` maps into.
    pub fn cuckoo_region(&self, i: usize) -> (u64, u64) {
        cuckoo::region(self.n_prime, self.partitioned, i)
    }

    pub fn cuckoo_slots(&self, q: &ItemId) -> [u64; 4] {
        let mut s = [0u64; 4];
        for (i, out) in s.iter_mut().enumerate() {
            let (start, len) = self.cuckoo_region(i);
            *out = start + self.hashes.index(i, q, len);
        }
        s
    }

    pub fn cuckoo_fingerprint(&self, q: &ItemId) -> u32 {
        cuckoo::fingerprint(q, self.item_bits)
    }

    /// Number of zero (dummy) fields in a SeqDiff payload.
    pub fn dummy_count(&self) -> usize {
        if self.kind != ReprKind::SeqDiff {
            return 0;
        }
        let zeros = (0..self.n_prime as usize)
            .filter(|&i| read_field(&self.payload, i, self.item_bits) == 0)
            .count();
        zeros - self.leading_zero_value as usize
    }

    fn mac_input(&self) -> (Vec<u8>, Vec<u8>) {
        (codec::header_bytes(self), codec::trailer_bytes(self))
    }

    /// Computes and stores the provider MAC.
    pub fn seal(&mut self, key: &ProviderKey) {
        let (head, tail) = self.mac_input();
        self.mac = mac16(&key.0, &[&head, &self.payload, &tail]);
    }

    pub fn sealed(mut self, key: &ProviderKey) -> Self {
        self.seal(key);
        self
    }

    pub fn verify(&self, key: &ProviderKey) -> Result<()> {
        let (head, tail) = self.mac_input();
        if mac16_verify(&key.0, &[&head, &self.payload, &tail], &self.mac) {
            Ok(())
        } else {
            Err(PmtError::MacMismatch)
        }
    }
}

/// Builds any representation; cuckoo builds rehash on stash overflow.
pub fn build(
    kind: ReprKind,
    dict: &Dictionary,
    params: &PmtParams,
    opts: &BuildOptions,
) -> Result<DictRepresentation> {
    match kind {
        ReprKind::SeqDiff => build_seqdiff(dict, params, opts),
        ReprKind::Bloom => build_bloom(dict, params, opts),
        ReprKind::Cuckoo4 => build_cuckoo4_with_rehash(dict, params, opts),
    }
}

/// Non-oblivious lookup directly against a representation. Serves as the
/// reference the carousel responses are checked against.
pub struct DirectProbe<'a> {
    repr: &'a DictRepresentation,
    values: Vec<u64>,
    slots: Vec<u32>,
}

impl<'a> DirectProbe<'a> {
    pub fn new(repr: &'a DictRepresentation) -> Self {
        let (values, slots) = match repr.kind {
            ReprKind::SeqDiff => {
                let fields = crate::bitpack::unpack_fields(&repr.payload, repr.n_prime as usize, repr.item_bits);
                (decode_differences(&fields, repr.item_bits, repr.leading_zero_value), Vec::new())
            }
            ReprKind::Cuckoo4 => (
                Vec::new(),
                (0..repr.n_prime as usize)
                    .map(|i| read_field(&repr.payload, i, repr.item_bits) as u32)
                    .collect(),
            ),
            ReprKind::Bloom => (Vec::new(), Vec::new()),
        };
        DirectProbe { repr, values, slots }
    }

    /// Decoded sorted SeqDiff values (empty for other kinds).
    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn probe(&self, q: &ItemId) -> bool {
        let r = self.repr;
        match r.kind {
            ReprKind::SeqDiff => self.values.binary_search(&r.seqdiff_value(q)).is_ok(),
            ReprKind::Bloom => r
                .bloom_positions(q)
                .iter()
                .all(|&p| (r.payload[(p / 8) as usize] >> (p % 8)) & 1 == 1),
            ReprKind::Cuckoo4 => {
                let fp = r.cuckoo_fingerprint(q);
                let slots = r.cuckoo_slots(q);
                slots.iter().any(|&s| self.slots[s as usize] == fp) || r.stash.contains(&slots, fp)
            }
        }
    }
}
