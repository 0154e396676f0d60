//! Shared domain types: item identifiers, parameters, the lookup3 hash family
//! and the dictionary with its exact-membership oracle.

use std::collections::HashSet;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{PmtError, Result};

/// 128-bit opaque identifier for dictionary entries and queries.
///
/// Ordering is bytewise lexicographic. Numeric views (truncation) read the
/// bytes little-endian.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ItemId(pub [u8; 16]);

impl ItemId {
    pub const LEN: usize = 16;

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        ItemId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn to_u128_le(&self) -> u128 {
        u128::from_le_bytes(self.0)
    }

    pub fn from_u128_le(v: u128) -> Self {
        ItemId(v.to_le_bytes())
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 16];
        rng.fill_bytes(&mut b);
        ItemId(b)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 32 {
            return None;
        }
        let mut b = [0u8; 16];
        for (i, out) in b.iter_mut().enumerate() {
            *out = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
        }
        Some(ItemId(b))
    }
}

impl fmt::Debug for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ItemId({})", self.to_hex())
    }
}

/// Low-order `bits` bits of the little-endian reading of `x`.
pub fn truncate_hash(x: &ItemId, bits: u32) -> Result<u64> {
    if !(1..=64).contains(&bits) {
        return Err(PmtError::InvalidParams(format!(
            "truncation width {bits} outside 1..=64"
        )));
    }
    let v = x.to_u128_le() as u64;
    Ok(if bits == 64 { v } else { v & ((1u64 << bits) - 1) })
}

// --- lookup3 (Bob Jenkins, public domain), byte-order independent path ---

#[inline(always)]
fn mix(a: &mut u32, b: &mut u32, c: &mut u32) {
    *a = a.wrapping_sub(*c);
    *a ^= c.rotate_left(4);
    *c = c.wrapping_add(*b);
    *b = b.wrapping_sub(*a);
    *b ^= a.rotate_left(6);
    *a = a.wrapping_add(*c);
    *c = c.wrapping_sub(*b);
    *c ^= b.rotate_left(8);
    *b = b.wrapping_add(*a);
    *a = a.wrapping_sub(*c);
    *a ^= c.rotate_left(16);
    *c = c.wrapping_add(*b);
    *b = b.wrapping_sub(*a);
    *b ^= a.rotate_left(19);
    *a = a.wrapping_add(*c);
    *c = c.wrapping_sub(*b);
    *c ^= b.rotate_left(4);
    *b = b.wrapping_add(*a);
}

#[inline(always)]
fn final_mix(a: &mut u32, b: &mut u32, c: &mut u32) {
    *c ^= *b;
    *c = c.wrapping_sub(b.rotate_left(14));
    *a ^= *c;
    *a = a.wrapping_sub(c.rotate_left(11));
    *b ^= *a;
    *b = b.wrapping_sub(a.rotate_left(25));
    *c ^= *b;
    *c = c.wrapping_sub(b.rotate_left(16));
    *a ^= *c;
    *a = a.wrapping_sub(c.rotate_left(4));
    *b ^= *a;
    *b = b.wrapping_sub(a.rotate_left(14));
    *c ^= *b;
    *c = c.wrapping_sub(b.rotate_left(24));
}

#[inline(always)]
fn le_word(bytes: &[u8]) -> u32 {
    // Zero-extends short tails, matching the byte-wise switch in lookup3.c.
    let mut w = [0u8; 4];
    w[..bytes.len()].copy_from_slice(bytes);
    u32::from_le_bytes(w)
}

/// lookup3 `hashlittle2`: returns `(c, b)` for the given primary and
/// secondary seeds.
pub fn hashlittle2(key: &[u8], pc: u32, pb: u32) -> (u32, u32) {
    let init = 0xdead_beef_u32
        .wrapping_add(key.len() as u32)
        .wrapping_add(pc);
    let (mut a, mut b, mut c) = (init, init, init.wrapping_add(pb));

    let mut k = key;
    while k.len() > 12 {
        a = a.wrapping_add(le_word(&k[0..4]));
        b = b.wrapping_add(le_word(&k[4..8]));
        c = c.wrapping_add(le_word(&k[8..12]));
        mix(&mut a, &mut b, &mut c);
        k = &k[12..];
    }
    if k.is_empty() {
        return (c, b);
    }
    a = a.wrapping_add(le_word(&k[..k.len().min(4)]));
    if k.len() > 4 {
        b = b.wrapping_add(le_word(&k[4..k.len().min(8)]));
    }
    if k.len() > 8 {
        c = c.wrapping_add(le_word(&k[8..]));
    }
    final_mix(&mut a, &mut b, &mut c);
    (c, b)
}

/// lookup3 `hashlittle`.
pub fn hashlittle(key: &[u8], initval: u32) -> u32 {
    hashlittle2(key, initval, 0).0
}

/// How a 32-bit hash output is reduced to `[0, range)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RangeMap {
    /// `floor(h * range / 2^32)`
    #[default]
    MulShift,
    Modulo,
}

impl RangeMap {
    #[inline]
    pub fn map(self, h: u32, range: u64) -> u64 {
        debug_assert!(range >= 1 && range <= 1 << 32);
        match self {
            RangeMap::MulShift => ((h as u64) * range) >> 32,
            RangeMap::Modulo => (h as u64) % range,
        }
    }
}

/// Seeded lookup3 functions `H_0 .. H_{k-1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashFamily {
    pub seeds: Vec<u32>,
    pub range_map: RangeMap,
}

impl HashFamily {
    pub fn new(seeds: Vec<u32>, range_map: RangeMap) -> Self {
        HashFamily { seeds, range_map }
    }

    /// Draws `count` seeds from a ChaCha stream keyed by `seed`.
    pub fn from_seed(count: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6c6f_6f6b_7570_3321);
        let seeds = (0..count).map(|_| rng.next_u32()).collect();
        HashFamily::new(seeds, RangeMap::MulShift)
    }

    pub fn with_range_map(mut self, range_map: RangeMap) -> Self {
        self.range_map = range_map;
        self
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    #[inline]
    pub fn raw(&self, i: usize, x: &ItemId) -> u32 {
        hashlittle(x.as_bytes(), self.seeds[i])
    }

    /// `H_i(x)` reduced to `[0, range)`.
    #[inline]
    pub fn index(&self, i: usize, x: &ItemId, range: u64) -> u64 {
        self.range_map.map(self.raw(i, x), range)
    }
}

/// Public parameters of a membership-test deployment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PmtParams {
    pub n: usize,
    /// False-positive target is `2^-epsilon`.
    pub epsilon: u32,
    pub bloom_l: u32,
    pub chunk_bytes: usize,
    pub page_bytes: usize,
}

impl PmtParams {
    pub const DEFAULT_EPSILON: u32 = 10;
    pub const DEFAULT_BLOOM_L: u32 = 10;
    pub const DEFAULT_CHUNK_BYTES: usize = 1 << 20;
    pub const DEFAULT_PAGE_BYTES: usize = 4096;

    pub fn new(n: usize) -> Self {
        PmtParams {
            n,
            epsilon: Self::DEFAULT_EPSILON,
            bloom_l: Self::DEFAULT_BLOOM_L,
            chunk_bytes: Self::DEFAULT_CHUNK_BYTES,
            page_bytes: Self::DEFAULT_PAGE_BYTES,
        }
    }

    /// Sets `epsilon` and the Bloom hash count to its optimum (`l = epsilon`).
    pub fn with_epsilon(mut self, epsilon: u32) -> Self {
        self.epsilon = epsilon;
        self.bloom_l = epsilon;
        self
    }

    pub fn with_chunk_bytes(mut self, chunk_bytes: usize) -> Self {
        self.chunk_bytes = chunk_bytes;
        self
    }

    pub fn with_page_bytes(mut self, page_bytes: usize) -> Self {
        self.page_bytes = page_bytes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PmtError::InvalidParams(m));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(1..=30).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside 1..=30", self.epsilon));
        }
        if self.bloom_l == 0 {
            return bad("bloom_l must be at least 1".into());
        }
        if self.page_bytes < 64 || self.chunk_bytes < self.page_bytes {
            return bad(format!(
                "need chunk_bytes ({}) >= page_bytes ({}) >= 64",
                self.chunk_bytes, self.page_bytes
            ));
        }
        Ok(())
    }
}

/// `ceil(log2(n))`, with `ceil_log2(1) == 0`.
pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// A set of distinct item identifiers plus the seed that produced it.
#[derive(Clone, Debug)]
pub struct Dictionary {
    entries: Vec<ItemId>,
    index: HashSet<ItemId>,
    pub provenance: u64,
}

impl Dictionary {
    /// Builds a dictionary, dropping repeated ids.
    pub fn from_entries<I: IntoIterator<Item = ItemId>>(items: I, provenance: u64) -> Self {
        let mut index = HashSet::new();
        let mut entries = Vec::new();
        for it in items {
            if index.insert(it) {
                entries.push(it);
            }
        }
        Dictionary {
            entries,
            index,
            provenance,
        }
    }

    pub fn entries(&self) -> &[ItemId] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, q: &ItemId) -> bool {
        self.index.contains(q)
    }

    /// Draws a fresh random id that is not in the dictionary.
    pub fn random_non_member<R: RngCore + ?Sized>(&self, rng: &mut R) -> ItemId {
        loop {
            let q = ItemId::random(rng);
            if !self.contains(&q) {
                return q;
            }
        }
    }
}

/// `n` distinct uniformly random ids from a ChaCha20 stream seeded with `seed`.
pub fn generate_dictionary(n: usize, seed: u64) -> Dictionary {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut index = HashSet::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    while entries.len() < n {
        let id = ItemId::random(&mut rng);
        if index.insert(id) {
            entries.push(id);
        }
    }
    Dictionary {
        entries,
        index,
        provenance: seed,
    }
}

/// Ground-truth exact membership.
pub fn oracle_member(dict: &Dictionary, q: &ItemId) -> bool {
    dict.contains(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup3_reference_vectors() {
        // Values printed by driver5() in lookup3.c.
        assert_eq!(hashlittle2(b"", 0, 0), (0xdeadbeef, 0xdeadbeef));
        assert_eq!(hashlittle2(b"", 0, 0xdeadbeef), (0xbd5b7dde, 0xdeadbeef));
        assert_eq!(
            hashlittle2(b"", 0xdeadbeef, 0xdeadbeef),
            (0x9c093ccd, 0xbd5b7dde)
        );
        let s = b"Four score and seven years ago";
        assert_eq!(hashlittle2(s, 0, 0), (0x17770551, 0xce7226e6));
        assert_eq!(hashlittle2(s, 0, 1), (0xe3607cae, 0xbd371de4));
        assert_eq!(hashlittle2(s, 1, 0), (0xcd628161, 0x6cbea4b3));
        assert_eq!(hashlittle(s, 0), 0x17770551);
        assert_eq!(hashlittle(s, 1), 0xcd628161);
    }

    #[test]
    fn hash_is_deterministic() {
        let fam = HashFamily::from_seed(4, 99);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let x = ItemId::random(&mut rng);
            for i in 0..4 {
                assert_eq!(fam.raw(i, &x), fam.raw(i, &x));
            }
        }
        assert_eq!(fam, HashFamily::from_seed(4, 99));
    }

    #[test]
    fn range_maps_stay_in_range() {
        for r in [1u64, 2, 7, 1000, 1 << 31, 1 << 32] {
            for h in [0u32, 1, 12345, u32::MAX] {
                assert!(RangeMap::MulShift.map(h, r) < r);
                assert!(RangeMap::Modulo.map(h, r) < r);
            }
        }
        assert_eq!(RangeMap::MulShift.map(u32::MAX, 10), 9);
        assert_eq!(RangeMap::MulShift.map(1 << 31, 10), 5);
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_hash(&ItemId::default(), 36).unwrap(), 0);
        let mut b = [0xabu8; 16];
        b[0] = 0x01;
        b[1] = 0x00;
        assert_eq!(truncate_hash(&ItemId(b), 16).unwrap(), 1);
        assert!(truncate_hash(&ItemId(b), 0).is_err());
        assert!(truncate_hash(&ItemId(b), 65).is_err());
        assert_eq!(truncate_hash(&ItemId(b), 64).unwrap(), u64::from_le_bytes(b[..8].try_into().unwrap()));
    }

    #[test]
    fn truncation_matches_bit_slice_oracle() {
        // Independent oracle: assemble bit j from byte j/8, bit j%8.
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = ItemId::random(&mut rng);
            let mut want = 0u64;
            for j in 0..36 {
                let bit = (x.0[j / 8] >> (j % 8)) & 1;
                want |= (bit as u64) << j;
            }
            assert_eq!(truncate_hash(&x, 36).unwrap(), want);
        }
    }

    #[test]
    fn truncation_is_roughly_uniform() {
        // Chi-square over 256 buckets, 255 dof; the 1e-6 upper critical value is ~398.
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut buckets = [0u64; 256];
        let draws = 100_000;
        for _ in 0..draws {
            let x = ItemId::random(&mut rng);
            buckets[truncate_hash(&x, 8).unwrap() as usize] += 1;
        }
        let expect = draws as f64 / 256.0;
        let chi2: f64 = buckets
            .iter()
            .map(|&o| (o as f64 - expect).powi(2) / expect)
            .sum();
        assert!(chi2 < 398.0, "chi2 = {chi2}");
    }

    #[test]
    fn dictionary_generation() {
        let a = generate_dictionary(1, 0);
        let b = generate_dictionary(1, 0);
        assert_eq!(a.entries(), b.entries());
        assert_eq!(a.len(), 1);

        let d = generate_dictionary(1 << 16, 7);
        let distinct: HashSet<_> = d.entries().iter().collect();
        assert_eq!(distinct.len(), 1 << 16);
        for e in d.entries().iter().take(100) {
            assert!(oracle_member(&d, e));
        }
    }

    #[test]
    fn oracle_on_empty_and_fresh() {
        let empty = Dictionary::from_entries(Vec::new(), 0);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(!oracle_member(&empty, &ItemId::random(&mut rng)));
        let d = generate_dictionary(100, 1);
        let q = d.random_non_member(&mut rng);
        assert!(!oracle_member(&d, &q));
    }

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(500), 9);
        assert_eq!(ceil_log2(1 << 20), 20);
    }

    #[test]
    fn params_validation() {
        assert!(PmtParams::new(1).validate().is_ok());
        assert!(PmtParams::new(0).validate().is_err());
        assert!(PmtParams::new(8).with_page_bytes(32).validate().is_err());
        assert!(PmtParams::new(8)
            .with_chunk_bytes(4096)
            .with_page_bytes(8192)
            .validate()
            .is_err());
        let p = PmtParams::new(8).with_epsilon(14);
        assert_eq!((p.epsilon, p.bloom_l), (14, 14));
    }
}
