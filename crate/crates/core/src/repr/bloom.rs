use crate::error::{PmtError, Result};
use crate::model::{Dictionary, HashFamily, PmtParams};

use super::{BuildOptions, CuckooStash, DictRepresentation, ReprKind, SeqDiffMode};

/// `round(1.44 * epsilon * n)`, at least one bit.
pub fn bloom_bit_count(n: usize, epsilon: u32) -> u64 {
    ((1.44 * epsilon as f64 * n as f64).round() as u64).max(1)
}

pub fn build_bloom(
    dict: &Dictionary,
    params: &PmtParams,
    opts: &BuildOptions,
) -> Result<DictRepresentation> {
    params.validate()?;
    let bits = bloom_bit_count(params.n, params.epsilon);
    build_bloom_sized(dict, params, opts, bits)
}

/// Bloom filter with an explicit bit count; `params.n` is only recorded.
pub(crate) fn build_bloom_sized(
    dict: &Dictionary,
    params: &PmtParams,
    opts: &BuildOptions,
    bits: u64,
) -> Result<DictRepresentation> {
    if params.bloom_l == 0 || bits == 0 {
        return Err(PmtError::InvalidParams("bloom needs l >= 1 and N >= 1".into()));
    }
    let hashes = HashFamily::from_seed(params.bloom_l as usize, opts.seed)
        .with_range_map(opts.range_map);
    let mut payload = vec![0u8; bits.div_ceil(8) as usize];
    for x in dict.entries() {
        for i in 0..hashes.len() {
            let p = hashes.index(i, x, bits);
            payload[(p / 8) as usize] |= 1 << (p % 8);
        }
    }
    Ok(DictRepresentation {
        kind: ReprKind::Bloom,
        payload,
        n: params.n as u64,
        n_prime: bits,
        epsilon: params.epsilon,
        item_bits: 1,
        hashes,
        partitioned: false,
        leading_zero_value: false,
        seqdiff_mode: SeqDiffMode::Truncate,
        stash: CuckooStash::empty(0),
        mac: [0; 16],
    })
}
