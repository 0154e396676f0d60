use crate::bitpack::pack_fields;
use crate::error::Result;
use crate::model::{ceil_log2, Dictionary, HashFamily, PmtParams};

use super::{BuildOptions, CuckooStash, DictRepresentation, ReprKind, SeqDiffMode};

pub(super) fn value_bits(epsilon: u32, n: usize) -> u32 {
    (epsilon + ceil_log2(n as u64)).min(64)
}

/// Encodes strictly increasing `values` as `width`-bit difference fields.
///
/// A gap `d` becomes `p` zero fields followed by `b`, where
/// `d = p * (2^width - 1) + b` and `1 <= b <= 2^width - 1`. A leading value of
/// zero is written as a single literal zero field; the returned flag records it.
pub fn encode_differences(values: &[u64], width: u32) -> (Vec<u64>, bool) {
    let max = (1u64 << width) - 1;
    let mut fields = Vec::with_capacity(values.len() + values.len() / 32 + 1);
    let mut leading_zero = false;
    let mut prev = 0u64;
    for (i, &v) in values.iter().enumerate() {
        let d = v - prev;
        if i == 0 && d == 0 {
            fields.push(0);
            leading_zero = true;
        } else {
            debug_assert!(d > 0, "values must be strictly increasing");
            let p = (d - 1) / max;
            fields.extend(std::iter::repeat_n(0, p as usize));
            fields.push(d - p * max);
        }
        prev = v;
    }
    (fields, leading_zero)
}

/// Inverse of [`encode_differences`].
pub fn decode_differences(fields: &[u64], width: u32, leading_zero: bool) -> Vec<u64> {
    let max = (1u64 << width) - 1;
    let mut out = Vec::with_capacity(fields.len());
    let mut h = 0u64;
    for (i, &f) in fields.iter().enumerate() {
        if i == 0 && leading_zero {
            out.push(0);
        } else if f == 0 {
            h += max;
        } else {
            h += f;
            out.push(h);
        }
    }
    out
}

pub fn build_seqdiff(
    dict: &Dictionary,
    params: &PmtParams,
    opts: &BuildOptions,
) -> Result<DictRepresentation> {
    params.validate()?;
    let width = params.epsilon + 2;
    let seeds = match opts.seqdiff_mode {
        SeqDiffMode::Truncate => Vec::new(),
        SeqDiffMode::Hash => HashFamily::from_seed(1, opts.seed).seeds,
    };
    let mut repr = DictRepresentation {
        kind: ReprKind::SeqDiff,
        payload: Vec::new(),
        n: params.n as u64,
        n_prime: 0,
        epsilon: params.epsilon,
        item_bits: width,
        hashes: HashFamily::new(seeds, opts.range_map),
        partitioned: false,
        leading_zero_value: false,
        seqdiff_mode: opts.seqdiff_mode,
        stash: CuckooStash::empty(0),
        mac: [0; 16],
    };
    let mut values: Vec<u64> = dict.entries().iter().map(|x| repr.seqdiff_value(x)).collect();
    values.sort_unstable();
    values.dedup();
    let (fields, leading_zero) = encode_differences(&values, width);
    repr.n_prime = fields.len() as u64;
    repr.payload = pack_fields(&fields, width);
    repr.leading_zero_value = leading_zero;
    Ok(repr)
}
