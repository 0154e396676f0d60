use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::bitpack::pack_fields;
use crate::error::{PmtError, Result};
use crate::model::{truncate_hash, Dictionary, HashFamily, ItemId, PmtParams};

use super::{BuildOptions, CuckooStash, DictRepresentation, ReprKind, SeqDiffMode, StashEntry};

const EMPTY: u32 = u32::MAX;

/// `ceil(1.03 * n)` slots.
pub fn cuckoo_slot_count(n: usize) -> u64 {
    (103 * n as u64).div_ceil(100)
}

pub(super) fn region(slots: u64, partitioned: bool, i: usize) -> (u64, u64) {
    if partitioned {
        let lo = i as u64 * slots / 4;
        let hi = (i as u64 + 1) * slots / 4;
        (lo, hi - lo)
    } else {
        (0, slots)
    }
}

/// Bounds of quarter `i` of a partitioned table.
pub fn cuckoo_quarter(slots: u64, i: usize) -> (u64, u64) {
    region(slots, true, i)
}

/// Low `bits` bits of the id, with 0 remapped to 1 (0 marks an empty slot).
pub(super) fn fingerprint(x: &ItemId, bits: u32) -> u32 {
    let f = truncate_hash(x, bits).expect("fingerprint width in range") as u32;
    f.max(1)
}

fn slots_of(hashes: &HashFamily, slots: u64, partitioned: bool, x: &ItemId) -> [u64; 4] {
    let mut s = [0u64; 4];
    for (i, out) in s.iter_mut().enumerate() {
        let (lo, len) = region(slots, partitioned, i);
        *out = lo + hashes.index(i, x, len);
    }
    s
}

/// One build attempt with the hash seeds drawn from `opts.seed`.
pub fn build_cuckoo4(
    dict: &Dictionary,
    params: &PmtParams,
    opts: &BuildOptions,
) -> Result<DictRepresentation> {
    params.validate()?;
    let n_slots = cuckoo_slot_count(params.n);
    if opts.partitioned && n_slots < 4 {
        return Err(PmtError::InvalidParams("partitioned table needs 4+ slots".into()));
    }
    let bits = params.epsilon + 2;
    let hashes = HashFamily::from_seed(4, opts.seed).with_range_map(opts.range_map);
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed ^ 0x6b69_636b);
    let mut table = vec![0u32; n_slots as usize];
    let mut owner = vec![EMPTY; n_slots as usize];
    let mut stash = CuckooStash::empty(opts.stash_capacity);
    let items = dict.entries();

    for start in 0..items.len() as u32 {
        let mut cur = start;
        let mut fp = fingerprint(&items[cur as usize], bits);
        let mut from = u64::MAX;
        let mut placed = false;
        for _ in 0..=opts.max_kicks {
            let cand = slots_of(&hashes, n_slots, opts.partitioned, &items[cur as usize]);
            if let Some(&s) = cand.iter().find(|&&s| owner[s as usize] == EMPTY) {
                table[s as usize] = fp;
                owner[s as usize] = cur;
                placed = true;
                break;
            }
            let victim = loop {
                let s = cand[rng.gen_range(0..4)];
                if s != from || cand.iter().all(|&c| c == from) {
                    break s;
                }
            };
            std::mem::swap(&mut table[victim as usize], &mut fp);
            std::mem::swap(&mut owner[victim as usize], &mut cur);
            from = victim;
        }
        if !placed {
            if stash.entries.len() == stash.capacity {
                return Err(PmtError::CuckooStashOverflow {
                    unplaced: items.len() - start as usize,
                    capacity: stash.capacity,
                });
            }
            let x = &items[cur as usize];
            stash.entries.push(StashEntry {
                slots: slots_of(&hashes, n_slots, opts.partitioned, x),
                fingerprint: fp,
            });
        }
    }

    let fields: Vec<u64> = table.iter().map(|&f| f as u64).collect();
    Ok(DictRepresentation {
        kind: ReprKind::Cuckoo4,
        payload: pack_fields(&fields, bits),
        n: params.n as u64,
        n_prime: n_slots,
        epsilon: params.epsilon,
        item_bits: bits,
        hashes,
        partitioned: opts.partitioned,
        leading_zero_value: false,
        seqdiff_mode: SeqDiffMode::Truncate,
        stash,
        mac: [0; 16],
    })
}

/// Retries [`build_cuckoo4`] with fresh seeds after a stash overflow.
pub fn build_cuckoo4_with_rehash(
    dict: &Dictionary,
    params: &PmtParams,
    opts: &BuildOptions,
) -> Result<DictRepresentation> {
    let mut attempt = opts.clone();
    let mut last = None;
    for round in 0..=opts.max_rehash as u64 {
        attempt.seed = opts.seed.wrapping_add(round.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        match build_cuckoo4(dict, params, &attempt) {
            Err(e @ PmtError::CuckooStashOverflow { .. }) => last = Some(e),
            other => return other,
        }
    }
    Err(last.expect("at least one attempt"))
}
