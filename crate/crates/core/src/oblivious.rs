//! Data-independent building blocks: mask-based selection and comparison,
//! page-sized record containers that are always touched uniformly, an
//! instrumented operation counter, and a bitonic sorting network.
//!
//! Secret-dependent decisions are turned into 0/1 words and applied with
//! arithmetic masks. Every page operation is reported to an [`AccessCounter`]
//! so tests can assert that counts depend on public sizes only.

use std::hint::black_box;

/// `1` if `a == b`, else `0`, without a data-dependent branch.
#[inline]
pub fn ct_eq(a: u64, b: u64) -> u64 {
    let x = a ^ b;
    1 ^ ((x | x.wrapping_neg()) >> 63)
}

/// `1` if `a < b` (unsigned), else `0`.
#[inline]
pub fn ct_lt(a: u64, b: u64) -> u64 {
    ((!a & b) | (!(a ^ b) & a.wrapping_sub(b))) >> 63
}

#[inline]
pub fn ct_lt_u128(a: u128, b: u128) -> u64 {
    let (ah, al) = ((a >> 64) as u64, a as u64);
    let (bh, bl) = ((b >> 64) as u64, b as u64);
    ct_lt(ah, bh) | (ct_eq(ah, bh) & ct_lt(al, bl))
}

/// All-ones when `flag` is 1, zero when it is 0. The optimizer cannot see
/// through the result, so selections built on it stay branch-free.
#[inline]
pub fn ct_mask(flag: u64) -> u64 {
    black_box(flag & 1).wrapping_neg()
}

#[inline]
fn pick(m: u64, a: u64, b: u64) -> u64 {
    (a & m) | (b & !m)
}

/// Returns `a` when `flag` is 1 and `b` when it is 0. Both are always read.
#[inline]
pub fn ct_select(flag: u64, a: u64, b: u64) -> u64 {
    pick(ct_mask(flag), a, b)
}

/// Types that can be chosen between with a mask from [`ct_mask`].
pub trait CtSelect: Copy {
    fn select_masked(mask: u64, a: Self, b: Self) -> Self;

    #[inline]
    fn ct_select(flag: u64, a: Self, b: Self) -> Self {
        Self::select_masked(ct_mask(flag), a, b)
    }
}

impl CtSelect for u64 {
    #[inline]
    fn select_masked(m: u64, a: Self, b: Self) -> Self {
        pick(m, a, b)
    }
}

impl CtSelect for u32 {
    #[inline]
    fn select_masked(m: u64, a: Self, b: Self) -> Self {
        pick(m, a as u64, b as u64) as u32
    }
}

impl CtSelect for usize {
    #[inline]
    fn select_masked(m: u64, a: Self, b: Self) -> Self {
        pick(m, a as u64, b as u64) as usize
    }
}

/// Operation counts, kept per page where an operation targets a page.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct AccessCounter {
    pub page_reads: Vec<u64>,
    pub page_writes: Vec<u64>,
    /// Mask-based selections and compare-exchanges.
    pub selects: u64,
    /// Entries processed (dictionary entries, sorted records, stash slots).
    pub entries: u64,
}

impl AccessCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn grow(&mut self, page: usize) {
        if self.page_reads.len() <= page {
            self.page_reads.resize(page + 1, 0);
            self.page_writes.resize(page + 1, 0);
        }
    }

    #[inline]
    pub fn read(&mut self, page: usize, n: u64) {
        self.grow(page);
        self.page_reads[page] += n;
    }

    #[inline]
    pub fn write(&mut self, page: usize, n: u64) {
        self.grow(page);
        self.page_writes[page] += n;
    }

    #[inline]
    pub fn select(&mut self, n: u64) {
        self.selects += n;
    }

    #[inline]
    pub fn entry(&mut self, n: u64) {
        self.entries += n;
    }

    pub fn total_reads(&self) -> u64 {
        self.page_reads.iter().sum()
    }

    pub fn total_writes(&self) -> u64 {
        self.page_writes.iter().sum()
    }

    /// Page reads plus page writes.
    pub fn page_ops(&self) -> u64 {
        self.total_reads() + self.total_writes()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Counter increments since `earlier`, which must be a prefix state.
    pub fn since(&self, earlier: &AccessCounter) -> AccessCounter {
        let at = |v: &Vec<u64>, i: usize| v.get(i).copied().unwrap_or(0);
        AccessCounter {
            page_reads: (0..self.page_reads.len())
                .map(|i| self.page_reads[i] - at(&earlier.page_reads, i))
                .collect(),
            page_writes: (0..self.page_writes.len())
                .map(|i| self.page_writes[i] - at(&earlier.page_writes, i))
                .collect(),
            selects: self.selects - earlier.selects,
            entries: self.entries - earlier.entries,
        }
    }
}

/// A page-sized container of fixed-width records. The last slot is reserved
/// for writes that must not land anywhere meaningful.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObliviousPage<T> {
    slots: Vec<T>,
    pub page_bytes: usize,
    pub slot_bits: u32,
    /// Position of this page in the counter.
    pub id: usize,
}

impl<T: Copy> ObliviousPage<T> {
    /// As many records as fit, minus the dummy.
    pub fn new(page_bytes: usize, slot_bits: u32, id: usize, fill: T) -> Self {
        let fit = page_bytes * 8 / slot_bits as usize;
        assert!(fit >= 2, "page too small for one record plus dummy");
        Self::with_capacity(page_bytes, slot_bits, fit - 1, id, fill)
    }

    pub fn with_capacity(page_bytes: usize, slot_bits: u32, capacity: usize, id: usize, fill: T) -> Self {
        assert!(
            (capacity + 1) * slot_bits as usize <= page_bytes * 8,
            "{capacity} records of {slot_bits} bits plus dummy exceed {page_bytes} bytes"
        );
        ObliviousPage {
            slots: vec![fill; capacity + 1],
            page_bytes,
            slot_bits,
            id,
        }
    }

    /// Usable records, excluding the dummy.
    #[inline]
    pub fn capacity(&self) -> usize {
        self.slots.len() - 1
    }

    #[inline]
    pub fn dummy_slot(&self) -> usize {
        self.slots.len() - 1
    }

    #[inline]
    pub fn read(&self, i: usize, ctr: &mut AccessCounter) -> T {
        ctr.read(self.id, 1);
        self.slots[i]
    }

    #[inline]
    pub fn write(&mut self, i: usize, v: T, ctr: &mut AccessCounter) {
        ctr.write(self.id, 1);
        self.slots[i] = v;
    }

    /// Read-modify-write of one record, counted as a single write.
    #[inline]
    pub fn modify(&mut self, i: usize, f: impl FnOnce(&mut T), ctr: &mut AccessCounter) {
        ctr.write(self.id, 1);
        f(&mut self.slots[i]);
    }

    /// All slots including the dummy, after charging `reads` reads and
    /// `writes` writes to this page. For loops whose per-page access count
    /// is fixed in advance.
    #[inline]
    pub fn charged(&mut self, reads: u64, writes: u64, ctr: &mut AccessCounter) -> &mut [T] {
        ctr.read(self.id, reads);
        ctr.write(self.id, writes);
        &mut self.slots
    }

    /// Uninstrumented view, for tests and for moving records between pages
    /// during maintenance (which is counted by the caller).
    pub fn records(&self) -> &[T] {
        &self.slots[..self.capacity()]
    }

    pub fn records_mut(&mut self) -> &mut [T] {
        let c = self.capacity();
        &mut self.slots[..c]
    }

    pub fn dummy(&self) -> T {
        self.slots[self.dummy_slot()]
    }
}

/// Reads every record once and writes once per record: matching records are
/// replaced by `update(record)`, every other write goes to the dummy slot.
/// Returns the number of matches.
pub fn page_scan_update<T: CtSelect>(
    page: &mut ObliviousPage<T>,
    matches: impl Fn(&T) -> u64,
    update: impl Fn(T) -> T,
    ctr: &mut AccessCounter,
) -> u64 {
    let dummy = page.dummy_slot();
    let mut hits = 0;
    for i in 0..page.capacity() {
        let v = page.read(i, ctr);
        let m = matches(&v) & 1;
        let target = usize::ct_select(m, i, dummy);
        page.write(target, T::ct_select(m, update(v), v), ctr);
        ctr.select(2);
        hits += m;
    }
    hits
}

/// Applies `op` to every page in order. Each page must see the same number
/// of counted operations; this is checked in debug builds.
pub fn multi_page_uniform<T>(
    pages: &mut [ObliviousPage<T>],
    mut op: impl FnMut(&mut ObliviousPage<T>, &mut AccessCounter),
    ctr: &mut AccessCounter,
) {
    assert!(!pages.is_empty(), "multi_page_uniform needs at least one page");
    let mut first: Option<(u64, u64)> = None;
    for p in pages.iter_mut() {
        let id = p.id;
        let before = (
            ctr.page_reads.get(id).copied().unwrap_or(0),
            ctr.page_writes.get(id).copied().unwrap_or(0),
        );
        op(p, ctr);
        let after = (
            ctr.page_reads.get(id).copied().unwrap_or(0),
            ctr.page_writes.get(id).copied().unwrap_or(0),
        );
        let delta = (after.0 - before.0, after.1 - before.1);
        match first {
            None => first = Some(delta),
            Some(d) => debug_assert_eq!(d, delta, "non-uniform access on page {id}"),
        }
    }
}

#[inline]
fn compare_exchange<T: CtSelect>(
    v: &mut [T],
    i: usize,
    j: usize,
    ascending: bool,
    key: &impl Fn(&T) -> u128,
    ctr: &mut AccessCounter,
) {
    let (a, b) = (v[i], v[j]);
    let (ka, kb) = (key(&a), key(&b));
    // the direction is part of the public network shape
    let swap = if ascending { ct_lt_u128(kb, ka) } else { ct_lt_u128(ka, kb) };
    let m = ct_mask(swap);
    v[i] = T::select_masked(m, b, a);
    v[j] = T::select_masked(m, a, b);
    ctr.select(1);
    ctr.entry(2);
}

fn bitonic_merge<T: CtSelect>(
    v: &mut [T],
    lo: usize,
    n: usize,
    ascending: bool,
    key: &impl Fn(&T) -> u128,
    ctr: &mut AccessCounter,
) {
    if n <= 1 {
        return;
    }
    let m = if n.is_power_of_two() { n / 2 } else { 1 << (usize::BITS - 1 - n.leading_zeros()) };
    for i in lo..lo + n - m {
        compare_exchange(v, i, i + m, ascending, key, ctr);
    }
    bitonic_merge(v, lo, m, ascending, key, ctr);
    bitonic_merge(v, lo + m, n - m, ascending, key, ctr);
}

fn bitonic_rec<T: CtSelect>(
    v: &mut [T],
    lo: usize,
    n: usize,
    ascending: bool,
    key: &impl Fn(&T) -> u128,
    ctr: &mut AccessCounter,
) {
    if n <= 1 {
        return;
    }
    let m = n / 2;
    bitonic_rec(v, lo, m, !ascending, key, ctr);
    bitonic_rec(v, lo + m, n - m, ascending, key, ctr);
    bitonic_merge(v, lo, n, ascending, key, ctr);
}

/// Sorts ascending by `key` with a bitonic network. The sequence of
/// compare-exchange positions depends only on `v.len()`.
pub fn bitonic_sort<T: CtSelect>(v: &mut [T], key: impl Fn(&T) -> u128, ctr: &mut AccessCounter) {
    let n = v.len();
    bitonic_rec(v, 0, n, true, &key, ctr);
}

/// Number of compare-exchanges [`bitonic_sort`] performs on `n` records.
pub fn bitonic_cost(n: usize) -> u64 {
    fn merge(n: usize) -> u64 {
        if n <= 1 {
            return 0;
        }
        let m = if n.is_power_of_two() { n / 2 } else { 1 << (usize::BITS - 1 - n.leading_zeros()) };
        (n - m) as u64 + merge(m) + merge(n - m)
    }
    fn rec(n: usize) -> u64 {
        if n <= 1 {
            return 0;
        }
        rec(n / 2) + rec(n - n / 2) + merge(n)
    }
    rec(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn select_examples() {
        assert_eq!(ct_select(1, 7, 9), 7);
        assert_eq!(ct_select(0, 7, 9), 9);
    }

    #[test]
    fn select_and_compare_match_branching_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1_000_000 {
            let c: bool = rng.gen();
            let (a, b): (u64, u64) = (rng.gen(), rng.gen());
            assert_eq!(ct_select(c as u64, a, b), if c { a } else { b });
            let b2 = if rng.gen_bool(0.1) { a } else { b };
            assert_eq!(ct_eq(a, b2), (a == b2) as u64);
            assert_eq!(ct_lt(a, b2), (a < b2) as u64);
        }
        for (a, b) in [(0u64, 0u64), (0, 1), (1, 0), (u64::MAX, 0), (0, u64::MAX), (u64::MAX, u64::MAX)] {
            assert_eq!(ct_lt(a, b), (a < b) as u64);
        }
    }

    fn page_with(vals: &[u64]) -> ObliviousPage<u64> {
        let mut p = ObliviousPage::new(64, 64, 0, 0u64);
        p.records_mut()[..vals.len()].copy_from_slice(vals);
        p
    }

    #[test]
    fn scan_update_hit_and_miss_cost_the_same() {
        let vals = [10, 11, 12, 13, 14, 15, 16];
        let mut hit = page_with(&vals);
        let mut c_hit = AccessCounter::new();
        assert_eq!(page_scan_update(&mut hit, |&v| ct_eq(v, 13), |v| v + 100, &mut c_hit), 1);
        assert_eq!(hit.records()[3], 113);

        let mut miss = page_with(&vals);
        let mut c_miss = AccessCounter::new();
        assert_eq!(page_scan_update(&mut miss, |&v| ct_eq(v, 99), |v| v + 100, &mut c_miss), 0);
        assert_eq!(miss.records(), &vals[..]);
        assert_eq!(miss.dummy(), 16);
        assert_eq!(c_hit, c_miss);
        assert_eq!(c_hit.page_reads, vec![7]);
        assert_eq!(c_hit.page_writes, vec![7]);
    }

    #[test]
    fn uniform_over_pages_scales_linearly() {
        let single = {
            let mut p = vec![ObliviousPage::new(256, 32, 0, 0u32)];
            let mut c = AccessCounter::new();
            multi_page_uniform(&mut p, |pg, c| {
                page_scan_update(pg, |&v| ct_eq(v as u64, 5), |v| v + 1, c);
            }, &mut c);
            c
        };
        for k in 1..=8usize {
            let mut pages: Vec<_> = (0..k).map(|i| ObliviousPage::new(256, 32, i, i as u32 * 3)).collect();
            let mut c = AccessCounter::new();
            multi_page_uniform(&mut pages, |pg, c| {
                page_scan_update(pg, |&v| ct_eq(v as u64, 6), |v| v + 1, c);
            }, &mut c);
            assert!(c.page_reads.iter().all(|&r| r == single.page_reads[0]));
            assert!(c.page_writes.iter().all(|&w| w == single.page_writes[0]));
            assert_eq!(c.page_ops(), k as u64 * single.page_ops());
        }
    }

    #[test]
    fn page_geometry() {
        let p = ObliviousPage::new(4096, 48, 0, 0u64);
        assert_eq!(p.capacity(), 681);
        let p = ObliviousPage::with_capacity(4096, 64, 500, 0, 0u64);
        assert_eq!(p.capacity(), 500);
        assert_eq!(p.dummy_slot(), 500);
    }

    proptest! {
        #[test]
        fn bitonic_sorts_any_length(v in prop::collection::vec(any::<u64>(), 0..300)) {
            let mut s = v.clone();
            let mut c = AccessCounter::new();
            bitonic_sort(&mut s, |&x| x as u128, &mut c);
            let mut want = v.clone();
            want.sort_unstable();
            prop_assert_eq!(&s, &want);
            prop_assert_eq!(c.selects, bitonic_cost(v.len()));
        }
    }

    #[test]
    fn bitonic_cost_is_data_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = None;
        for _ in 0..20 {
            let mut v: Vec<u64> = (0..777).map(|_| rng.gen_range(0..50)).collect();
            let mut c = AccessCounter::new();
            bitonic_sort(&mut v, |&x| x as u128, &mut c);
            assert_eq!(*seen.get_or_insert(c.clone()), c);
        }
    }
}
