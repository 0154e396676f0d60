//! The carousel trusted application.
//!
//! Pending queries are kept as a sorted, deduplicated set `S` of
//! representation values spread over oblivious pages. Each invocation admits
//! new queries, runs one chunk of `Y` past every page of `S`, and releases
//! the queries that have now seen every chunk exactly once.

use std::collections::VecDeque;
use std::ops::Range;

use crate::bitpack::read_field;
use crate::crypto::sha256;
use crate::error::{PmtError, Result};
use crate::keys::ProviderKey;
use crate::model::{ceil_log2, ItemId};
use crate::oblivious::{bitonic_sort, ct_eq, ct_lt, ct_select, AccessCounter, CtSelect, ObliviousPage};
use crate::repr::{codec, DictRepresentation, ReprKind};

/// Sorts after every real value; padding added for duplicate queries.
pub const DUMMY_KEY: u64 = u64::MAX - 1;
/// Unused slot.
pub const EMPTY_KEY: u64 = u64::MAX;

/// One record of `S`: a representation value, what the carousel captured
/// for it (the match mark, byte or fingerprint) and how many pending queries
/// reference it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Slot {
    pub key: u64,
    pub result: u32,
    pub refs: u32,
}

impl Slot {
    const EMPTY: Slot = Slot {
        key: EMPTY_KEY,
        result: 0,
        refs: 0,
    };
}

impl CtSelect for Slot {
    #[inline]
    fn select_masked(m: u64, a: Self, b: Self) -> Self {
        Slot {
            key: u64::select_masked(m, a.key, b.key),
            result: u32::select_masked(m, a.result, b.result),
            refs: u32::select_masked(m, a.refs, b.refs),
        }
    }
}

/// Working record for maintenance passes: `S` entries have `tag == 0`,
/// lookups issued by departing queries `tag == 1`.
#[derive(Clone, Copy, Debug, Default)]
struct Rec {
    key: u64,
    result: u32,
    refs: u32,
    tag: u32,
    pos: u32,
}

impl CtSelect for Rec {
    #[inline]
    fn select_masked(m: u64, a: Self, b: Self) -> Self {
        Rec {
            key: u64::select_masked(m, a.key, b.key),
            result: u32::select_masked(m, a.result, b.result),
            refs: u32::select_masked(m, a.refs, b.refs),
            tag: u32::select_masked(m, a.tag, b.tag),
            pos: u32::select_masked(m, a.pos, b.pos),
        }
    }
}

#[inline]
fn is_real(key: u64) -> u64 {
    ct_lt(key, DUMMY_KEY)
}

/// How many probes the sequence-of-differences search spends per page.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SearchDepth {
    /// `ceil(log2(capacity))` on every page.
    #[default]
    Fixed,
    /// `ceil(log2(fill))` on each page, where the fill is public.
    FillDependent,
}

#[derive(Clone, Debug)]
pub struct TaConfig {
    /// Maximum number of resident queries.
    pub capacity: usize,
    pub page_bytes: usize,
    pub chunk_bytes: usize,
    pub search: SearchDepth,
    /// Check every chunk against digests taken when `Y` was provisioned.
    pub verify_chunks: bool,
}

impl TaConfig {
    /// Capacities of the reference TrustZone deployment.
    pub fn kinibi(kind: ReprKind) -> Self {
        let capacity = match kind {
            ReprKind::SeqDiff => 12_800,
            ReprKind::Bloom => 1_750,
            ReprKind::Cuckoo4 => 4_500,
        };
        TaConfig {
            capacity,
            ..Self::default()
        }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity;
        self
    }

    pub fn with_chunk_bytes(mut self, chunk_bytes: usize) -> Self {
        self.chunk_bytes = chunk_bytes;
        self
    }
}

impl Default for TaConfig {
    fn default() -> Self {
        TaConfig {
            capacity: 1024,
            page_bytes: 4096,
            chunk_bytes: 1 << 20,
            search: SearchDepth::Fixed,
            verify_chunks: true,
        }
    }
}

/// Shape of `S` on oblivious pages for one representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PageLayout {
    pub page_bytes: usize,
    pub slot_bits: u32,
    /// Usable records per page, a multiple of `arity`.
    pub entries_per_page: usize,
    /// Values each query adds to one region of `S`.
    pub arity: usize,
    /// Independent sorted sets (four for a partitioned cuckoo table).
    pub regions: usize,
}

impl PageLayout {
    /// Sequence-of-differences records per 4 KiB page in the reference
    /// implementation; scaled linearly for other page sizes.
    pub const SEQDIFF_PER_4K: usize = 500;

    pub fn for_repr(repr: &DictRepresentation, page_bytes: usize) -> Self {
        let (slot_bits, arity, regions) = match repr.kind {
            ReprKind::SeqDiff => (64, 1, 1),
            // byte position + captured byte
            ReprKind::Bloom => (40, repr.hashes.len(), 1),
            // slot index + captured fingerprint
            ReprKind::Cuckoo4 if repr.partitioned => (32 + repr.item_bits, 1, 4),
            ReprKind::Cuckoo4 => (32 + repr.item_bits, 4, 1),
        };
        let raw = match repr.kind {
            ReprKind::SeqDiff => Self::SEQDIFF_PER_4K * page_bytes / 4096,
            _ => page_bytes * 8 / slot_bits as usize - 1,
        };
        let granule = if repr.kind == ReprKind::Cuckoo4 { 4 } else { arity };
        let entries_per_page = raw / granule * granule;
        assert!(entries_per_page >= arity, "page of {page_bytes} bytes holds no query");
        PageLayout {
            page_bytes,
            slot_bits,
            entries_per_page,
            arity,
            regions,
        }
    }

    /// Queries whose values fit on one page of each region.
    pub fn queries_per_page(&self) -> usize {
        self.entries_per_page / self.arity
    }

    /// Pages in each region for `queries` resident queries.
    pub fn pages_per_region(&self, queries: usize) -> usize {
        (queries * self.arity).div_ceil(self.entries_per_page).max(1)
    }

    pub fn total_pages(&self, queries: usize) -> usize {
        self.regions * self.pages_per_region(queries)
    }
}

/// Position of one chunk inside `Y`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkDescriptor {
    pub chunk_index: u32,
    pub byte_range: Range<usize>,
    pub item_start: u64,
    pub item_count: u32,
}

/// Metadata the host passes with every invocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkMeta {
    pub chunk_index: u32,
    pub item_count: u32,
}

/// Partition of `Y` into chunks that start on byte boundaries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkPlan {
    pub entry_bits: u32,
    pub total_entries: usize,
    pub items_per_chunk: usize,
    pub num_chunks: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl ChunkPlan {
    pub fn new(repr: &DictRepresentation, chunk_bytes: usize) -> Result<Self> {
        Self::for_entries(repr.entry_count(), repr.entry_bits(), chunk_bytes)
    }

    pub fn for_entries(total_entries: usize, entry_bits: u32, chunk_bytes: usize) -> Result<Self> {
        let w = entry_bits as usize;
        let align = 8 / gcd(w, 8);
        let items_per_chunk = chunk_bytes * 8 / w / align * align;
        if items_per_chunk == 0 {
            return Err(PmtError::InvalidParams(format!(
                "chunk of {chunk_bytes} bytes cannot hold an aligned group of {w}-bit entries"
            )));
        }
        Ok(ChunkPlan {
            entry_bits,
            total_entries,
            items_per_chunk,
            num_chunks: total_entries.div_ceil(items_per_chunk).max(1),
        })
    }

    pub fn descriptor(&self, k: usize) -> ChunkDescriptor {
        assert!(k < self.num_chunks);
        let start = k * self.items_per_chunk;
        let end = (start + self.items_per_chunk).min(self.total_entries);
        let w = self.entry_bits as usize;
        ChunkDescriptor {
            chunk_index: k as u32,
            byte_range: start * w / 8..(end * w).div_ceil(8),
            item_start: start as u64,
            item_count: (end - start) as u32,
        }
    }

    pub fn meta(&self, k: usize) -> ChunkMeta {
        let d = self.descriptor(k);
        ChunkMeta {
            chunk_index: d.chunk_index,
            item_count: d.item_count,
        }
    }

    pub fn slice<'a>(&self, payload: &'a [u8], k: usize) -> &'a [u8] {
        &payload[self.descriptor(k).byte_range]
    }
}

/// A query handed to the TA after the channel layer decrypted it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryInput {
    pub query_id: u64,
    pub item: ItemId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Response {
    pub query_id: u64,
    pub member: bool,
    /// Invocation sequence number at admission.
    pub arrival: u64,
    /// Invocation sequence number whose chunk completed the cycle.
    pub released: u64,
}

impl Response {
    /// Chunks processed between admission and release, inclusive.
    pub fn latency_chunks(&self) -> u64 {
        self.released - self.arrival + 1
    }
}

/// A resident query.
#[derive(Clone, Debug)]
pub struct QueryRecord {
    pub query_id: u64,
    pub arrival: u64,
    pub arrival_chunk: u32,
    /// Representation values, grouped by region.
    rep_keys: Vec<u64>,
    /// Bloom: bit offset inside each captured byte.
    bit_offsets: Vec<u8>,
    fingerprint: u32,
    stash_hit: u64,
}

/// One sorted region of `S`.
#[derive(Clone, Debug)]
pub struct QueryRepSet {
    pages: Vec<ObliviousPage<Slot>>,
    len: usize,
}

impl QueryRepSet {
    fn new(layout: &PageLayout, region: usize) -> Self {
        let mut s = QueryRepSet {
            pages: Vec::new(),
            len: 0,
        };
        s.store(layout, region, &[], &mut AccessCounter::new());
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    /// Records currently in use, uninstrumented.
    pub fn records(&self) -> Vec<Slot> {
        self.pages.iter().flat_map(|p| p.records().iter().copied()).take(self.len).collect()
    }

    /// Values with at least one reference.
    pub fn real_count(&self) -> usize {
        self.records().iter().filter(|s| s.key < DUMMY_KEY).count()
    }

    pub fn dummy_count(&self) -> usize {
        self.records().iter().filter(|s| s.key == DUMMY_KEY).count()
    }

    fn flatten(&self, ctr: &mut AccessCounter) -> Vec<Slot> {
        let mut out = Vec::with_capacity(self.len);
        'outer: for p in &self.pages {
            for i in 0..p.capacity() {
                if out.len() == self.len {
                    break 'outer;
                }
                out.push(p.read(i, ctr));
            }
        }
        out
    }

    fn store(&mut self, layout: &PageLayout, region: usize, recs: &[Slot], ctr: &mut AccessCounter) {
        let cap = layout.entries_per_page;
        let n_pages = recs.len().div_ceil(cap).max(1);
        let base = region * n_pages;
        self.pages = (0..n_pages)
            .map(|p| {
                let mut page =
                    ObliviousPage::with_capacity(layout.page_bytes, layout.slot_bits, cap, base + p, Slot::EMPTY);
                for i in 0..cap {
                    let v = recs.get(p * cap + i).copied().unwrap_or(Slot::EMPTY);
                    page.write(i, v, ctr);
                }
                page
            })
            .collect();
        self.len = recs.len();
    }

    /// Records of page `p` that hold part of `S`.
    fn fill(&self, p: usize) -> usize {
        let cap = self.pages[0].capacity();
        self.len.saturating_sub(p * cap).min(cap)
    }
}

/// Carousel trusted application for one representation.
pub struct CarouselTa {
    meta: DictRepresentation,
    plan: ChunkPlan,
    layout: PageLayout,
    config: TaConfig,
    digests: Vec<[u8; 32]>,
    sets: Vec<QueryRepSet>,
    queue: VecDeque<QueryRecord>,
    seq: u64,
    running: u64,
    scan: AccessCounter,
    upkeep: AccessCounter,
}

impl CarouselTa {
    /// Authenticates `repr` and prepares an empty query set.
    pub fn provision(repr: &DictRepresentation, key: &ProviderKey, config: TaConfig) -> Result<Self> {
        repr.verify(key)?;
        if config.capacity == 0 {
            return Err(PmtError::InvalidParams("TA capacity must be positive".into()));
        }
        let plan = ChunkPlan::new(repr, config.chunk_bytes)?;
        let layout = PageLayout::for_repr(repr, config.page_bytes);
        let digests = if config.verify_chunks {
            (0..plan.num_chunks).map(|k| sha256(plan.slice(&repr.payload, k))).collect()
        } else {
            Vec::new()
        };
        let mut meta = repr.clone();
        meta.payload = Vec::new();
        let sets = (0..layout.regions).map(|r| QueryRepSet::new(&layout, r)).collect();
        Ok(CarouselTa {
            meta,
            plan,
            layout,
            config,
            digests,
            sets,
            queue: VecDeque::new(),
            seq: 0,
            running: 0,
            scan: AccessCounter::new(),
            upkeep: AccessCounter::new(),
        })
    }

    /// Parses and authenticates a serialized representation.
    pub fn provision_bytes(bytes: &[u8], key: &ProviderKey, config: TaConfig) -> Result<Self> {
        let repr = codec::from_bytes(bytes, key)?;
        Self::provision(&repr, key, config)
    }

    pub fn kind(&self) -> ReprKind {
        self.meta.kind
    }

    pub fn plan(&self) -> &ChunkPlan {
        &self.plan
    }

    pub fn layout(&self) -> &PageLayout {
        &self.layout
    }

    pub fn num_chunks(&self) -> usize {
        self.plan.num_chunks
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    /// Resident queries not yet released.
    pub fn occupancy(&self) -> usize {
        self.queue.len()
    }

    /// Chunk the next invocation must carry.
    pub fn next_chunk(&self) -> u32 {
        (self.seq % self.plan.num_chunks as u64) as u32
    }

    /// Invocations so far.
    pub fn sequence(&self) -> u64 {
        self.seq
    }

    pub fn rep_sets(&self) -> &[QueryRepSet] {
        &self.sets
    }

    pub fn pages(&self) -> usize {
        self.sets.iter().map(|s| s.page_count()).sum()
    }

    /// Operations spent running chunks past `S`.
    pub fn scan_counter(&self) -> &AccessCounter {
        &self.scan
    }

    /// Operations spent admitting and releasing queries.
    pub fn upkeep_counter(&self) -> &AccessCounter {
        &self.upkeep
    }

    pub fn reset_counters(&mut self) {
        self.scan.reset();
        self.upkeep.reset();
    }

    /// One TA entry: admit `new` (tagged with this chunk), process the chunk,
    /// and return the responses that completed a full cycle with it.
    pub fn invoke(&mut self, chunk: &[u8], meta: ChunkMeta, new: &[QueryInput]) -> Result<Vec<Response>> {
        let expected = self.next_chunk();
        if meta.chunk_index != expected {
            return Err(PmtError::ChunkOutOfOrder {
                expected,
                got: meta.chunk_index,
            });
        }
        let desc = self.plan.descriptor(expected as usize);
        if chunk.len() != desc.byte_range.len() || meta.item_count != desc.item_count {
            return Err(PmtError::ChunkMismatch(expected));
        }
        if self.config.verify_chunks && sha256(chunk) != self.digests[expected as usize] {
            return Err(PmtError::ChunkMismatch(expected));
        }
        self.admit_queries(new)?;
        match self.meta.kind {
            ReprKind::SeqDiff => self.process_chunk_seqdiff(chunk, &desc),
            ReprKind::Bloom | ReprKind::Cuckoo4 => self.process_chunk_cursor(chunk, &desc),
        }
        let out = self.finalize_due_queries();
        self.seq += 1;
        Ok(out)
    }

    /// Admits `new` with the current invocation as arrival time. All or
    /// nothing: a batch that would exceed capacity is rejected unchanged.
    pub fn admit_queries(&mut self, new: &[QueryInput]) -> Result<Vec<u64>> {
        if self.occupancy() + new.len() > self.config.capacity {
            return Err(PmtError::CapacityExceeded {
                occupancy: self.occupancy(),
                capacity: self.config.capacity,
            });
        }
        if new.is_empty() {
            return Ok(Vec::new());
        }
        let regions = self.layout.regions;
        let mut fresh: Vec<Vec<u64>> = vec![Vec::with_capacity(new.len() * self.layout.arity); regions];
        let mut ids = Vec::with_capacity(new.len());
        for q in new {
            let rec = self.represent(q);
            let per = rec.rep_keys.len() / regions;
            for (r, f) in fresh.iter_mut().enumerate() {
                f.extend_from_slice(&rec.rep_keys[r * per..(r + 1) * per]);
            }
            ids.push(q.query_id);
            self.queue.push_back(rec);
        }
        for (r, keys) in fresh.iter().enumerate() {
            self.merge_in(r, keys);
        }
        Ok(ids)
    }

    fn represent(&mut self, q: &QueryInput) -> QueryRecord {
        let m = &self.meta;
        let mut rec = QueryRecord {
            query_id: q.query_id,
            arrival: self.seq,
            arrival_chunk: self.next_chunk(),
            rep_keys: Vec::new(),
            bit_offsets: Vec::new(),
            fingerprint: 0,
            stash_hit: 0,
        };
        match m.kind {
            ReprKind::SeqDiff => rec.rep_keys.push(m.seqdiff_value(&q.item)),
            ReprKind::Bloom => {
                let mut pos = m.bloom_positions(&q.item);
                pos.sort_unstable();
                rec.rep_keys = pos.iter().map(|p| p / 8).collect();
                rec.bit_offsets = pos.iter().map(|p| (p % 8) as u8).collect();
            }
            ReprKind::Cuckoo4 => {
                let slots = m.cuckoo_slots(&q.item);
                let fp = m.cuckoo_fingerprint(&q.item);
                rec.rep_keys = slots.to_vec();
                if !m.partitioned {
                    rec.rep_keys.sort_unstable();
                }
                rec.fingerprint = fp;
                let mut hit = 0u64;
                for i in 0..m.stash.capacity {
                    let e = m.stash.entries.get(i);
                    let (es, ef) = e.map(|e| (e.slots, e.fingerprint)).unwrap_or(([0; 4], 0));
                    let mut all = ct_eq(ef as u64, fp as u64);
                    for j in 0..4 {
                        all &= ct_eq(es[j], slots[j]);
                    }
                    hit |= all;
                    self.upkeep.select(5);
                    self.upkeep.entry(1);
                }
                rec.stash_hit = hit;
            }
        }
        self.upkeep.entry(rec.rep_keys.len() as u64);
        rec
    }

    /// Merges `keys` into region `r` of `S`: sort, fold duplicates into one
    /// record with summed references, turn the extra copies into dummies,
    /// sort again.
    fn merge_in(&mut self, r: usize, keys: &[u64]) {
        let ctr = &mut self.upkeep;
        let set = &mut self.sets[r];
        let mut recs = set.flatten(ctr);
        recs.extend(keys.iter().map(|&key| Slot { key, result: 0, refs: 1 }));
        let key_of = |s: &Slot| s.key as u128;
        bitonic_sort(&mut recs, key_of, ctr);

        let n = recs.len();
        let (mut refs, mut res) = (0u32, 0u32);
        for i in (0..n).rev() {
            let same_next = if i + 1 < n {
                ct_eq(recs[i].key, recs[i + 1].key) & is_real(recs[i].key)
            } else {
                0
            };
            refs = recs[i].refs + u32::ct_select(same_next, refs, 0);
            res = recs[i].result | u32::ct_select(same_next, res, 0);
            recs[i].refs = refs;
            recs[i].result = res;
            ctr.select(2);
        }
        let mut prev = EMPTY_KEY;
        for rec in recs.iter_mut() {
            let dup = ct_eq(rec.key, prev) & is_real(rec.key);
            prev = rec.key;
            *rec = Slot::ct_select(dup, Slot { key: DUMMY_KEY, result: 0, refs: 0 }, *rec);
            ctr.select(1);
        }
        bitonic_sort(&mut recs, key_of, ctr);
        set.store(&self.layout, r, &recs, ctr);
    }

    /// Algorithms 2 and 3: every page keeps a cursor to its first value not
    /// yet passed; each entry of the chunk costs one read and one write per
    /// page of the touched region.
    fn process_chunk_cursor(&mut self, chunk: &[u8], d: &ChunkDescriptor) {
        let ctr = &mut self.scan;
        let w = self.plan.entry_bits;
        let bloom = self.meta.kind == ReprKind::Bloom;
        let mut cursors: Vec<Vec<usize>> = Vec::with_capacity(self.sets.len());
        for set in &self.sets {
            let mut cs = Vec::with_capacity(set.pages.len());
            for page in &set.pages {
                let mut c = 0usize;
                for i in 0..page.capacity() {
                    c += ct_lt(page.read(i, ctr).key, d.item_start) as usize;
                }
                ctr.select(page.capacity() as u64);
                cs.push(c);
            }
            cursors.push(cs);
        }
        let bounds: Vec<(u64, u64)> = (0..self.sets.len())
            .map(|r| {
                if self.layout.regions == 1 {
                    (0, u64::MAX)
                } else {
                    let (lo, len) = self.meta.cuckoo_region(r);
                    (lo, lo + len)
                }
            })
            .collect();

        let count = d.item_count as usize;
        let ys: Vec<u32> = (0..count)
            .map(|j| if bloom { chunk[j] as u32 } else { read_field(chunk, j, w) as u32 })
            .collect();
        // Pages are independent, so each runs the whole chunk in turn.
        for (r, set) in self.sets.iter_mut().enumerate() {
            let (lo, hi) = bounds[r];
            let j0 = lo.saturating_sub(d.item_start).min(count as u64) as usize;
            let j1 = hi.saturating_sub(d.item_start).min(count as u64) as usize;
            let span = (j1 - j0) as u64;
            for (page, c) in set.pages.iter_mut().zip(cursors[r].iter_mut()) {
                let dummy = page.dummy_slot();
                let slots = page.charged(span, span, ctr);
                for (j, &y) in ys.iter().enumerate().take(j1).skip(j0) {
                    let hit = ct_eq(slots[*c].key, d.item_start + j as u64);
                    let idx = usize::ct_select(hit, *c, dummy);
                    slots[idx].result = y;
                    *c += hit as usize;
                }
                ctr.select(span);
            }
        }
        ctr.entry(count as u64);
    }

    /// Accumulate differences; every non-zero field is searched
    /// for on every page with a fixed number of probes.
    fn process_chunk_seqdiff(&mut self, chunk: &[u8], d: &ChunkDescriptor) {
        let ctr = &mut self.scan;
        let w = self.plan.entry_bits;
        let step = self.meta.max_step();
        if d.chunk_index == 0 {
            self.running = 0;
        }
        let set = &mut self.sets[0];
        let cap = self.layout.entries_per_page;
        let depth: Vec<usize> = (0..set.pages.len())
            .map(|p| match self.config.search {
                SearchDepth::Fixed => cap,
                SearchDepth::FillDependent => set.fill(p).max(1),
            })
            .collect();
        for j in 0..d.item_count as usize {
            let g = d.item_start + j as u64;
            let f = read_field(chunk, j, w);
            ctr.entry(1);
            if g == 0 && self.meta.leading_zero_value {
                // literal value 0, running total stays 0
            } else if f == 0 {
                self.running += step;
                continue;
            } else {
                self.running += f;
            }
            let x = self.running;
            for (page, &len) in set.pages.iter_mut().zip(&depth) {
                let (mut base, mut n) = (0usize, len);
                while n > 1 {
                    let half = n / 2;
                    let probe = page.read(base + half, ctr).key;
                    base = usize::ct_select(1 ^ ct_lt(x, probe), base + half, base);
                    n -= half;
                    ctr.select(1);
                }
                let s = page.read(base, ctr);
                let hit = ct_eq(s.key, x);
                let idx = usize::ct_select(hit, base, page.dummy_slot());
                page.modify(idx, |slot| slot.result = 1, ctr);
                ctr.select(1);
            }
        }
    }

    /// Releases queries admitted `num_chunks - 1` invocations ago: joins
    /// their values against `S` by sorting, drops their references, removes
    /// freed values and an equal number of dummies.
    fn finalize_due_queries(&mut self) -> Vec<Response> {
        let n_chunks = self.plan.num_chunks as u64;
        let due = self
            .queue
            .iter()
            .take_while(|q| q.arrival + n_chunks - 1 == self.seq)
            .count();
        if due == 0 {
            return Vec::new();
        }
        let regions = self.layout.regions;
        let per = self.layout.arity;
        let mut captured = vec![0u32; due * per * regions];
        for r in 0..regions {
            let ctr = &mut self.upkeep;
            let set = &mut self.sets[r];
            let len = set.len;
            let mut recs: Vec<Rec> = set
                .flatten(ctr)
                .into_iter()
                .map(|s| Rec {
                    key: s.key,
                    result: s.result,
                    refs: s.refs,
                    tag: 0,
                    pos: 0,
                })
                .collect();
            for (qi, q) in self.queue.iter().take(due).enumerate() {
                for t in 0..per {
                    recs.push(Rec {
                        key: q.rep_keys[r * per + t],
                        result: 0,
                        refs: 0,
                        tag: 1,
                        pos: (qi * per + t) as u32,
                    });
                }
            }
            let requests = due * per;
            bitonic_sort(
                &mut recs,
                |x| ((x.key as u128) << 64) | ((x.tag as u128) << 32) | x.pos as u128,
                ctr,
            );
            let (mut ck, mut cr) = (EMPTY_KEY, 0u32);
            for x in recs.iter_mut() {
                let is_s = 1 ^ x.tag as u64;
                ck = ct_select(is_s, x.key, ck);
                cr = u32::ct_select(is_s, x.result, cr);
                let take = (x.tag as u64) & ct_eq(x.key, ck);
                x.result = u32::ct_select(take, cr, x.result);
                ctr.select(3);
            }
            let (mut cnt, mut freed) = (0u32, 0u64);
            for x in recs.iter_mut().rev() {
                let is_req = x.tag as u64;
                let is_s = 1 ^ is_req;
                x.refs = u32::ct_select(is_s, x.refs.wrapping_sub(cnt), x.refs);
                let gone = is_s & is_real(x.key) & ct_eq(x.refs as u64, 0);
                x.key = ct_select(gone, EMPTY_KEY, x.key);
                freed += gone;
                cnt = u32::ct_select(is_req, cnt + 1, 0);
                ctr.select(4);
            }
            let drop_dummies = requests as u64 - freed;
            let mut dropped = 0u64;
            for x in recs.iter_mut() {
                let rm = (1 ^ x.tag as u64) & ct_eq(x.key, DUMMY_KEY) & ct_lt(dropped, drop_dummies);
                x.key = ct_select(rm, EMPTY_KEY, x.key);
                dropped += rm;
                ctr.select(2);
            }
            bitonic_sort(
                &mut recs,
                |x| ((x.tag as u128) << 64) | ct_select(x.tag as u64, x.pos as u64, x.key) as u128,
                ctr,
            );
            let keep: Vec<Slot> = recs[..len - requests]
                .iter()
                .map(|x| Slot {
                    key: x.key,
                    result: x.result,
                    refs: x.refs,
                })
                .collect();
            for (qi, x) in recs[len..len + requests].iter().enumerate() {
                let (q, t) = (qi / per, qi % per);
                captured[q * per * regions + r * per + t] = x.result;
            }
            set.store(&self.layout, r, &keep, ctr);
        }

        let kind = self.meta.kind;
        let width = per * regions;
        let mut out = Vec::with_capacity(due);
        for (qi, q) in self.queue.drain(..due).enumerate() {
            let got = &captured[qi * width..(qi + 1) * width];
            let bit = match kind {
                ReprKind::SeqDiff => got[0] as u64 & 1,
                ReprKind::Bloom => got
                    .iter()
                    .zip(&q.bit_offsets)
                    .fold(1u64, |acc, (&b, &o)| acc & ((b as u64 >> o) & 1)),
                ReprKind::Cuckoo4 => got
                    .iter()
                    .fold(q.stash_hit, |acc, &f| acc | ct_eq(f as u64, q.fingerprint as u64)),
            };
            self.upkeep.select(width as u64);
            out.push(Response {
                query_id: q.query_id,
                member: bit == 1,
                arrival: q.arrival,
                released: self.seq,
            });
        }
        out
    }
}

/// Search probes per page for a page of `capacity` records.
pub fn search_depth(capacity: usize) -> u32 {
    ceil_log2(capacity as u64)
}
