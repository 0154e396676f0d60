//! Path ORAM over a cuckoo table, used as the Cuckoo-on-ORAM baseline.
//!
//! Each tree is a binary heap of buckets holding `Z` encrypted cells. The
//! position map lives on oblivious pages and is scanned in full on every
//! access. Eviction assembles every cell by scanning the whole stash.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::bitpack::{pack_fields, read_field};
use crate::crypto::{ctr_apply, derive, mac16, mac16_verify};
use crate::error::{PmtError, Result};
use crate::model::{ceil_log2, ItemId};
use crate::oblivious::{ct_eq, AccessCounter, CtSelect, ObliviousPage};
use crate::repr::{DictRepresentation, ReprKind};

const DUMMY_ID: u32 = u32::MAX;
const NONCE: usize = 16;
const TAG: usize = 16;
/// Block id and assigned leaf precede the data in every cell.
const CELL_HEADER: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Eviction {
    /// Standard Path ORAM: remap, then greedy write-back from the stash.
    #[default]
    Stash,
    /// Re-encrypt and reshuffle the read path in place without remapping.
    /// Cheaper, but repeated accesses to a block hit the same path.
    PathReshuffle,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OramParams {
    pub block_bytes: usize,
    /// Cells per bucket.
    pub z: usize,
    /// 1, or 4 to give each table quarter its own tree.
    pub tree_count: usize,
    pub stash_bound: usize,
    /// Page size for the position map.
    pub page_bytes: usize,
    pub eviction: Eviction,
}

impl Default for OramParams {
    fn default() -> Self {
        OramParams {
            block_bytes: 4096,
            z: 4,
            tree_count: 4,
            stash_bound: 64,
            page_bytes: 4096,
            eviction: Eviction::Stash,
        }
    }
}

impl OramParams {
    pub fn with_block_bytes(mut self, block_bytes: usize) -> Self {
        self.block_bytes = block_bytes;
        self
    }

    pub fn with_tree_count(mut self, tree_count: usize) -> Self {
        self.tree_count = tree_count;
        self
    }
}

/// Shape of one tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeGeometry {
    pub blocks: usize,
    /// Edges from root to leaf; a path has `height + 1` buckets.
    pub height: u32,
    pub leaves: usize,
    pub node_count: usize,
}

impl TreeGeometry {
    /// Enough leaves for one per block.
    pub fn standard(blocks: usize) -> Self {
        let height = ceil_log2(blocks.max(2) as u64);
        TreeGeometry {
            blocks,
            height,
            leaves: 1 << height,
            node_count: (2 << height) - 1,
        }
    }

    pub fn path_len(&self) -> usize {
        self.height as usize + 1
    }
}

/// The sizing rule of the reference deployment: one bucket per `z` blocks,
/// tree height `ceil(log2(nodes))`. Reported for comparison only.
pub fn reference_geometry(table_bytes: u64, block_bytes: usize, z: usize) -> TreeGeometry {
    let blocks = table_bytes.div_ceil(block_bytes as u64) as usize;
    let node_count = blocks.div_ceil(z);
    TreeGeometry {
        blocks,
        height: ceil_log2(node_count as u64),
        leaves: node_count.div_ceil(2),
        node_count,
    }
}

/// Counted work; block touches are cells read along paths.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OramCounters {
    pub accesses: u64,
    pub block_reads: u64,
    pub block_writes: u64,
    /// Stash records visited while filling cells and locating blocks.
    pub stash_scans: u64,
    pub posmap: AccessCounter,
}

struct Tree {
    geo: TreeGeometry,
    /// `node_count * z` cells of `NONCE + CELL_HEADER + block_bytes + TAG` bytes.
    cells: Vec<u8>,
    posmap: Vec<ObliviousPage<u32>>,
    stash_ids: Vec<u32>,
    stash_leaf: Vec<u32>,
    stash_data: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Read,
    Write,
}

pub struct OramState {
    params: OramParams,
    trees: Vec<Tree>,
    enc_key: [u8; 16],
    mac_key: [u8; 32],
    rng: ChaCha20Rng,
    counters: OramCounters,
    max_stash: usize,
    // cuckoo front-end
    table: Option<DictRepresentation>,
    slots_per_block: usize,
    tree_bounds: Vec<(u64, u64)>,
}

impl OramState {
    /// An ORAM holding `blocks[t]` plaintext blocks in tree `t`.
    pub fn with_blocks(params: OramParams, blocks: Vec<Vec<Vec<u8>>>, seed: u64) -> Result<Self> {
        if params.z == 0 || params.block_bytes == 0 {
            return Err(PmtError::OramConfig("z and block_bytes must be positive".into()));
        }
        let seed_bytes = seed.to_le_bytes();
        let k = derive("pmt/oram/keys", &[&seed_bytes]);
        let mut state = OramState {
            enc_key: k[..16].try_into().unwrap(),
            mac_key: derive("pmt/oram/mac", &[&k]),
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0x6f72_616d),
            trees: Vec::new(),
            counters: OramCounters::default(),
            max_stash: 0,
            table: None,
            slots_per_block: 0,
            tree_bounds: Vec::new(),
            params,
        };
        for (t, data) in blocks.into_iter().enumerate() {
            let tree = state.build_tree(t, data)?;
            state.trees.push(tree);
        }
        Ok(state)
    }

    /// Slices a cuckoo table into blocks and loads them, one tree per
    /// quarter when `tree_count == 4`.
    pub fn init(repr: &DictRepresentation, params: OramParams, seed: u64) -> Result<Self> {
        if repr.kind != ReprKind::Cuckoo4 {
            return Err(PmtError::WrongKind { expected: "cuckoo" });
        }
        if params.tree_count != 1 && params.tree_count != 4 {
            return Err(PmtError::OramConfig(format!("tree_count {} not in {{1, 4}}", params.tree_count)));
        }
        let bits = repr.item_bits;
        let spb = params.block_bytes * 8 / bits as usize;
        if spb == 0 {
            return Err(PmtError::OramConfig("block smaller than one slot".into()));
        }
        let n = repr.n_prime;
        let bounds: Vec<(u64, u64)> = if params.tree_count == 4 {
            (0..4)
                .map(|i| {
                    let (lo, len) = crate::repr::cuckoo_quarter(n, i);
                    (lo, lo + len)
                })
                .collect()
        } else {
            vec![(0, n)]
        };
        let blocks: Vec<Vec<Vec<u8>>> = bounds
            .iter()
            .map(|&(lo, hi)| {
                let slots: Vec<u64> = (lo..hi).map(|s| read_field(&repr.payload, s as usize, bits)).collect();
                slots
                    .chunks(spb)
                    .map(|c| {
                        let mut b = pack_fields(c, bits);
                        b.resize(params.block_bytes, 0);
                        b
                    })
                    .collect()
            })
            .collect();
        let mut state = Self::with_blocks(params, blocks, seed)?;
        let mut meta = repr.clone();
        meta.payload = Vec::new();
        state.table = Some(meta);
        state.slots_per_block = spb;
        state.tree_bounds = bounds;
        Ok(state)
    }

    pub fn params(&self) -> &OramParams {
        &self.params
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn geometry(&self, tree: usize) -> TreeGeometry {
        self.trees[tree].geo
    }

    /// Cuckoo slots per block.
    pub fn slots_per_block(&self) -> usize {
        self.slots_per_block
    }

    pub fn counters(&self) -> &OramCounters {
        &self.counters
    }

    pub fn reset_counters(&mut self) {
        self.counters = OramCounters::default();
    }

    pub fn stash_len(&self, tree: usize) -> usize {
        self.trees[tree].stash_ids.iter().filter(|&&id| id != DUMMY_ID).count()
    }

    /// Largest stash occupancy seen after any access.
    pub fn max_stash(&self) -> usize {
        self.max_stash
    }

    /// Cell touches of one `coo_query`: four paths of `height + 1` buckets.
    pub fn touches_per_query(&self) -> u64 {
        (0..4)
            .map(|i| self.trees[i % self.trees.len()].geo.path_len() as u64 * self.params.z as u64)
            .sum()
    }

    fn cell_len(&self) -> usize {
        NONCE + CELL_HEADER + self.params.block_bytes + TAG
    }

    fn stash_cap(&self, geo: &TreeGeometry) -> usize {
        self.params.stash_bound + geo.path_len() * self.params.z
    }

    fn build_tree(&mut self, t: usize, data: Vec<Vec<u8>>) -> Result<Tree> {
        let p = &self.params;
        let geo = TreeGeometry::standard(data.len());
        let per_page = p.page_bytes * 8 / 32 - 1;
        let n_pages = data.len().div_ceil(per_page).max(1);
        let mut posmap: Vec<ObliviousPage<u32>> = (0..n_pages)
            .map(|i| ObliviousPage::with_capacity(p.page_bytes, 32, per_page, t * n_pages + i, 0))
            .collect();
        let z = p.z;
        let mut occupant: Vec<Option<usize>> = vec![None; geo.node_count * z];
        let mut leaves = Vec::with_capacity(data.len());
        let mut stash = Vec::new();
        for id in 0..data.len() {
            let leaf = self.rng.gen_range(0..geo.leaves);
            leaves.push(leaf);
            posmap[id / per_page].records_mut()[id % per_page] = leaf as u32;
            let mut placed = false;
            for d in (0..geo.path_len()).rev() {
                let node = node_at(&geo, leaf, d);
                if let Some(c) = (0..z).find(|&c| occupant[node * z + c].is_none()) {
                    occupant[node * z + c] = Some(id);
                    placed = true;
                    break;
                }
            }
            if !placed {
                stash.push(id);
            }
        }
        if stash.len() > p.stash_bound {
            return Err(PmtError::OramConfig(format!(
                "{} blocks overflow the stash during initial placement",
                stash.len()
            )));
        }
        let bb = p.block_bytes;
        let cap = self.stash_cap(&geo);
        let mut tree = Tree {
            geo,
            cells: vec![0u8; geo.node_count * z * self.cell_len()],
            posmap,
            stash_ids: vec![DUMMY_ID; cap],
            stash_leaf: vec![0; cap],
            stash_data: vec![0u8; cap * bb],
        };
        let empty = vec![0u8; bb];
        for (cell, occ) in occupant.iter().enumerate() {
            let (id, leaf, payload) = match occ {
                Some(i) => (*i as u32, leaves[*i] as u32, &data[*i]),
                None => (DUMMY_ID, 0, &empty),
            };
            self.seal_cell(&mut tree, t, cell, id, leaf, payload);
        }
        for (k, &id) in stash.iter().enumerate() {
            tree.stash_ids[k] = id as u32;
            tree.stash_leaf[k] = leaves[id] as u32;
            tree.stash_data[k * bb..(k + 1) * bb].copy_from_slice(&data[id]);
        }
        self.max_stash = self.max_stash.max(stash.len());
        Ok(tree)
    }

    fn seal_cell(&mut self, tree: &mut Tree, t: usize, cell: usize, id: u32, leaf: u32, data: &[u8]) {
        let len = self.cell_len();
        let mut nonce = [0u8; NONCE];
        self.rng.fill(&mut nonce);
        let out = &mut tree.cells[cell * len..(cell + 1) * len];
        out[..NONCE].copy_from_slice(&nonce);
        let body = &mut out[NONCE..len - TAG];
        body[..4].copy_from_slice(&id.to_le_bytes());
        body[4..8].copy_from_slice(&leaf.to_le_bytes());
        body[8..].copy_from_slice(data);
        ctr_apply(&self.enc_key, &nonce, body);
        let pos = [(t as u64).to_le_bytes(), (cell as u64).to_le_bytes()].concat();
        let tag = mac16(&self.mac_key, &[&pos, &out[..len - TAG]]);
        out[len - TAG..].copy_from_slice(&tag);
    }

    fn open_cell(&self, tree: &Tree, t: usize, cell: usize) -> Result<(u32, u32, Vec<u8>)> {
        let len = self.cell_len();
        let c = &tree.cells[cell * len..(cell + 1) * len];
        let pos = [(t as u64).to_le_bytes(), (cell as u64).to_le_bytes()].concat();
        if !mac16_verify(&self.mac_key, &[&pos, &c[..len - TAG]], &c[len - TAG..]) {
            return Err(PmtError::BlockIntegrity);
        }
        let nonce: [u8; NONCE] = c[..NONCE].try_into().unwrap();
        let mut body = c[NONCE..len - TAG].to_vec();
        ctr_apply(&self.enc_key, &nonce, &mut body);
        let id = u32::from_le_bytes(body[..4].try_into().unwrap());
        let leaf = u32::from_le_bytes(body[4..8].try_into().unwrap());
        Ok((id, leaf, body[CELL_HEADER..].to_vec()))
    }

    /// Reads every position-map entry and rewrites it, replacing the entry
    /// for `id` with `new_leaf` when `remap` is set. Returns the old leaf.
    fn posmap_swap(&mut self, t: usize, id: u32, new_leaf: u32, remap: u64) -> u32 {
        let ctr = &mut self.counters.posmap;
        let mut old = 0u32;
        let mut base = 0u32;
        for page in self.trees[t].posmap.iter_mut() {
            let cap = page.capacity();
            for i in 0..cap {
                let v = page.read(i, ctr);
                let hit = ct_eq((base + i as u32) as u64, id as u64);
                old = u32::ct_select(hit, v, old);
                page.write(i, u32::ct_select(hit & remap, new_leaf, v), ctr);
                ctr.select(2);
            }
            base += cap as u32;
        }
        old
    }

    /// One Path ORAM access to block `id` of tree `t`.
    pub fn access(&mut self, t: usize, id: usize, op: Op, data: Option<&[u8]>) -> Result<Vec<u8>> {
        let geo = self.trees[t].geo;
        if id >= geo.blocks {
            return Err(PmtError::OramConfig(format!("block {id} out of range {}", geo.blocks)));
        }
        if op == Op::Write && data.map(|d| d.len()) != Some(self.params.block_bytes) {
            return Err(PmtError::OramConfig("write needs exactly one block of data".into()));
        }
        let bb = self.params.block_bytes;
        let z = self.params.z;
        let reshuffle = self.params.eviction == Eviction::PathReshuffle;
        let new_leaf = self.rng.gen_range(0..geo.leaves) as u32;
        let old_leaf = self.posmap_swap(t, id as u32, new_leaf, (!reshuffle) as u64);
        let leaf_now = if reshuffle { old_leaf } else { new_leaf };
        self.counters.accesses += 1;

        // Read the path into the stash.
        for d in 0..geo.path_len() {
            let node = node_at(&geo, old_leaf as usize, d);
            for c in 0..z {
                let (bid, bleaf, payload) = self.open_cell(&self.trees[t], t, node * z + c)?;
                self.counters.block_reads += 1;
                self.stash_insert(t, bid, bleaf, &payload);
            }
        }

        // Locate the block, return it and optionally overwrite it.
        let tree = &mut self.trees[t];
        let mut at = 0usize;
        for (k, &sid) in tree.stash_ids.iter().enumerate() {
            at = usize::ct_select(ct_eq(sid as u64, id as u64), k, at);
        }
        self.counters.stash_scans += tree.stash_ids.len() as u64;
        debug_assert_eq!(tree.stash_ids[at], id as u32, "block {id} missing from path and stash");
        let out = tree.stash_data[at * bb..(at + 1) * bb].to_vec();
        if let (Op::Write, Some(d)) = (op, data) {
            tree.stash_data[at * bb..(at + 1) * bb].copy_from_slice(d);
        }
        tree.stash_leaf[at] = leaf_now;

        // Write the path back, deepest bucket first.
        for d in (0..geo.path_len()).rev() {
            let node = node_at(&geo, old_leaf as usize, d);
            let shift = geo.height - d as u32;
            for c in 0..z {
                let tree = &mut self.trees[t];
                let mut pick = usize::MAX;
                let mut found = 0u64;
                for k in 0..tree.stash_ids.len() {
                    let live = 1 ^ ct_eq(tree.stash_ids[k] as u64, DUMMY_ID as u64);
                    let on_path = ct_eq((tree.stash_leaf[k] >> shift) as u64, (old_leaf >> shift) as u64);
                    let take = live & on_path & (1 ^ found);
                    pick = usize::ct_select(take, k, pick);
                    found |= take;
                }
                self.counters.stash_scans += tree.stash_ids.len() as u64;
                let (bid, bleaf, payload) = if found == 1 {
                    let v = (
                        tree.stash_ids[pick],
                        tree.stash_leaf[pick],
                        tree.stash_data[pick * bb..(pick + 1) * bb].to_vec(),
                    );
                    tree.stash_ids[pick] = DUMMY_ID;
                    v
                } else {
                    (DUMMY_ID, 0, vec![0u8; bb])
                };
                let mut tree = std::mem::replace(&mut self.trees[t], empty_tree());
                self.seal_cell(&mut tree, t, node * z + c, bid, bleaf, &payload);
                self.trees[t] = tree;
                self.counters.block_writes += 1;
            }
        }

        let live = self.stash_len(t);
        self.max_stash = self.max_stash.max(live);
        if live > self.params.stash_bound {
            return Err(PmtError::OramStashOverflow {
                size: live,
                bound: self.params.stash_bound,
            });
        }
        Ok(out)
    }

    fn stash_insert(&mut self, t: usize, id: u32, leaf: u32, payload: &[u8]) {
        let bb = self.params.block_bytes;
        let tree = &mut self.trees[t];
        let real = 1 ^ ct_eq(id as u64, DUMMY_ID as u64);
        let mut free = usize::MAX;
        let mut found = 0u64;
        for (k, &sid) in tree.stash_ids.iter().enumerate() {
            let empty = ct_eq(sid as u64, DUMMY_ID as u64);
            let take = empty & (1 ^ found);
            free = usize::ct_select(take, k, free);
            found |= take;
        }
        self.counters.stash_scans += tree.stash_ids.len() as u64;
        if real == 1 {
            tree.stash_ids[free] = id;
            tree.stash_leaf[free] = leaf;
            tree.stash_data[free * bb..(free + 1) * bb].copy_from_slice(payload);
        }
    }

    pub fn read(&mut self, t: usize, id: usize) -> Result<Vec<u8>> {
        self.access(t, id, Op::Read, None)
    }

    pub fn write(&mut self, t: usize, id: usize, data: &[u8]) -> Result<()> {
        self.access(t, id, Op::Write, Some(data)).map(|_| ())
    }

    /// Tree, block and in-block index holding cuckoo slot `s`.
    fn locate(&self, s: u64) -> (usize, usize, usize) {
        let t = self
            .tree_bounds
            .iter()
            .position(|&(lo, hi)| s >= lo && s < hi)
            .expect("slot inside table");
        let off = (s - self.tree_bounds[t].0) as usize;
        (t, off / self.slots_per_block, off % self.slots_per_block)
    }

    /// Membership test through four ORAM reads plus a constant-work scan of
    /// the cuckoo stash.
    pub fn coo_query(&mut self, q: &ItemId) -> Result<bool> {
        let meta = self.table.as_ref().ok_or(PmtError::WrongKind { expected: "cuckoo" })?;
        let slots = meta.cuckoo_slots(q);
        let fp = meta.cuckoo_fingerprint(q) as u64;
        let bits = meta.item_bits;
        let mut hit = 0u64;
        for i in 0..meta.stash.capacity {
            let (es, ef) = meta
                .stash
                .entries
                .get(i)
                .map(|e| (e.slots, e.fingerprint as u64))
                .unwrap_or(([0; 4], 0));
            let mut all = ct_eq(ef, fp);
            for j in 0..4 {
                all &= ct_eq(es[j], slots[j]);
            }
            hit |= all;
        }
        for s in slots {
            let (t, b, k) = self.locate(s);
            let block = self.read(t, b)?;
            hit |= ct_eq(read_field(&block, k, bits), fp);
        }
        Ok(hit == 1)
    }

    /// Decrypts every tree and checks the Path ORAM invariant: each block
    /// is exactly once either in the stash or on the path to its mapped leaf.
    pub fn audit(&self) -> Result<()> {
        for (t, tree) in self.trees.iter().enumerate() {
            let geo = tree.geo;
            let z = self.params.z;
            let map: Vec<u32> = tree
                .posmap
                .iter()
                .flat_map(|p| p.records().iter().copied())
                .take(geo.blocks)
                .collect();
            let mut seen = vec![0u32; geo.blocks];
            for node in 0..geo.node_count {
                for c in 0..z {
                    let (id, leaf, _) = self.open_cell(tree, t, node * z + c)?;
                    if id == DUMMY_ID {
                        continue;
                    }
                    let id = id as usize;
                    if id >= geo.blocks {
                        return Err(PmtError::OramConfig(format!("tree {t}: stray block id {id}")));
                    }
                    seen[id] += 1;
                    let depth = ceil_log2(node as u64 + 2) - 1;
                    if leaf != map[id] || node_at(&geo, leaf as usize, depth as usize) != node {
                        return Err(PmtError::OramConfig(format!(
                            "tree {t}: block {id} in node {node} is off the path to leaf {}",
                            map[id]
                        )));
                    }
                }
            }
            for (k, &id) in tree.stash_ids.iter().enumerate() {
                if id != DUMMY_ID {
                    seen[id as usize] += 1;
                    if tree.stash_leaf[k] != map[id as usize] {
                        return Err(PmtError::OramConfig(format!("tree {t}: stash block {id} has stale leaf")));
                    }
                }
            }
            if let Some(id) = seen.iter().position(|&c| c != 1) {
                return Err(PmtError::OramConfig(format!(
                    "tree {t}: block {id} present {} times",
                    seen[id]
                )));
            }
        }
        Ok(())
    }

    /// Ciphertext of every cell, for freshness checks.
    pub fn ciphertexts(&self, t: usize) -> Vec<Vec<u8>> {
        self.trees[t].cells.chunks(self.cell_len()).map(|c| c.to_vec()).collect()
    }

    /// Flips one byte of a stored cell.
    pub fn corrupt_cell(&mut self, t: usize, cell: usize) {
        let len = self.cell_len();
        self.trees[t].cells[cell * len + NONCE + 1] ^= 0x80;
    }
}

fn empty_tree() -> Tree {
    Tree {
        geo: TreeGeometry::standard(0),
        cells: Vec::new(),
        posmap: Vec::new(),
        stash_ids: Vec::new(),
        stash_leaf: Vec::new(),
        stash_data: Vec::new(),
    }
}

/// Heap index of the bucket at depth `d` on the path to `leaf`.
fn node_at(geo: &TreeGeometry, leaf: usize, d: usize) -> usize {
    (1usize << d) - 1 + (leaf >> (geo.height as usize - d))
}
