//! Experiment harness: batch cost curves, steady-state occupancy and
//! breakdown, carousel/ORAM crossover, FPR measurement and the
//! access-pattern microbenchmark. Counted operations are deterministic for a
//! fixed seed; wall-clock fields are informational.

use std::fmt;
use std::hint::black_box;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bitpack::read_field;
use crate::carousel::{CarouselTa, ChunkPlan, QueryInput, Response, TaConfig};
use crate::error::{PmtError, Result};
use crate::keys::ProviderKey;
use crate::model::{generate_dictionary, Dictionary, ItemId, PmtParams};
use crate::oram::{OramParams, OramState};
use crate::repr::{build, BuildOptions, DictRepresentation, ReprKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    SeqDiff,
    Bloom,
    /// Cuckoo on a carousel, one sorted set.
    Coc,
    /// Cuckoo on a carousel, one sorted set per table quarter.
    CocPartitioned,
    /// Cuckoo on Path ORAM.
    Coo,
}

impl Scheme {
    pub const CAROUSEL: [Scheme; 3] = [Scheme::SeqDiff, Scheme::Bloom, Scheme::Coc];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::SeqDiff => "seqdiff",
            Scheme::Bloom => "bloom",
            Scheme::Coc => "coc",
            Scheme::CocPartitioned => "coc-part",
            Scheme::Coo => "coo",
        }
    }

    pub fn kind(self) -> ReprKind {
        match self {
            Scheme::SeqDiff => ReprKind::SeqDiff,
            Scheme::Bloom => ReprKind::Bloom,
            _ => ReprKind::Cuckoo4,
        }
    }

    pub fn partitioned(self) -> bool {
        matches!(self, Scheme::CocPartitioned | Scheme::Coo)
    }

    pub fn is_oram(self) -> bool {
        self == Scheme::Coo
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = PmtError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "seqdiff" => Scheme::SeqDiff,
            "bloom" => Scheme::Bloom,
            "coc" | "cuckoo" => Scheme::Coc,
            "coc-part" | "coc-partitioned" => Scheme::CocPartitioned,
            "coo" | "oram" => Scheme::Coo,
            _ => return Err(PmtError::InvalidParams(format!("unknown scheme {s:?}"))),
        })
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub scheme: String,
    pub n: u64,
    pub epsilon: u32,
    /// Batch size, arrival rate or pattern index depending on the experiment.
    pub param: f64,
    pub cycle: u64,
    pub occupancy: u64,
    pub entry_ops: u64,
    pub page_ops: u64,
    pub oram_block_ops: u64,
    pub wall_us: u64,
    pub latency_chunks: f64,
    /// Page operations spent admitting and releasing queries.
    #[serde(skip)]
    pub upkeep_ops: u64,
}

pub const CSV_HEADER: &str =
    "scheme,n,epsilon,param,cycle,occupancy,entry_ops,page_ops,oram_block_ops,wall_us,latency_chunks";

pub fn write_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))
            .map_err(|e| PmtError::Wire(e.to_string()))?;
    }
    for r in records {
        w.serialize(r).map_err(|e| PmtError::Wire(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// A dictionary and its sealed representation for one scheme.
pub struct Fixture {
    pub scheme: Scheme,
    pub params: PmtParams,
    pub dict: Dictionary,
    pub repr: DictRepresentation,
    pub key: ProviderKey,
    pub seed: u64,
}

impl Fixture {
    pub fn new(scheme: Scheme, n: usize, epsilon: u32, seed: u64) -> Result<Self> {
        Self::from_dictionary(scheme, generate_dictionary(n, seed), epsilon, seed)
    }

    pub fn from_dictionary(scheme: Scheme, dict: Dictionary, epsilon: u32, seed: u64) -> Result<Self> {
        let params = PmtParams::new(dict.len()).with_epsilon(epsilon);
        let opts = BuildOptions::seeded(seed).partitioned(scheme.partitioned());
        let key = ProviderKey::random(&mut ChaCha20Rng::seed_from_u64(seed ^ 0x6b65_79));
        let repr = build(scheme.kind(), &dict, &params, &opts)?.sealed(&key);
        Ok(Fixture {
            scheme,
            params,
            dict,
            repr,
            key,
            seed,
        })
    }

    /// Same dictionary, another scheme.
    pub fn sibling(&self, scheme: Scheme) -> Result<Self> {
        Self::from_dictionary(scheme, self.dict.clone(), self.params.epsilon, self.seed)
    }

    pub fn ta(&self, config: TaConfig) -> Result<CarouselTa> {
        CarouselTa::provision(&self.repr, &self.key, config)
    }

    pub fn oram(&self, params: OramParams) -> Result<OramState> {
        OramState::init(&self.repr, params, self.seed)
    }

    /// `count` queries, each a member with probability `member_frac`.
    pub fn workload<R: Rng>(&self, count: usize, member_frac: f64, rng: &mut R) -> Vec<ItemId> {
        let e = self.dict.entries();
        (0..count)
            .map(|_| {
                if rng.gen_bool(member_frac) {
                    e[rng.gen_range(0..e.len())]
                } else {
                    self.dict.random_non_member(rng)
                }
            })
            .collect()
    }

    fn record(&self, param: f64) -> ExperimentRecord {
        ExperimentRecord {
            scheme: self.scheme.name().into(),
            n: self.params.n as u64,
            epsilon: self.params.epsilon,
            param,
            cycle: 0,
            occupancy: 0,
            entry_ops: 0,
            page_ops: 0,
            oram_block_ops: 0,
            wall_us: 0,
            latency_chunks: 0.0,
            upkeep_ops: 0,
        }
    }
}

fn inputs(items: &[ItemId], first_id: u64) -> Vec<QueryInput> {
    items
        .iter()
        .enumerate()
        .map(|(i, &item)| QueryInput {
            query_id: first_id + i as u64,
            item,
        })
        .collect()
}

/// Runs one full cycle from the TA's next chunk, admitting `batch` with the
/// first chunk.
pub fn run_cycle(ta: &mut CarouselTa, payload: &[u8], batch: &[QueryInput]) -> Result<Vec<Response>> {
    let mut out = Vec::new();
    for i in 0..ta.num_chunks() {
        let k = ta.next_chunk() as usize;
        let new = if i == 0 { batch } else { &[] };
        let chunk = ta.plan().slice(payload, k);
        let meta = ta.plan().meta(k);
        out.extend(ta.invoke(chunk, meta, new)?);
    }
    Ok(out)
}

/// Counted cost of one batch cycle.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BatchCost {
    pub entry_ops: u64,
    pub page_ops: u64,
    pub upkeep_page_ops: u64,
    pub upkeep_entries: u64,
    pub responses: usize,
}

/// Injects `items` at a cycle start on a fresh TA and runs the cycle.
pub fn batch_cycle(fx: &Fixture, config: &TaConfig, items: &[ItemId]) -> Result<(BatchCost, Vec<Response>, u64)> {
    let mut ta = fx.ta(config.clone())?;
    let t0 = Instant::now();
    let rs = run_cycle(&mut ta, &fx.repr.payload, &inputs(items, 0))?;
    let wall = t0.elapsed().as_micros() as u64;
    let cost = BatchCost {
        entry_ops: ta.scan_counter().entries,
        page_ops: ta.scan_counter().page_ops(),
        upkeep_page_ops: ta.upkeep_counter().page_ops(),
        upkeep_entries: ta.upkeep_counter().entries,
        responses: rs.len(),
    };
    Ok((cost, rs, wall))
}

/// Batch experiment: `m` queries at cycle start, `repeats` times.
pub fn bench_batch(fx: &Fixture, config: &TaConfig, oram: &OramParams, m: usize, repeats: usize) -> Result<Vec<ExperimentRecord>> {
    let mut rng = ChaCha20Rng::seed_from_u64(fx.seed ^ m as u64);
    let mut out = Vec::with_capacity(repeats);
    if fx.scheme.is_oram() {
        let mut o = fx.oram(oram.clone())?;
        for r in 0..repeats {
            let items = fx.workload(m, 0.5, &mut rng);
            o.reset_counters();
            let t0 = Instant::now();
            for q in &items {
                o.coo_query(q)?;
            }
            let mut rec = fx.record(m as f64);
            rec.cycle = r as u64;
            rec.occupancy = m as u64;
            rec.oram_block_ops = o.counters().block_reads;
            rec.page_ops = o.counters().posmap.page_ops();
            rec.wall_us = t0.elapsed().as_micros() as u64;
            out.push(rec);
        }
        return Ok(out);
    }
    let config = config.clone().with_capacity(config.capacity.max(m));
    for r in 0..repeats {
        let items = fx.workload(m, 0.5, &mut rng);
        let (cost, rs, wall) = batch_cycle(fx, &config, &items)?;
        if rs.len() != m {
            return Err(PmtError::InvalidParams(format!("{} of {m} queries answered", rs.len())));
        }
        let mut rec = fx.record(m as f64);
        rec.cycle = r as u64;
        rec.occupancy = m as u64;
        rec.entry_ops = cost.entry_ops;
        rec.page_ops = cost.page_ops;
        rec.upkeep_ops = cost.upkeep_page_ops;
        rec.wall_us = wall;
        rec.latency_chunks = rs.iter().map(|r| r.latency_chunks() as f64).sum::<f64>() / m.max(1) as f64;
        out.push(rec);
    }
    Ok(out)
}

/// Service capacity `C` (queries completed by one batch cycle) and the
/// cycle cost `T(C)` in counted operations.
pub fn service_capacity(fx: &Fixture, config: &TaConfig) -> Result<(usize, u64)> {
    let c = config.capacity;
    let mut rng = ChaCha20Rng::seed_from_u64(fx.seed ^ 0xcafe);
    let items = fx.workload(c + 1, 0.5, &mut rng);
    let mut ta = fx.ta(config.clone())?;
    if ta.admit_queries(&inputs(&items, 0)).is_ok() {
        return Err(PmtError::InvalidParams("TA accepted more than its capacity".into()));
    }
    let (cost, rs, _) = batch_cycle(fx, config, &items[..c])?;
    Ok((rs.len(), cycle_time(&cost)))
}

/// Time proxy for one cycle: processed entries plus page operations.
pub fn cycle_time(c: &BatchCost) -> u64 {
    c.entry_ops + c.page_ops + c.upkeep_entries + c.upkeep_page_ops
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arrivals {
    Uniform,
    /// Exponential inter-arrival times; an extension beyond uniform spacing.
    Poisson,
}

#[derive(Clone, Debug)]
pub struct SteadyReport {
    pub records: Vec<ExperimentRecord>,
    /// Occupancy trend is positive at 99% confidence over the window.
    pub trend_breakdown: bool,
    /// The TA sat at capacity in at least 95% of window cycles.
    pub saturated: bool,
    pub slope: f64,
    pub t_stat: f64,
    pub max_backlog: usize,
}

impl SteadyReport {
    pub fn breakdown(&self) -> bool {
        self.trend_breakdown || self.saturated
    }
}

pub const TREND_WINDOW: usize = 200;

/// How simulated time advances in [`bench_steady`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SteadyClock {
    /// One time unit per scan cycle; `rate` is queries per cycle.
    Cycles,
    /// Time advances by the counted cost of each invocation; `rate` is
    /// queries per reference cycle of this many counted operations.
    Ops(u64),
}

/// Steady-state run at a constant arrival rate.
pub fn bench_steady(
    fx: &Fixture,
    config: &TaConfig,
    rate: f64,
    clock_kind: SteadyClock,
    cycles: usize,
    arrivals: Arrivals,
) -> Result<SteadyReport> {
    let mut ta = fx.ta(config.clone())?;
    let mut rng = ChaCha20Rng::seed_from_u64(fx.seed ^ 0x57ea_d7);
    let n_chunks = ta.num_chunks();
    let per_op = match clock_kind {
        SteadyClock::Cycles => rate / n_chunks as f64,
        SteadyClock::Ops(t_ref) => rate / t_ref as f64,
    };
    let mut next_arrival = if per_op > 0.0 { gap(per_op, arrivals, &mut rng) } else { f64::INFINITY };
    let mut clock = 0f64;
    let mut waiting: std::collections::VecDeque<ItemId> = Default::default();
    let mut next_id = 0u64;
    let mut records = Vec::with_capacity(cycles);
    let mut occupancy = Vec::with_capacity(cycles);
    let mut at_cap = Vec::with_capacity(cycles);
    let mut max_backlog = 0;
    for cycle in 0..cycles {
        let t0 = Instant::now();
        let before_scan = ta.scan_counter().clone();
        let before_up = ta.upkeep_counter().clone();
        let mut lat_sum = 0f64;
        let mut lat_n = 0usize;
        let mut full = true;
        for _ in 0..n_chunks {
            while next_arrival <= clock {
                waiting.extend(fx.workload(1, 0.5, &mut rng));
                next_arrival += gap(per_op, arrivals, &mut rng);
            }
            let free = ta.capacity() - ta.occupancy();
            let take = free.min(waiting.len());
            let batch: Vec<ItemId> = waiting.drain(..take).collect();
            let batch = inputs(&batch, next_id);
            next_id += batch.len() as u64;
            let s0 = ta.scan_counter().entries + ta.scan_counter().page_ops();
            let u0 = ta.upkeep_counter().entries + ta.upkeep_counter().page_ops();
            let k = ta.next_chunk() as usize;
            let chunk = ta.plan().slice(&fx.repr.payload, k);
            let meta = ta.plan().meta(k);
            for r in ta.invoke(chunk, meta, &batch)? {
                lat_sum += r.latency_chunks() as f64;
                lat_n += 1;
            }
            full &= ta.occupancy() == ta.capacity();
            let s1 = ta.scan_counter().entries + ta.scan_counter().page_ops();
            let u1 = ta.upkeep_counter().entries + ta.upkeep_counter().page_ops();
            clock += match clock_kind {
                SteadyClock::Cycles => 1.0,
                SteadyClock::Ops(_) => ((s1 - s0) + (u1 - u0)) as f64,
            };
        }
        let backlog = ta.occupancy() + waiting.len();
        max_backlog = max_backlog.max(backlog);
        occupancy.push(backlog as f64);
        at_cap.push(full);
        let mut rec = fx.record(rate);
        rec.cycle = cycle as u64;
        rec.occupancy = backlog as u64;
        rec.entry_ops = ta.scan_counter().entries - before_scan.entries;
        rec.page_ops = ta.scan_counter().page_ops() - before_scan.page_ops();
        rec.upkeep_ops = ta.upkeep_counter().page_ops() - before_up.page_ops();
        rec.wall_us = t0.elapsed().as_micros() as u64;
        rec.latency_chunks = if lat_n > 0 { lat_sum / lat_n as f64 } else { 0.0 };
        records.push(rec);
    }
    let w = occupancy.len().min(TREND_WINDOW);
    let tail = &occupancy[occupancy.len() - w..];
    let (slope, t_stat) = trend(tail);
    let crit = if w > 2 {
        StudentsT::new(0.0, 1.0, (w - 2) as f64)
            .map(|d| d.inverse_cdf(0.99))
            .unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    let sat = at_cap[at_cap.len() - w..].iter().filter(|&&b| b).count();
    Ok(SteadyReport {
        records,
        trend_breakdown: slope > 0.0 && t_stat > crit,
        saturated: w > 0 && sat * 100 >= w * 95,
        slope,
        t_stat,
        max_backlog,
    })
}

fn gap<R: Rng>(per_op: f64, arrivals: Arrivals, rng: &mut R) -> f64 {
    match arrivals {
        Arrivals::Uniform => 1.0 / per_op,
        Arrivals::Poisson => -(1.0 - rng.gen::<f64>()).ln() / per_op,
    }
}

/// OLS slope of `y` against its index and the slope's t statistic. A
/// perfect fit with non-zero slope gives an infinite statistic.
pub fn trend(y: &[f64]) -> (f64, f64) {
    let k = y.len();
    if k < 3 {
        return (0.0, 0.0);
    }
    let kf = k as f64;
    let mx = (kf - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / kf;
    let sxx: f64 = (0..k).map(|i| (i as f64 - mx).powi(2)).sum();
    let sxy: f64 = y.iter().enumerate().map(|(i, v)| (i as f64 - mx) * (v - my)).sum();
    let b = sxy / sxx;
    let sse: f64 = y
        .iter()
        .enumerate()
        .map(|(i, v)| (v - my - b * (i as f64 - mx)).powi(2))
        .sum();
    let se = (sse / (kf - 2.0) / sxx).sqrt();
    let t = if se > 0.0 {
        b / se
    } else if b != 0.0 {
        b.signum() * f64::INFINITY
    } else {
        0.0
    };
    (b, t)
}

/// Breakdown rate from fixed-occupancy timing: `k / T(k)` at `k = C`,
/// scaled to queries per reference cycle, together with `T(k)` per `k`.
pub fn fixed_occupancy_breakdown(fx: &Fixture, config: &TaConfig, ks: &[usize]) -> Result<Vec<(usize, u64)>> {
    let mut rng = ChaCha20Rng::seed_from_u64(fx.seed ^ 0xf1ed);
    ks.iter()
        .map(|&k| {
            let items = fx.workload(k, 0.5, &mut rng);
            let (cost, _, _) = batch_cycle(fx, &config.clone().with_capacity(config.capacity.max(k)), &items)?;
            Ok((k, cycle_time(&cost)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossoverRow {
    pub m: usize,
    /// Entries scanned in the cycle plus representation values admitted.
    pub carousel_cost: u64,
    pub oram_touches: u64,
    /// Block touches times cuckoo slots per block.
    pub oram_cost: u64,
}

#[derive(Clone, Debug)]
pub struct Crossover {
    pub rows: Vec<CrossoverRow>,
    /// Smallest `m` from which the carousel is cheaper.
    pub m_star: Option<usize>,
    pub touches_per_query: u64,
}

/// Counted carousel cost against counted ORAM cost over `ms` (ascending).
/// `carousel` and `oram` must share a dictionary.
pub fn crossover_analysis(carousel: &Fixture, oram: &Fixture, oram_params: &OramParams, ms: &[usize]) -> Result<Crossover> {
    if carousel.dict.entries() != oram.dict.entries() {
        return Err(PmtError::InvalidParams("crossover needs one dictionary".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(carousel.seed ^ 0xc055);
    let mut o = oram.oram(oram_params.clone())?;
    let spb = o.slots_per_block() as u64;
    let arity = arity(carousel);
    let mut rows = Vec::with_capacity(ms.len());
    let mut done = 0usize;
    let top = ms.iter().copied().max().unwrap_or(0);
    let probes = carousel.workload(top, 0.5, &mut rng);
    o.reset_counters();
    for &m in ms {
        let cfg = TaConfig::default().with_capacity(m.max(1));
        let (cost, rs, _) = batch_cycle(carousel, &cfg, &probes[..m])?;
        debug_assert_eq!(rs.len(), m);
        while done < m {
            o.coo_query(&probes[done])?;
            done += 1;
        }
        let touches = o.counters().block_reads;
        rows.push(CrossoverRow {
            m,
            carousel_cost: cost.entry_ops + arity * m as u64,
            oram_touches: touches,
            oram_cost: touches * spb,
        });
    }
    let mut m_star = None;
    for (i, r) in rows.iter().enumerate() {
        if rows[i..].iter().all(|r| r.carousel_cost < r.oram_cost) {
            m_star = Some(r.m);
            break;
        }
    }
    Ok(Crossover {
        rows,
        m_star,
        touches_per_query: o.touches_per_query(),
    })
}

/// Representation values one query adds to `S`.
fn arity(fx: &Fixture) -> u64 {
    match fx.scheme.kind() {
        ReprKind::SeqDiff => 1,
        ReprKind::Bloom => fx.repr.hashes.len() as u64,
        ReprKind::Cuckoo4 => 4,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FprReport {
    pub queries: u64,
    pub positives: u64,
}

impl FprReport {
    pub fn rate(&self) -> f64 {
        self.positives as f64 / self.queries as f64
    }
}

/// Sends `probes` through the scheme in full-capacity batches, split across
/// `replicas` independent TAs, and counts positive answers.
pub fn measure_fpr(fx: &Fixture, config: &TaConfig, oram: &OramParams, probes: &[ItemId], replicas: usize) -> Result<FprReport> {
    let replicas = replicas.max(1);
    let share = probes.len().div_ceil(replicas).max(1);
    let positives: Result<u64> = std::thread::scope(|s| {
        let handles: Vec<_> = probes
            .chunks(share)
            .map(|part| {
                s.spawn(move || -> Result<u64> {
                    let mut pos = 0u64;
                    if fx.scheme.is_oram() {
                        let mut o = fx.oram(oram.clone())?;
                        for q in part {
                            pos += o.coo_query(q)? as u64;
                        }
                        return Ok(pos);
                    }
                    let mut ta = fx.ta(config.clone())?;
                    let mut id = 0u64;
                    for batch in part.chunks(config.capacity) {
                        let rs = run_cycle(&mut ta, &fx.repr.payload, &inputs(batch, id))?;
                        if rs.len() != batch.len() {
                            return Err(PmtError::InvalidParams("batch not fully answered".into()));
                        }
                        id += batch.len() as u64;
                        pos += rs.iter().filter(|r| r.member).count() as u64;
                    }
                    Ok(pos)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("fpr worker")).sum()
    });
    Ok(FprReport {
        queries: probes.len() as u64,
        positives: positives?,
    })
}

/// Non-members for FPR runs.
pub fn non_member_probes(fx: &Fixture, count: usize, seed: u64) -> Vec<ItemId> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count).map(|_| fx.dict.random_non_member(&mut rng)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessPattern {
    InvokeOnly,
    OnePerPage,
    ReadAll,
}

impl AccessPattern {
    pub const ALL: [AccessPattern; 3] = [AccessPattern::InvokeOnly, AccessPattern::OnePerPage, AccessPattern::ReadAll];

    pub fn name(self) -> &'static str {
        match self {
            AccessPattern::InvokeOnly => "invoke-only",
            AccessPattern::OnePerPage => "one-per-page",
            AccessPattern::ReadAll => "read-all",
        }
    }
}

#[inline(never)]
fn ta_entry(chunk: &[u8], offset: usize, pattern: AccessPattern, width: u32, page_bytes: usize, reads: &mut u64) -> u64 {
    let mut acc = 0u64;
    match pattern {
        AccessPattern::InvokeOnly => {}
        AccessPattern::OnePerPage => {
            // first byte of every page of Y that starts inside this chunk
            for p in (offset.div_ceil(page_bytes) * page_bytes..offset + chunk.len()).step_by(page_bytes) {
                acc ^= chunk[p - offset] as u64;
                *reads += 1;
            }
        }
        AccessPattern::ReadAll => {
            let count = chunk.len() * 8 / width as usize;
            for i in 0..count {
                acc ^= read_field(chunk, i, width);
            }
            *reads += count as u64;
        }
    }
    black_box(acc)
}

/// Cycles over the representation with a TA entry per chunk that touches
/// memory according to `pattern`. Returns one record per cycle with the
/// counted reads in `entry_ops`.
pub fn access_pattern_microbench(fx: &Fixture, chunk_bytes: usize, page_bytes: usize, pattern: AccessPattern, cycles: usize) -> Result<Vec<ExperimentRecord>> {
    let plan = ChunkPlan::new(&fx.repr, chunk_bytes)?;
    let width = plan.entry_bits;
    let payload = &fx.repr.payload;
    let mut out = Vec::with_capacity(cycles);
    for c in 0..cycles {
        let mut reads = 0u64;
        let t0 = Instant::now();
        for k in 0..plan.num_chunks {
            ta_entry(black_box(plan.slice(payload, k)), plan.descriptor(k).byte_range.start, pattern, width, page_bytes, &mut reads);
        }
        let mut rec = fx.record(AccessPattern::ALL.iter().position(|&p| p == pattern).unwrap() as f64);
        rec.cycle = c as u64;
        rec.entry_ops = reads;
        rec.wall_us = t0.elapsed().as_nanos() as u64 / 1000;
        out.push(rec);
    }
    Ok(out)
}

/// Median of per-cycle wall time in nanoseconds for `pattern`.
pub fn median_cycle_nanos(fx: &Fixture, chunk_bytes: usize, page_bytes: usize, pattern: AccessPattern, cycles: usize) -> Result<u128> {
    let plan = ChunkPlan::new(&fx.repr, chunk_bytes)?;
    let mut t = Vec::with_capacity(cycles);
    let mut reads = 0u64;
    for _ in 0..cycles {
        let t0 = Instant::now();
        for k in 0..plan.num_chunks {
            ta_entry(black_box(plan.slice(&fx.repr.payload, k)), plan.descriptor(k).byte_range.start, pattern, plan.entry_bits, page_bytes, &mut reads);
        }
        t.push(t0.elapsed().as_nanos());
    }
    t.sort_unstable();
    Ok(t[t.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_is_exact() {
        let fx = Fixture::new(Scheme::Bloom, 256, 10, 1).unwrap();
        let mut buf = Vec::new();
        write_csv(&[fx.record(3.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().count(), 2);
        let mut empty = Vec::new();
        write_csv(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim_end(), CSV_HEADER);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [Scheme::SeqDiff, Scheme::Bloom, Scheme::Coc, Scheme::CocPartitioned, Scheme::Coo] {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("nope".parse::<Scheme>().is_err());
    }

    #[test]
    fn trend_statistics() {
        let flat = vec![5.0; 50];
        assert_eq!(trend(&flat), (0.0, 0.0));
        let line: Vec<f64> = (0..50).map(|i| 2.0 * i as f64 + 1.0).collect();
        let (b, t) = trend(&line);
        assert!((b - 2.0).abs() < 1e-12 && t.is_infinite());
        // reference slope and t from a hand computation on five points
        let (b, t) = trend(&[1.0, 3.0, 2.0, 5.0, 4.0]);
        assert!((b - 0.8).abs() < 1e-12);
        assert!((t - 0.8 / (3.6f64 / 3.0 / 10.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn batch_counts_are_deterministic() {
        let fx = Fixture::new(Scheme::Coc, 1024, 10, 3).unwrap();
        let cfg = TaConfig::default().with_chunk_bytes(256);
        let a = bench_batch(&fx, &cfg, &OramParams::default(), 50, 2).unwrap();
        let b = bench_batch(&fx, &cfg, &OramParams::default(), 50, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.entry_ops, x.page_ops, x.upkeep_ops), (y.entry_ops, y.page_ops, y.upkeep_ops));
            assert_eq!(x.latency_chunks, fx.ta(cfg.clone()).unwrap().num_chunks() as f64);
        }
    }

    #[test]
    fn oram_batch_is_linear() {
        let fx = Fixture::new(Scheme::Coo, 1024, 10, 4).unwrap();
        let p = OramParams::default().with_block_bytes(64);
        let per = fx.oram(p.clone()).unwrap().touches_per_query();
        for m in [1, 5, 17] {
            let r = bench_batch(&fx, &TaConfig::default(), &p, m, 1).unwrap();
            assert_eq!(r[0].oram_block_ops, per * m as u64);
        }
    }

    #[test]
    fn seqdiff_fill_dependent_steps_grow_logarithmically() {
        let fx = Fixture::new(Scheme::SeqDiff, 1024, 10, 5).unwrap();
        let cfg = TaConfig {
            search: crate::carousel::SearchDepth::FillDependent,
            ..TaConfig::default().with_chunk_bytes(256).with_capacity(1200)
        };
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let items = fx.workload(1100, 0.5, &mut rng);
        let ops: Vec<u64> = (1..=1100)
            .step_by(1)
            .filter(|m| m % 20 == 0 || (499..=502).contains(m) || (999..=1002).contains(m))
            .map(|m| batch_cycle(&fx, &cfg, &items[..m]).unwrap().0.page_ops)
            .collect();
        assert!(ops.windows(2).all(|w| w[0] <= w[1]));
        // growth within the first page slows as it fills
        let at = |m: usize| batch_cycle(&fx, &cfg, &items[..m]).unwrap().0.page_ops;
        let early = at(20) - at(10);
        let late = at(490) - at(480);
        assert!(early > late, "{early} {late}");
    }

    #[test]
    fn rate_zero_keeps_occupancy_zero() {
        let fx = Fixture::new(Scheme::Bloom, 512, 10, 6).unwrap();
        let cfg = TaConfig::default().with_chunk_bytes(256).with_capacity(64);
        let r = bench_steady(&fx, &cfg, 0.0, SteadyClock::Ops(1000), 30, Arrivals::Uniform).unwrap();
        assert!(r.records.iter().all(|x| x.occupancy == 0));
        assert!(!r.breakdown());
    }

    #[test]
    fn microbench_counts_reads() {
        let fx = Fixture::new(Scheme::Coc, 4096, 10, 7).unwrap();
        let bytes = fx.repr.payload.len();
        let w = 12;
        for (p, want) in [
            (AccessPattern::InvokeOnly, 0u64),
            (AccessPattern::ReadAll, (bytes * 8 / w) as u64),
        ] {
            let r = access_pattern_microbench(&fx, bytes, 4096, p, 2).unwrap();
            assert_eq!(r[0].entry_ops, want);
        }
        let r = access_pattern_microbench(&fx, bytes, 4096, AccessPattern::OnePerPage, 1).unwrap();
        assert_eq!(r[0].entry_ops, bytes.div_ceil(4096) as u64);
    }
}
