//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria run one after another so the wall-clock ordering check of
//! criterion 12 is not disturbed by the others. Set `PMT_FULL_SCALE=1` to
//! add the n = 2^26 size run to criterion 3, and `PMT_ONLY=3,9` to run a
//! subset.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use carousel_pmt::bench::{
    self, batch_cycle, bench_steady, crossover_analysis, measure_fpr, median_cycle_nanos, non_member_probes,
    service_capacity, AccessPattern, Arrivals, Fixture, Scheme, SteadyClock,
};
use carousel_pmt::bitpack::read_field;
use carousel_pmt::carousel::{CarouselTa, QueryInput, TaConfig};
use carousel_pmt::keys::AttestationKey;
use carousel_pmt::oblivious::AccessCounter;
use carousel_pmt::oram::{OramParams, OramState};
use carousel_pmt::repr::{codec, cuckoo_quarter, DirectProbe, ReprKind};
use carousel_pmt::service::{LocalClient, LookupService, ServiceConfig};
use carousel_pmt::ItemId;

type Outcome = Result<String, String>;

const SEED: u64 = 2024;

// Tolerances.
const SIZE_TOL: f64 = 0.02;
const DUMMY_BAND: (f64, f64) = (0.015, 0.025);
const ADMIT_TOL: f64 = 0.01;
const STASH_BOUND: usize = 64;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<T: std::fmt::Debug>(x: T) -> String {
    format!("{x:?}")
}

fn large(scheme: Scheme) -> &'static Fixture {
    static SEQ: OnceLock<Fixture> = OnceLock::new();
    static BLOOM: OnceLock<Fixture> = OnceLock::new();
    static COC: OnceLock<Fixture> = OnceLock::new();
    let cell = match scheme {
        Scheme::SeqDiff => &SEQ,
        Scheme::Bloom => &BLOOM,
        _ => &COC,
    };
    cell.get_or_init(|| Fixture::new(scheme, 1 << 20, 10, SEED).expect("n=2^20 fixture"))
}

fn reference_config(kind: ReprKind) -> TaConfig {
    TaConfig::kinibi(kind)
}

fn c1_no_false_negatives() -> Outcome {
    let n = 1 << 16;
    let total = 100_000;
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let mut parts = Vec::new();
    for s in [Scheme::SeqDiff, Scheme::Bloom, Scheme::Coc, Scheme::Coo] {
        let fx = Fixture::new(s, n, 10, SEED).map_err(e)?;
        let members: Vec<ItemId> = fx
            .dict
            .entries()
            .iter()
            .copied()
            .chain((0..total - n).map(|_| fx.dict.entries()[rng.gen_range(0..n)]))
            .collect();
        let oram = OramParams::default().with_block_bytes(256);
        let r = measure_fpr(&fx, &reference_config(s.kind()), &oram, &members, 1).map_err(e)?;
        let negatives = r.queries - r.positives;
        ensure(r.queries == total as u64, "wrong probe count")?;
        ensure(negatives == 0, format!("{s}: {negatives} false negatives"))?;
        parts.push(format!("{s} 0/{total}"));
    }
    Ok(format!("negatives {}", parts.join(", ")))
}

fn c2_fpr() -> Outcome {
    let n = 1 << 16;
    let probes = 1_000_000;
    let mut parts = Vec::new();
    for eps in [10u32, 14] {
        let lo = 2f64.powi(-(eps as i32 + 1));
        let hi = 2f64.powi(-(eps as i32 - 1));
        for s in Scheme::CAROUSEL {
            let fx = Fixture::new(s, n, eps, SEED + eps as u64).map_err(e)?;
            let p = non_member_probes(&fx, probes, SEED ^ eps as u64);
            let r = measure_fpr(&fx, &reference_config(s.kind()), &OramParams::default(), &p, 1).map_err(e)?;
            let rate = r.rate();
            ensure(
                (lo..=hi).contains(&rate),
                format!("{s} eps={eps}: fpr {rate:.3e} outside [{lo:.3e}, {hi:.3e}]"),
            )?;
            parts.push(format!("{s}/{eps}={rate:.3e}"));
        }
    }
    Ok(parts.join(" "))
}

fn c3_sizes() -> Outcome {
    let n = (1u64 << 20) as f64;
    let eps = 10.0;
    let mut parts = Vec::new();
    for (s, formula) in [
        (Scheme::SeqDiff, 1.02 * (eps + 2.0) * n),
        (Scheme::Bloom, 1.44 * eps * n),
        (Scheme::Coc, 1.03 * (eps + 2.0) * n),
    ] {
        let fx = large(s);
        let bytes = codec::to_bytes(&fx.repr);
        let bits = fx.repr.payload.len() as f64 * 8.0;
        let dev = (bits - formula).abs() / formula;
        ensure(dev <= SIZE_TOL, format!("{s}: {bits} bits vs {formula} ({:.2}%)", dev * 100.0))?;
        parts.push(format!("{s} {:.2}% ({} bytes serialized)", dev * 100.0, bytes.len()));
    }
    if std::env::var("PMT_FULL_SCALE").map(|v| v == "1").unwrap_or(false) {
        for (s, mb) in [(Scheme::SeqDiff, 97.74), (Scheme::Bloom, 115.2), (Scheme::Coc, 98.88)] {
            let fx = Fixture::new(s, 1 << 26, 10, SEED).map_err(e)?;
            let got = fx.repr.payload.len() as f64 / (1u64 << 20) as f64;
            let dev = (got - mb).abs() / mb;
            ensure(dev <= SIZE_TOL, format!("{s} full scale {got:.2} MB vs {mb}"))?;
            parts.push(format!("{s}@2^26 {got:.2} MB"));
        }
    } else {
        parts.push("n=2^26 run skipped".into());
    }
    Ok(parts.join(", "))
}

fn c4_dummy_fraction() -> Outcome {
    let fx = large(Scheme::SeqDiff);
    let f = fx.repr.dummy_count() as f64 / fx.params.n as f64;
    ensure(
        (DUMMY_BAND.0..=DUMMY_BAND.1).contains(&f),
        format!("dummy fraction {f:.4} outside {DUMMY_BAND:?}"),
    )?;
    Ok(format!("dummy fraction {f:.4}"))
}

fn small_service(s: Scheme, n: usize, tas: usize, chunk: usize, seed: u64) -> Result<(LookupService, Fixture), String> {
    let fx = Fixture::new(s, n, 10, SEED).map_err(e)?;
    let bytes = codec::to_bytes(&fx.repr);
    let cfg = ServiceConfig {
        ta: TaConfig::default().with_capacity(4096).with_chunk_bytes(chunk),
        tas,
        max_pending: 1 << 16,
        seed: Some(seed),
    };
    let svc = LookupService::new(&bytes, &fx.key, &AttestationKey::test(), cfg).map_err(e)?;
    Ok((svc, fx))
}

fn c5_exact_latency() -> Outcome {
    let total = 10_000;
    let mut parts = Vec::new();
    for s in Scheme::CAROUSEL {
        let (mut svc, fx) = small_service(s, 1 << 12, 2, 512, SEED)?;
        let vk = AttestationKey::test().verifying();
        let mut clients: Vec<LocalClient> =
            (0..4).map(|i| LocalClient::connect(&mut svc, &vk, i).map_err(e)).collect::<Result<_, _>>()?;
        let mut rng = ChaCha20Rng::seed_from_u64(SEED ^ 5);
        let mut sent = 0;
        while sent < total {
            let burst = rng.gen_range(0..25).min(total - sent);
            for _ in 0..burst {
                let q = fx.workload(1, 0.5, &mut rng)[0];
                let c = rng.gen_range(0..clients.len());
                ensure(svc.handle(&clients[c].query_frame(&q).1).is_empty(), "query refused")?;
            }
            sent += burst;
            for _ in 0..rng.gen_range(1..4) {
                svc.step().map_err(e)?;
            }
        }
        svc.run_until_idle(1 << 20).map_err(e)?;
        let n_chunks = svc.num_chunks() as u64;
        let lat = svc.latencies();
        ensure(lat.len() == total, format!("{s}: {} of {total} responses", lat.len()))?;
        let off = lat.iter().filter(|&&l| l != n_chunks).count();
        ensure(off == 0, format!("{s}: {off} responses not released after exactly {n_chunks} chunks"))?;
        parts.push(format!("{s} {total}/{total} at {n_chunks} chunks"));
    }
    Ok(parts.join(", "))
}

type Trace = Vec<(AccessCounter, AccessCounter, usize)>;

fn counter_trace(fx: &Fixture, items: &[ItemId], schedule: &[(usize, usize)], invocations: usize) -> Result<Trace, String> {
    let cfg = TaConfig::default().with_capacity(256).with_chunk_bytes(1024);
    let mut ta: CarouselTa = fx.ta(cfg).map_err(e)?;
    let mut trace = Vec::with_capacity(invocations);
    let mut used = 0;
    for inv in 0..invocations {
        let count = schedule.iter().find(|x| x.0 == inv).map(|x| x.1).unwrap_or(0);
        let batch: Vec<QueryInput> = items[used..used + count]
            .iter()
            .enumerate()
            .map(|(i, &item)| QueryInput {
                query_id: (used + i) as u64,
                item,
            })
            .collect();
        used += count;
        let k = ta.next_chunk() as usize;
        let chunk = ta.plan().slice(&fx.repr.payload, k);
        let meta = ta.plan().meta(k);
        ta.invoke(chunk, meta, &batch).map_err(e)?;
        trace.push((ta.scan_counter().clone(), ta.upkeep_counter().clone(), ta.occupancy()));
    }
    Ok(trace)
}

fn c6_oblivious_invariance() -> Outcome {
    let schedule = [(0usize, 40usize), (2, 25), (5, 30), (9, 12)];
    let need: usize = schedule.iter().map(|x| x.1).sum();
    let mut rng = ChaCha20Rng::seed_from_u64(SEED ^ 6);
    let mut parts = Vec::new();
    for s in [Scheme::SeqDiff, Scheme::Bloom, Scheme::Coc, Scheme::CocPartitioned] {
        let fx = Fixture::new(s, 1 << 12, 10, SEED).map_err(e)?;
        let invocations = 3 * fx.ta(TaConfig::default().with_chunk_bytes(1024)).map_err(e)?.num_chunks();
        let mut reference: Option<Trace> = None;
        for trial in 0..100 {
            let items: Vec<ItemId> = if trial % 3 == 0 {
                // few distinct values, so many duplicates
                let pool = fx.workload(7, 0.5, &mut rng);
                (0..need).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
            } else {
                fx.workload(need, rng.gen_range(0.0..=1.0), &mut rng)
            };
            let t = counter_trace(&fx, &items, &schedule, invocations)?;
            match &reference {
                None => reference = Some(t),
                Some(r) => ensure(*r == t, format!("{s}: counters differ in trial {trial}"))?,
            }
        }
        parts.push(format!("{s} 100/100"));
    }

    // ORAM accesses
    let fx = Fixture::new(Scheme::Coo, 1 << 12, 10, SEED).map_err(e)?;
    let mut o = fx.oram(OramParams::default().with_block_bytes(64)).map_err(e)?;
    let mut first = None;
    for _ in 0..100 {
        let q = fx.workload(1, 0.5, &mut rng)[0];
        o.reset_counters();
        o.coo_query(&q).map_err(e)?;
        let c = o.counters().clone();
        match &first {
            None => first = Some(c),
            Some(f) => ensure(*f == c, "coo: ORAM counters differ")?,
        }
    }
    parts.push("coo 100/100".into());

    // host-visible transcript under permuted and fresh query values
    let plan: Vec<Vec<usize>> = (0..40).map(|_| (0..3).map(|_| rng.gen_range(0..4)).collect()).collect();
    let total: usize = plan.iter().flatten().sum();
    let base = Fixture::new(Scheme::Coc, 1 << 12, 10, SEED).map_err(e)?.workload(total, 0.5, &mut rng);
    let mut permuted = base.clone();
    permuted.reverse();
    let fresh = Fixture::new(Scheme::Coc, 1 << 12, 10, SEED).map_err(e)?.workload(total, 0.1, &mut rng);
    let mut transcripts = Vec::new();
    for values in [&base, &permuted, &fresh] {
        let (mut svc, _) = small_service(Scheme::Coc, 1 << 12, 2, 1024, rng.next_u64())?;
        let vk = AttestationKey::test().verifying();
        let mut clients: Vec<LocalClient> =
            (0..3).map(|i| LocalClient::connect(&mut svc, &vk, 100 + i).map_err(e)).collect::<Result<_, _>>()?;
        let mut next = 0;
        for step in &plan {
            for (c, &k) in step.iter().enumerate() {
                for _ in 0..k {
                    svc.handle(&clients[c].query_frame(&values[next]).1);
                    next += 1;
                }
            }
            svc.step().map_err(e)?;
        }
        svc.run_until_idle(1 << 16).map_err(e)?;
        transcripts.push(svc.transcript().to_vec());
    }
    ensure(
        transcripts[0] == transcripts[1] && transcripts[0] == transcripts[2],
        "host transcript depends on query values",
    )?;
    parts.push(format!("transcript identical over {} invocations", transcripts[0].len()));
    Ok(parts.join(", "))
}

fn c7_oracle_equivalence() -> Outcome {
    let n = 1 << 12;
    let mut parts = Vec::new();
    for s in [Scheme::SeqDiff, Scheme::Bloom, Scheme::Coc, Scheme::CocPartitioned] {
        let fx = Fixture::new(s, n, 10, SEED).map_err(e)?;
        let probe = DirectProbe::new(&fx.repr);
        let mut items: Vec<ItemId> = fx.dict.entries().to_vec();
        items.extend(non_member_probes(&fx, n, SEED ^ 7));
        let cfg = TaConfig::default().with_capacity(1024).with_chunk_bytes(2048);
        let mut ta = fx.ta(cfg).map_err(e)?;
        let mut answers = HashMap::new();
        for (b, batch) in items.chunks(1024).enumerate() {
            let inputs: Vec<QueryInput> = batch
                .iter()
                .enumerate()
                .map(|(i, &item)| QueryInput {
                    query_id: (b * 1024 + i) as u64,
                    item,
                })
                .collect();
            for r in bench::run_cycle(&mut ta, &fx.repr.payload, &inputs).map_err(e)? {
                answers.insert(r.query_id, r.member);
            }
        }
        ensure(answers.len() == items.len(), format!("{s}: missing answers"))?;
        let mut fp = 0;
        for (i, q) in items.iter().enumerate() {
            let want = probe.probe(q);
            ensure(answers[&(i as u64)] == want, format!("{s}: probe {i} disagrees with direct probe"))?;
            if i < n {
                ensure(want, format!("{s}: member {i} rejected"))?;
            } else {
                fp += want as usize;
            }
        }
        parts.push(format!("{s} {}/{} agree ({fp} fp)", items.len(), items.len()));
    }

    // Path ORAM against a plain array
    let fx = Fixture::new(Scheme::Coo, n, 10, SEED).map_err(e)?;
    let mut o = fx.oram(OramParams::default().with_block_bytes(64)).map_err(e)?;
    let ops = oram_against_array(&fx, &mut o, 10_000, false)?;
    parts.push(format!("oram {ops} ops match array"));
    Ok(parts.join(", "))
}

/// Random reads and writes checked against an array built from the cuckoo
/// table; optionally audits the tree after every access.
fn oram_against_array(fx: &Fixture, o: &mut OramState, ops: usize, audit: bool) -> Result<usize, String> {
    let bits = fx.repr.item_bits;
    let spb = o.slots_per_block();
    let bb = o.params().block_bytes;
    let mut array: Vec<Vec<Vec<u8>>> = Vec::new();
    for t in 0..o.tree_count() {
        let (lo, len) = cuckoo_quarter(fx.repr.n_prime, t);
        let blocks = o.geometry(t).blocks;
        let mut tree = Vec::with_capacity(blocks);
        for b in 0..blocks {
            let mut block = vec![0u8; bb];
            for k in 0..spb {
                let s = b * spb + k;
                if (s as u64) < len {
                    let v = read_field(&fx.repr.payload, (lo + s as u64) as usize, bits);
                    carousel_pmt::bitpack::write_field(&mut block, k, bits, v);
                }
            }
            tree.push(block);
        }
        array.push(tree);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(SEED ^ 0x0a);
    for i in 0..ops {
        let t = rng.gen_range(0..array.len());
        let b = rng.gen_range(0..array[t].len());
        if rng.gen_bool(0.5) {
            let got = o.read(t, b).map_err(e)?;
            ensure(got == array[t][b], format!("op {i}: read of block {b} in tree {t} differs"))?;
        } else {
            let mut d = vec![0u8; bb];
            rng.fill_bytes(&mut d);
            o.write(t, b, &d).map_err(e)?;
            array[t][b] = d;
        }
        if audit {
            o.audit().map_err(|x| format!("audit after op {i}: {x:?}"))?;
        }
    }
    Ok(ops)
}

fn steps(fx: &Fixture, cfg: &TaConfig, max_m: usize) -> Result<Vec<usize>, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(SEED ^ 8);
    let items = fx.workload(max_m, 0.5, &mut rng);
    let cfg = cfg.clone().with_capacity(max_m);
    let mut prev = None;
    let mut out = Vec::new();
    for m in 1..=max_m {
        let ops = batch_cycle(fx, &cfg, &items[..m]).map_err(e)?.0.page_ops;
        if let Some(p) = prev {
            ensure(ops >= p, format!("page ops fell at m={m}"))?;
            if ops > p {
                out.push(m - 1);
            }
        }
        prev = Some(ops);
    }
    Ok(out)
}

fn c8_page_steps() -> Outcome {
    let mut parts = Vec::new();
    for (s, eps, max_m, step) in [
        (Scheme::Coc, 14, 520, 170),
        (Scheme::SeqDiff, 10, 1010, 500),
        (Scheme::CocPartitioned, 14, 1400, 680),
    ] {
        let fx = Fixture::new(s, 1 << 12, eps, SEED).map_err(e)?;
        let got = steps(&fx, &TaConfig::default().with_chunk_bytes(1 << 16), max_m)?;
        let want: Vec<usize> = (1..=max_m / step).map(|k| k * step).filter(|&m| m < max_m).collect();
        ensure(got == want, format!("{s}: steps after {got:?}, expected {want:?}"))?;
        parts.push(format!("{s} steps after {got:?}"));
    }
    Ok(parts.join(", "))
}

fn c9_crossover() -> Outcome {
    let car = large(Scheme::Coc);
    let orm = car.sibling(Scheme::Coo).map_err(e)?;
    let ms = [1, 2, 3, 4, 5, 6, 8, 16, 32, 64, 128, 256, 512, 1024, 2048];
    let oram = OramParams::default().with_block_bytes(4096);
    let x = crossover_analysis(car, &orm, &oram, &ms).map_err(e)?;
    let base = x.rows[0].carousel_cost as f64;
    for r in &x.rows {
        let dev = (r.carousel_cost as f64 - base) / base;
        ensure(dev.abs() <= ADMIT_TOL, format!("carousel cost at m={} drifts {:.3}%", r.m, dev * 100.0))?;
    }
    let o = orm.oram(oram.clone()).map_err(e)?;
    let h = o.geometry(0).height as u64;
    ensure((0..4).all(|t| o.geometry(t).height as u64 == h), "trees differ in height")?;
    let slope = 4 * (h + 1) * oram.z as u64;
    ensure(x.touches_per_query == slope, "touch formula")?;
    for r in &x.rows {
        ensure(r.oram_touches == slope * r.m as u64, format!("oram touches at m={} not linear", r.m))?;
    }
    let ratios: Vec<f64> = x.rows.iter().map(|r| r.carousel_cost as f64 / r.oram_cost as f64).collect();
    ensure(ratios.windows(2).all(|w| w[1] < w[0]), "cost ratio not strictly decreasing")?;
    let m_star = x.m_star.ok_or("no crossover in range")?;
    for r in &x.rows {
        let carousel_cheaper = r.carousel_cost < r.oram_cost;
        ensure(carousel_cheaper == (r.m >= m_star), format!("crossover violated at m={}", r.m))?;
    }
    ensure(x.rows[0].oram_cost < x.rows[0].carousel_cost, "ORAM not cheaper at m=1")?;
    Ok(format!(
        "m*={m_star}, ORAM slope {slope} touches/query (height {h}, Z={}), carousel drift <= {:.2}%",
        oram.z,
        x.rows
            .iter()
            .map(|r| (r.carousel_cost as f64 - base) / base * 100.0)
            .fold(0.0, f64::max)
    ))
}

fn c10_oram_health() -> Outcome {
    // stash over 10^5 accesses
    let blocks = 1 << 12;
    let data: Vec<Vec<u8>> = (0..blocks).map(|i| (i as u32).to_le_bytes().repeat(4)).collect();
    let params = OramParams {
        block_bytes: 16,
        tree_count: 1,
        stash_bound: STASH_BOUND,
        ..OramParams::default()
    };
    let mut o = OramState::with_blocks(params, vec![data], SEED).map_err(e)?;
    let mut rng = ChaCha20Rng::seed_from_u64(SEED ^ 10);
    for _ in 0..100_000 {
        o.read(0, rng.gen_range(0..blocks)).map_err(e)?;
    }
    let max = o.max_stash();
    ensure(max <= STASH_BOUND, format!("stash reached {max}"))?;

    // audit after every access
    let fx = Fixture::new(Scheme::Coo, 1 << 12, 10, SEED).map_err(e)?;
    let mut o2 = fx.oram(OramParams::default().with_block_bytes(64)).map_err(e)?;
    o2.audit().map_err(e)?;
    let ops = oram_against_array(&fx, &mut o2, 10_000, true)?;
    Ok(format!("max stash {max} over 1e5 accesses, {ops} audited accesses"))
}

fn c11_breakdown() -> Outcome {
    let mut parts = Vec::new();
    for s in Scheme::CAROUSEL {
        let fx = Fixture::new(s, 1 << 14, 10, SEED).map_err(e)?;
        let cfg = TaConfig::default().with_capacity(128).with_chunk_bytes(4096);
        let (c, _) = service_capacity(&fx, &cfg).map_err(e)?;
        let over = bench_steady(&fx, &cfg, 1.1 * c as f64, SteadyClock::Cycles, 500, Arrivals::Uniform).map_err(e)?;
        let under = bench_steady(&fx, &cfg, 0.9 * c as f64, SteadyClock::Cycles, 500, Arrivals::Uniform).map_err(e)?;
        ensure(over.breakdown(), format!("{s}: 1.1C not flagged (t={:.2})", over.t_stat))?;
        ensure(
            !under.breakdown(),
            format!("{s}: 0.9C flagged (slope {:.4}, t {:.2}, saturated {})", under.slope, under.t_stat, under.saturated),
        )?;
        ensure(under.max_backlog <= c, format!("{s}: backlog {} at 0.9C", under.max_backlog))?;
        parts.push(format!(
            "{s} C={c}: 1.1C slope {:.2}/cycle, 0.9C max backlog {}",
            over.slope, under.max_backlog
        ));
    }
    Ok(parts.join(", "))
}

fn c12_access_patterns() -> Outcome {
    let fx = large(Scheme::Coc);
    let chunk = 256 * 1024;
    let med: Vec<u128> = AccessPattern::ALL
        .iter()
        .map(|&p| median_cycle_nanos(fx, chunk, 4096, p, 100))
        .collect::<Result<_, _>>()
        .map_err(e)?;
    ensure(
        med[2] > med[1] && med[1] > med[0],
        format!("medians invoke/one/all = {med:?} ns not ordered"),
    )?;
    Ok(format!(
        "median cycle ns: invoke-only {} < one-per-page {} < read-all {} (Y = {} bytes)",
        med[0],
        med[1],
        med[2],
        fx.repr.payload.len()
    ))
}

#[test]
fn acceptance() {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "no false negatives", c1_no_false_negatives),
        (2, "false positive rate", c2_fpr),
        (3, "representation sizes", c3_sizes),
        (4, "seqdiff dummy fraction", c4_dummy_fraction),
        (5, "exact-cycle latency", c5_exact_latency),
        (6, "oblivious invariance", c6_oblivious_invariance),
        (7, "oracle equivalence", c7_oracle_equivalence),
        (8, "page-step structure", c8_page_steps),
        (9, "carousel/ORAM crossover", c9_crossover),
        (10, "ORAM health", c10_oram_health),
        (11, "breakdown detection", c11_breakdown),
        (12, "access-pattern ordering", c12_access_patterns),
    ];
    let only: Option<Vec<u32>> = std::env::var("PMT_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("criterion {id:2} PASS {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                println!("criterion {id:2} FAIL {name}: {why} [{secs:.1}s]");
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
