use std::fs;
use std::io::{self, BufRead, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::rngs::OsRng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use carousel_pmt::bench::{self, AccessPattern, Arrivals, ExperimentRecord, Fixture, Scheme, SteadyClock};
use carousel_pmt::carousel::{SearchDepth, TaConfig};
use carousel_pmt::keys::{self, AttestationKey, ProviderKey};
use carousel_pmt::oram::OramParams;
use carousel_pmt::repr::{build, codec, BuildOptions};
use carousel_pmt::service::net::{self, RemoteClient};
use carousel_pmt::service::{LocalClient, LookupService, ServiceConfig};
use carousel_pmt::{Dictionary, ItemId, PmtParams};

#[derive(Parser)]
#[command(name = "pmtc", version, about = "Carousel private membership test")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build and seal a dictionary representation.
    Build(BuildArgs),
    /// Host a representation behind the lookup service.
    Serve(ServeArgs),
    /// Ask a running service about items.
    Query(QueryArgs),
    /// Run an experiment and emit CSV.
    Bench {
        #[command(subcommand)]
        which: BenchCmd,
    },
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, default_value = "coc")]
    scheme: Scheme,
    /// Synthetic dictionary size, ignored with --dict.
    #[arg(long, default_value_t = 1 << 16)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    epsilon: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// File with one 32-digit hex item per line.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Provider key file (hex); created when missing.
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    repr: PathBuf,
    #[arg(long, default_value_t = 1)]
    tas: usize,
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    capacity: usize,
    #[arg(long, default_value_t = 1 << 20)]
    chunk_bytes: usize,
    /// Skip the socket and answer this many random queries in-process.
    #[arg(long)]
    harness: Option<usize>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    connect: SocketAddr,
    /// Attestation verifying key in hex; defaults to the test key when
    /// PMT_TEST_KEYS is set.
    #[arg(long)]
    ta_key: Option<String>,
    /// Items as 32-digit hex.
    #[arg(required = true)]
    items: Vec<String>,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value = "coc")]
    scheme: Scheme,
    #[arg(long, default_value_t = 1 << 20)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    epsilon: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 256 * 1024)]
    chunk_bytes: usize,
    #[arg(long, default_value_t = 4096)]
    page_bytes: usize,
    /// TA capacity in queries; defaults to the scheme's reference capacity.
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    block_bytes: usize,
    /// Binary search over the filled part of each page only.
    #[arg(long)]
    fill_dependent: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    Cycles,
    Ops,
}

#[derive(Subcommand)]
enum BenchCmd {
    Batch {
        #[command(flatten)]
        c: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,64,170,171,512")]
        m: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    Steady {
        #[command(flatten)]
        c: Common,
        /// Arrival rates in queries per cycle. Without it, rates of 0.9 and
        /// 1.1 times the capacity are run.
        #[arg(long, value_delimiter = ',')]
        rate: Vec<f64>,
        /// Advance time per scan cycle, or by counted operations with one
        /// time unit equal to a full batch cycle.
        #[arg(long, value_enum, default_value = "cycles")]
        clock: ClockArg,
        #[arg(long, default_value_t = 500)]
        cycles: usize,
        #[arg(long)]
        poisson: bool,
    },
    Crossover {
        #[command(flatten)]
        c: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,8,16,32,64,128,256,512,1024,2048")]
        m: Vec<usize>,
    },
    Fpr {
        #[command(flatten)]
        c: Common,
        #[arg(long, default_value_t = 1_000_000)]
        probes: usize,
        #[arg(long, default_value_t = 4)]
        replicas: usize,
    },
    Microbench {
        #[command(flatten)]
        c: Common,
        #[arg(long, default_value_t = 100)]
        cycles: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Build(a) => cmd_build(a),
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::Query(a) => cmd_query(a),
        Cmd::Bench { which } => cmd_bench(which),
    }
}

fn provider_key(path: Option<&Path>, create: bool) -> Result<ProviderKey> {
    if let Some(p) = path {
        if p.exists() {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            return ProviderKey::from_hex(&text).ok_or_else(|| anyhow!("{} is not a 64-digit hex key", p.display()));
        }
        if create {
            let k = if keys::test_keys_enabled() {
                ProviderKey::test()
            } else {
                ProviderKey::random(&mut OsRng)
            };
            fs::write(p, k.to_hex() + "\n")?;
            return Ok(k);
        }
        bail!("key file {} not found", p.display());
    }
    if keys::test_keys_enabled() {
        Ok(ProviderKey::test())
    } else {
        bail!("no --key given and {} is not set", keys::TEST_KEYS_ENV)
    }
}

fn read_dictionary(p: &Path) -> Result<Dictionary> {
    let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
    let mut items = Vec::new();
    for (i, line) in io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        items.push(ItemId::from_hex(t).ok_or_else(|| anyhow!("line {}: bad item {t:?}", i + 1))?);
    }
    Ok(Dictionary::from_entries(items, 0))
}

fn cmd_build(a: BuildArgs) -> Result<()> {
    if a.scheme.is_oram() {
        bail!("coo uses the coc-part table; build that instead");
    }
    let dict = match &a.dict {
        Some(p) => read_dictionary(p)?,
        None => carousel_pmt::model::generate_dictionary(a.n, a.seed),
    };
    let key = provider_key(a.key.as_deref(), true)?;
    let params = PmtParams::new(dict.len()).with_epsilon(a.epsilon);
    let opts = BuildOptions::seeded(a.seed).partitioned(a.scheme.partitioned());
    let repr = build(a.scheme.kind(), &dict, &params, &opts)?.sealed(&key);
    let bytes = codec::to_bytes(&repr);
    fs::write(&a.out, &bytes).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{} n={} epsilon={} entries={} bytes={}",
        a.scheme,
        dict.len(),
        a.epsilon,
        repr.n_prime,
        bytes.len()
    );
    Ok(())
}

fn attestation_key() -> AttestationKey {
    if keys::test_keys_enabled() {
        AttestationKey::test()
    } else {
        AttestationKey::random(&mut OsRng)
    }
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let bytes = fs::read(&a.repr).with_context(|| format!("reading {}", a.repr.display()))?;
    let key = provider_key(a.key.as_deref(), false)?;
    let attest = attestation_key();
    let cfg = ServiceConfig {
        ta: TaConfig::default().with_capacity(a.capacity).with_chunk_bytes(a.chunk_bytes),
        tas: a.tas,
        ..ServiceConfig::default()
    };
    let mut svc = LookupService::new(&bytes, &key, &attest, cfg)?;
    if let Some(count) = a.harness {
        let repr = codec::from_bytes(&bytes, &key)?;
        let probe = carousel_pmt::repr::DirectProbe::new(&repr);
        let mut clients: Vec<LocalClient> = (0..a.tas.max(1))
            .map(|i| LocalClient::connect(&mut svc, &attest.verifying(), i as u64))
            .collect::<carousel_pmt::Result<_>>()?;
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut want = std::collections::HashMap::new();
        for i in 0..count {
            let k = clients.len();
            let c = &mut clients[i % k];
            let item = ItemId::random(&mut rng);
            let (tag, f) = c.query_frame(&item);
            want.insert((c.session(), tag), probe.probe(&item));
            if let Some((_, reply)) = svc.handle(&f).into_iter().next() {
                bail!("query refused: {reply:?}");
            }
        }
        let steps = svc.run_until_idle(usize::MAX)?;
        let mut agree = 0;
        let out = svc.take_outgoing();
        for (s, f) in &out {
            let c = clients.iter_mut().find(|c| c.session() == *s).expect("known session");
            let (tag, bit) = c.open_response(f)?;
            agree += (want[&(*s, tag)] == bit) as usize;
        }
        println!(
            "harness: {} queries, {} responses, {} agree with direct probe, {} invocations, latency {:?} chunks",
            count,
            out.len(),
            agree,
            steps,
            svc.latencies().iter().min().zip(svc.latencies().iter().max())
        );
        return Ok(());
    }
    let listener = TcpListener::bind(&a.listen).with_context(|| format!("binding {}", a.listen))?;
    let handle = net::spawn(listener, svc)?;
    println!("listening on {}", handle.addr);
    println!("attestation key {}", attest.verifying_hex());
    io::stdout().flush()?;
    handle.wait();
    Ok(())
}

fn cmd_query(a: QueryArgs) -> Result<()> {
    let vk = match &a.ta_key {
        Some(h) => keys::parse_verifying_key(h).ok_or_else(|| anyhow!("bad --ta-key"))?,
        None if keys::test_keys_enabled() => AttestationKey::test().verifying(),
        None => bail!("--ta-key is required unless {} is set", keys::TEST_KEYS_ENV),
    };
    let items = a
        .items
        .iter()
        .map(|s| ItemId::from_hex(s).ok_or_else(|| anyhow!("bad item {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    let mut c = RemoteClient::connect(a.connect, &vk)?;
    for (item, bit) in items.iter().zip(c.query_many(&items)?) {
        println!("{} {}", item.to_hex(), bit as u8);
    }
    Ok(())
}

fn ta_config(c: &Common) -> TaConfig {
    let base = TaConfig::kinibi(c.scheme.kind());
    let cap = c.capacity.unwrap_or(base.capacity);
    TaConfig {
        page_bytes: c.page_bytes,
        search: if c.fill_dependent {
            SearchDepth::FillDependent
        } else {
            SearchDepth::Fixed
        },
        ..base
            .with_chunk_bytes(c.chunk_bytes)
            .with_capacity(cap)
    }
}

fn emit(c: &Common, records: &[ExperimentRecord]) -> Result<()> {
    match &c.csv {
        Some(p) => bench::write_csv(records, fs::File::create(p)?)?,
        None => bench::write_csv(records, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_bench(which: BenchCmd) -> Result<()> {
    match which {
        BenchCmd::Batch { c, m, repeats } => {
            let fx = Fixture::new(c.scheme, c.n, c.epsilon, c.seed)?;
            let oram = OramParams::default().with_block_bytes(c.block_bytes);
            let mut out = Vec::new();
            for &mi in &m {
                out.extend(bench::bench_batch(&fx, &ta_config(&c), &oram, mi, repeats)?);
            }
            emit(&c, &out)
        }
        BenchCmd::Steady {
            c,
            rate,
            clock,
            cycles,
            poisson,
        } => {
            if c.scheme.is_oram() {
                bail!("steady-state runs apply to carousel schemes");
            }
            let fx = Fixture::new(c.scheme, c.n, c.epsilon, c.seed)?;
            let cfg = ta_config(&c);
            let (cap, t_ref) = bench::service_capacity(&fx, &cfg)?;
            let ks: Vec<usize> = (1..=4).map(|i| cap * i / 4).filter(|&k| k > 0).collect();
            let fixed = bench::fixed_occupancy_breakdown(&fx, &cfg, &ks)?;
            eprintln!("service capacity C={cap} queries per cycle, T(C)={t_ref} counted ops");
            for (k, t) in &fixed {
                eprintln!(
                    "fixed occupancy k={k}: T(k)={t}, sustainable {:.2} queries per reference cycle",
                    *k as f64 * t_ref as f64 / *t as f64
                );
            }
            let rates = if rate.is_empty() {
                vec![0.9 * cap as f64, 1.1 * cap as f64]
            } else {
                rate
            };
            let arrivals = if poisson { Arrivals::Poisson } else { Arrivals::Uniform };
            let mut out = Vec::new();
            for r in rates {
                let clock = match clock {
                    ClockArg::Cycles => SteadyClock::Cycles,
                    ClockArg::Ops => SteadyClock::Ops(t_ref),
                };
                let rep = bench::bench_steady(&fx, &cfg, r, clock, cycles, arrivals)?;
                eprintln!(
                    "rate {r:.1}: breakdown={} (trend slope {:.3}, t {:.2}, saturated {}), max backlog {}",
                    rep.breakdown(),
                    rep.slope,
                    rep.t_stat,
                    rep.saturated,
                    rep.max_backlog
                );
                out.extend(rep.records);
            }
            emit(&c, &out)
        }
        BenchCmd::Crossover { c, m } => {
            let car = Fixture::new(Scheme::Coc, c.n, c.epsilon, c.seed)?;
            let orm = car.sibling(Scheme::Coo)?;
            let oram = OramParams::default().with_block_bytes(c.block_bytes);
            let x = bench::crossover_analysis(&car, &orm, &oram, &m)?;
            let mut out = Vec::new();
            for row in &x.rows {
                eprintln!(
                    "m={:5} carousel={:10} oram={:10} ({} touches)",
                    row.m, row.carousel_cost, row.oram_cost, row.oram_touches
                );
                out.push(ExperimentRecord {
                    scheme: "crossover".into(),
                    n: c.n as u64,
                    epsilon: c.epsilon,
                    param: row.m as f64,
                    cycle: 0,
                    occupancy: row.m as u64,
                    entry_ops: row.carousel_cost,
                    page_ops: 0,
                    oram_block_ops: row.oram_touches,
                    wall_us: 0,
                    latency_chunks: 0.0,
                    upkeep_ops: 0,
                });
            }
            match x.m_star {
                Some(s) => eprintln!("crossover m* = {s}"),
                None => eprintln!("no crossover in range"),
            }
            emit(&c, &out)
        }
        BenchCmd::Fpr { c, probes, replicas } => {
            let fx = Fixture::new(c.scheme, c.n, c.epsilon, c.seed)?;
            let oram = OramParams::default().with_block_bytes(c.block_bytes);
            let members = fx.dict.entries().to_vec();
            let m = bench::measure_fpr(&fx, &ta_config(&c), &oram, &members, replicas)?;
            if m.positives != m.queries {
                bail!("{} false negatives", m.queries - m.positives);
            }
            let p = bench::non_member_probes(&fx, probes, c.seed ^ 0xf9);
            let r = bench::measure_fpr(&fx, &ta_config(&c), &oram, &p, replicas)?;
            println!(
                "{} n={} epsilon={} members={}/{} fpr={:.6e} ({} of {})",
                c.scheme,
                c.n,
                c.epsilon,
                m.positives,
                m.queries,
                r.rate(),
                r.positives,
                r.queries
            );
            Ok(())
        }
        BenchCmd::Microbench { c, cycles } => {
            let fx = Fixture::new(c.scheme, c.n, c.epsilon, c.seed)?;
            let mut out = Vec::new();
            for p in AccessPattern::ALL {
                let recs = bench::access_pattern_microbench(&fx, c.chunk_bytes, c.page_bytes, p, cycles)?;
                let mut w: Vec<u64> = recs.iter().map(|r| r.wall_us).collect();
                w.sort_unstable();
                eprintln!("{}: median {} us per cycle, {} reads", p.name(), w[w.len() / 2], recs[0].entry_ops);
                out.extend(recs);
            }
            emit(&c, &out)
        }
    }
}
