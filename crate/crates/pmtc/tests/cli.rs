use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Command, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_pmtc");

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("pmtc-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn pmtc(args: &[&str]) -> String {
    let out = Command::new(BIN).args(args).env_remove("PMT_TEST_KEYS").output().unwrap();
    assert!(
        out.status.success(),
        "pmtc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn members() -> Vec<String> {
    (0..64u128).map(|i| format!("{:032x}", i * 0x9e37_79b9 + 17)).collect()
}

fn build(dir: &PathBuf, scheme: &str) -> (String, String) {
    let dict = dir.join("dict.txt");
    std::fs::write(&dict, members().join("\n") + "\n").unwrap();
    let key = dir.join("provider.key");
    let repr = dir.join(format!("{scheme}.pmt"));
    let out = pmtc(&[
        "build",
        "--scheme",
        scheme,
        "--epsilon",
        "14",
        "--dict",
        dict.to_str().unwrap(),
        "--key",
        key.to_str().unwrap(),
        "--out",
        repr.to_str().unwrap(),
    ]);
    assert!(out.starts_with(&format!("{scheme} n=64 epsilon=14")), "{out}");
    assert!(key.exists());
    (repr.to_str().unwrap().into(), key.to_str().unwrap().into())
}

#[test]
fn harness_answers_match_direct_probe() {
    let dir = scratch("harness");
    for scheme in ["seqdiff", "bloom", "coc", "coc-part"] {
        let (repr, key) = build(&dir, scheme);
        let out = pmtc(&[
            "serve", "--repr", &repr, "--key", &key, "--tas", "2", "--chunk-bytes", "64", "--harness", "200",
        ]);
        assert!(out.contains("200 queries, 200 responses, 200 agree"), "{scheme}: {out}");
    }
}

#[test]
fn tcp_serve_and_query() {
    let dir = scratch("tcp");
    let (repr, key) = build(&dir, "coc");
    let mut server = Command::new(BIN)
        .args(["serve", "--repr", &repr, "--key", &key, "--listen", "127.0.0.1:0", "--chunk-bytes", "64"])
        .env_remove("PMT_TEST_KEYS")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(server.stdout.take().unwrap()).lines();
    let addr = lines.next().unwrap().unwrap().strip_prefix("listening on ").unwrap().to_string();
    let ta_key = lines.next().unwrap().unwrap().strip_prefix("attestation key ").unwrap().to_string();

    let m = members();
    let outsiders = ["ffffffffffffffffffffffffffff0001", "0123456789abcdef0123456789abcdef"];
    let mut args = vec!["query", "--connect", &addr, "--ta-key", &ta_key, &m[0], &m[5], &m[63]];
    args.extend(outsiders);
    let out = pmtc(&args);
    let _ = server.kill();
    let _ = server.wait();

    let bits: Vec<&str> = out.lines().map(|l| l.split(' ').nth(1).unwrap()).collect();
    assert_eq!(bits, ["1", "1", "1", "0", "0"], "{out}");

    let bad_key = "00".repeat(32);
    let fail = Command::new(BIN)
        .args(["query", "--connect", &addr, "--ta-key", &bad_key, &m[0]])
        .output()
        .unwrap();
    assert!(!fail.status.success());
}

#[test]
fn bench_emits_csv() {
    let dir = scratch("bench");
    let csv = dir.join("batch.csv");
    pmtc(&[
        "bench", "batch", "--scheme", "coc", "--n", "4096", "--m", "1,200", "--chunk-bytes", "4096", "--csv",
        csv.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut rows = text.lines();
    assert_eq!(
        rows.next().unwrap(),
        "scheme,n,epsilon,param,cycle,occupancy,entry_ops,page_ops,oram_block_ops,wall_us,latency_chunks"
    );
    let rows: Vec<Vec<&str>> = rows.map(|r| r.split(',').collect()).collect();
    assert!(rows.len() >= 2);
    assert!(rows.iter().all(|r| r[0] == "coc" && r[1] == "4096"));

    let out = pmtc(&["bench", "steady", "--scheme", "bloom", "--n", "1024", "--capacity", "32", "--chunk-bytes", "512", "--cycles", "20"]);
    assert!(out.starts_with("scheme,n,epsilon"));
    assert_eq!(out.lines().count(), 1 + 2 * 20);

    let out = pmtc(&["bench", "crossover", "--n", "4096", "--m", "1,64", "--block-bytes", "256"]);
    assert_eq!(out.lines().count(), 1 + 2);
}

#[test]
fn rejects_bad_input() {
    let out = Command::new(BIN).args(["bench", "batch", "--scheme", "nope"]).output().unwrap();
    assert!(!out.status.success());
    let out = Command::new(BIN).args(["serve", "--repr", "/nonexistent/x.pmt"]).output().unwrap();
    assert!(!out.status.success());
}
