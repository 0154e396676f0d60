use std::net::TcpListener;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use carousel_pmt::bench::{Fixture, Scheme};
use carousel_pmt::carousel::TaConfig;
use carousel_pmt::keys::AttestationKey;
use carousel_pmt::repr::{codec, DirectProbe};
use carousel_pmt::service::net::{spawn, RemoteClient};
use carousel_pmt::service::{LookupService, ServiceConfig};

#[test]
fn concurrent_clients_over_tcp_with_retries() {
    let fx = Fixture::new(Scheme::CocPartitioned, 1 << 12, 10, 9).unwrap();
    let attest = AttestationKey::test();
    let cfg = ServiceConfig {
        ta: TaConfig::default().with_capacity(8).with_chunk_bytes(1024),
        tas: 2,
        max_pending: 4,
        seed: Some(3),
    };
    let svc = LookupService::new(&codec::to_bytes(&fx.repr), &fx.key, &attest, cfg).unwrap();
    let server = spawn(TcpListener::bind("127.0.0.1:0").unwrap(), svc).unwrap();
    let addr = server.addr;

    let probe = DirectProbe::new(&fx.repr);
    let workers: Vec<_> = (0..3u64)
        .map(|w| {
            let items = fx.workload(40, 0.5, &mut ChaCha20Rng::seed_from_u64(w));
            let vk = attest.verifying();
            let h = thread::spawn(move || {
                let mut c = RemoteClient::connect(addr, &vk).unwrap();
                c.query_many(&items).unwrap()
            });
            (fx.workload(40, 0.5, &mut ChaCha20Rng::seed_from_u64(w)), h)
        })
        .collect();
    for (items, h) in workers {
        let bits = h.join().unwrap();
        let want: Vec<bool> = items.iter().map(|q| probe.probe(q)).collect();
        assert_eq!(bits, want);
    }

    let wrong = AttestationKey::random(&mut rand::rngs::OsRng).verifying();
    assert!(RemoteClient::connect(addr, &wrong).is_err());
    server.shutdown();
}
