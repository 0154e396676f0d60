//! Untrusted host side of the lookup service: it keeps `Y`, feeds chunks to
//! one or more trusted applications in order, and relays encrypted traffic.
//!
//! The TA boundary is an in-process interface. A [`TrustedApp`] sees only the
//! chunk buffer and sealed query messages handed to [`TrustedApp::invoke`].

pub mod channel;
pub mod net;
pub mod wire;

use std::collections::{HashMap, VecDeque};

use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::carousel::{CarouselTa, ChunkMeta, QueryInput, TaConfig};
use crate::error::{PmtError, Result};
use crate::keys::{AttestationKey, ProviderKey};
use crate::repr::codec;

use channel::{
    parse_query_plaintext, response_plaintext, sealed_header, ta_accept, SecureChannel,
};
use wire::{Frame, FrameType, Reject, RejectCode};

/// Sealed query as the CA hands it over.
#[derive(Clone, Debug)]
pub struct SealedQuery {
    pub session: u64,
    pub bytes: Vec<u8>,
}

/// Results of one TA entry.
#[derive(Debug, Default)]
pub struct TaOutput {
    pub responses: Vec<(u64, Vec<u8>)>,
    pub rejects: Vec<Reject>,
    /// Sequence numbers of the invocation that admitted and released each
    /// response, in the same order as `responses`.
    pub timing: Vec<(u64, u64)>,
}

/// A carousel TA plus its channel endpoints.
pub struct TrustedApp {
    ta: CarouselTa,
    attest: AttestationKey,
    channels: HashMap<u64, SecureChannel>,
    owners: HashMap<u64, (u64, u64)>,
    next_qid: u64,
    rng: ChaCha20Rng,
}

impl TrustedApp {
    pub fn new(repr_bytes: &[u8], key: &ProviderKey, attest: AttestationKey, config: TaConfig, seed: u64) -> Result<Self> {
        Ok(TrustedApp {
            ta: CarouselTa::provision_bytes(repr_bytes, key, config)?,
            attest,
            channels: HashMap::new(),
            owners: HashMap::new(),
            next_qid: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
        })
    }

    pub fn carousel(&self) -> &CarouselTa {
        &self.ta
    }

    pub fn has_session(&self, session: u64) -> bool {
        self.channels.contains_key(&session)
    }

    /// Handles a HELLO payload and returns the ATTEST payload.
    pub fn attest(&mut self, session: u64, hello: &[u8]) -> Result<Vec<u8>> {
        let (ch, out) = ta_accept(&mut self.rng, &self.attest, session, hello)?;
        self.channels.insert(session, ch);
        Ok(out)
    }

    pub fn invoke(&mut self, chunk: &[u8], meta: ChunkMeta, queries: &[SealedQuery]) -> Result<TaOutput> {
        let mut out = TaOutput::default();
        let mut inputs = Vec::with_capacity(queries.len());
        for q in queries {
            let seq = sealed_header(&q.bytes).map(|h| h.1).unwrap_or(0);
            let Some(ch) = self.channels.get_mut(&q.session) else {
                out.rejects.push(Reject {
                    session: q.session,
                    code: RejectCode::UnknownSession,
                    seq,
                });
                continue;
            };
            match ch.open(&q.bytes).and_then(|p| parse_query_plaintext(&p)) {
                Ok((item, tag)) => {
                    let qid = self.next_qid;
                    self.next_qid += 1;
                    self.owners.insert(qid, (q.session, tag));
                    inputs.push(QueryInput { query_id: qid, item });
                }
                Err(_) => {
                    self.channels.remove(&q.session);
                    out.rejects.push(Reject {
                        session: q.session,
                        code: RejectCode::ChannelTeardown,
                        seq,
                    });
                }
            }
        }
        for r in self.ta.invoke(chunk, meta, &inputs)? {
            let (session, tag) = self.owners.remove(&r.query_id).expect("released query has an owner");
            if let Some(ch) = self.channels.get_mut(&session) {
                out.responses.push((session, ch.seal(&mut self.rng, &response_plaintext(tag, r.member))));
                out.timing.push((r.arrival, r.released));
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub ta: TaConfig,
    pub tas: usize,
    /// Queries waiting for TA capacity, per TA, before rejecting.
    pub max_pending: usize,
    pub seed: Option<u64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            ta: TaConfig::default(),
            tas: 1,
            max_pending: 4096,
            seed: None,
        }
    }
}

/// What the host observes during one TA invocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaEvent {
    pub ta: usize,
    pub sequence: u64,
    pub chunk: u32,
    pub chunk_bytes: usize,
    pub query_count: usize,
    pub query_bytes: usize,
    pub response_count: usize,
    pub response_bytes: usize,
    pub reject_count: usize,
}

struct TaSlot {
    app: TrustedApp,
    pending: VecDeque<SealedQuery>,
}

/// The CA: owns `Y`, schedules chunks, routes frames.
pub struct LookupService {
    payload: Vec<u8>,
    tas: Vec<TaSlot>,
    sessions: HashMap<u64, usize>,
    next_session: u64,
    rr: usize,
    max_pending: usize,
    outbox: VecDeque<(u64, Frame)>,
    transcript: Vec<CaEvent>,
    latencies: Vec<u64>,
}

impl LookupService {
    /// Provisions `config.tas` TA replicas from the serialized
    /// representation; each authenticates it independently.
    pub fn new(repr_bytes: &[u8], key: &ProviderKey, attest: &AttestationKey, config: ServiceConfig) -> Result<Self> {
        if config.tas == 0 {
            return Err(PmtError::InvalidParams("at least one TA".into()));
        }
        let seed = config.seed.unwrap_or_else(|| OsRng.next_u64());
        let tas = (0..config.tas)
            .map(|i| {
                let app = TrustedApp::new(repr_bytes, key, attest.clone(), config.ta.clone(), seed.wrapping_add(i as u64))?;
                Ok(TaSlot {
                    app,
                    pending: VecDeque::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let payload = codec::from_bytes_unverified(repr_bytes)?.payload;
        Ok(LookupService {
            payload,
            tas,
            sessions: HashMap::new(),
            next_session: 1,
            rr: 0,
            max_pending: config.max_pending,
            outbox: VecDeque::new(),
            transcript: Vec::new(),
            latencies: Vec::new(),
        })
    }

    pub fn ta_count(&self) -> usize {
        self.tas.len()
    }

    pub fn ta(&self, i: usize) -> &TrustedApp {
        &self.tas[i].app
    }

    pub fn num_chunks(&self) -> usize {
        self.tas[0].app.ta.num_chunks()
    }

    /// TA serving `session`.
    pub fn session_ta(&self, session: u64) -> Option<usize> {
        self.sessions.get(&session).copied()
    }

    /// Resident plus waiting queries across all TAs.
    pub fn backlog(&self) -> usize {
        self.tas.iter().map(|t| t.app.ta.occupancy() + t.pending.len()).sum()
    }

    pub fn transcript(&self) -> &[CaEvent] {
        &self.transcript
    }

    pub fn clear_transcript(&mut self) {
        self.transcript.clear();
    }

    /// Chunk latency of every response delivered so far.
    pub fn latencies(&self) -> &[u64] {
        &self.latencies
    }

    /// Handles one inbound frame. Replies to HELLO and rejections come back
    /// at once; responses are queued for [`Self::take_outgoing`].
    pub fn handle(&mut self, frame: &Frame) -> Vec<(u64, Frame)> {
        match frame.ty {
            FrameType::Hello => {
                let session = self.next_session;
                self.next_session += 1;
                let ta = self.rr;
                self.rr = (self.rr + 1) % self.tas.len();
                match self.tas[ta].app.attest(session, &frame.payload) {
                    Ok(p) => {
                        self.sessions.insert(session, ta);
                        vec![(session, Frame::new(FrameType::Attest, p))]
                    }
                    Err(_) => vec![(session, reject(session, RejectCode::Malformed, 0))],
                }
            }
            FrameType::Query => {
                let Ok((session, seq)) = sealed_header(&frame.payload) else {
                    return vec![(0, reject(0, RejectCode::Malformed, 0))];
                };
                let Some(&ta) = self.sessions.get(&session) else {
                    return vec![(session, reject(session, RejectCode::UnknownSession, seq))];
                };
                let slot = &mut self.tas[ta];
                if slot.pending.len() >= self.max_pending {
                    return vec![(session, reject(session, RejectCode::Capacity, seq))];
                }
                slot.pending.push_back(SealedQuery {
                    session,
                    bytes: frame.payload.clone(),
                });
                Vec::new()
            }
            _ => vec![(0, reject(0, RejectCode::Malformed, 0))],
        }
    }

    /// One invocation of every TA with its next chunk.
    pub fn step(&mut self) -> Result<()> {
        for i in 0..self.tas.len() {
            let slot = &mut self.tas[i];
            let ta = &slot.app.ta;
            let free = ta.capacity() - ta.occupancy();
            let take = free.min(slot.pending.len());
            let batch: Vec<SealedQuery> = slot.pending.drain(..take).collect();
            let k = ta.next_chunk() as usize;
            let sequence = ta.sequence();
            let chunk = ta.plan().slice(&self.payload, k);
            let meta = ta.plan().meta(k);
            let out = slot.app.invoke(chunk, meta, &batch)?;
            self.transcript.push(CaEvent {
                ta: i,
                sequence,
                chunk: k as u32,
                chunk_bytes: chunk.len(),
                query_count: batch.len(),
                query_bytes: batch.iter().map(|q| q.bytes.len()).sum(),
                response_count: out.responses.len(),
                response_bytes: out.responses.iter().map(|r| r.1.len()).sum(),
                reject_count: out.rejects.len(),
            });
            for &(a, r) in &out.timing {
                self.latencies.push(r - a + 1);
            }
            for (session, bytes) in out.responses {
                self.outbox.push_back((session, Frame::new(FrameType::Response, bytes)));
            }
            for r in out.rejects {
                if r.code == RejectCode::ChannelTeardown {
                    self.sessions.remove(&r.session);
                }
                self.outbox.push_back((r.session, r.frame()));
            }
        }
        Ok(())
    }

    /// Steps until nothing is resident or waiting, up to `max_steps`.
    pub fn run_until_idle(&mut self, max_steps: usize) -> Result<usize> {
        let mut steps = 0;
        while self.backlog() > 0 && steps < max_steps {
            self.step()?;
            steps += 1;
        }
        Ok(steps)
    }

    pub fn take_outgoing(&mut self) -> Vec<(u64, Frame)> {
        self.outbox.drain(..).collect()
    }
}

fn reject(session: u64, code: RejectCode, seq: u64) -> Frame {
    Reject { session, code, seq }.frame()
}

/// In-process user endpoint, mostly for tests and the harness mode of
/// `pmtc serve`.
pub struct LocalClient {
    channel: SecureChannel,
    rng: ChaCha20Rng,
    next_tag: u64,
}

impl LocalClient {
    /// Runs the attestation handshake against `svc`.
    pub fn connect(svc: &mut LookupService, ta_key: &ed25519_dalek::VerifyingKey, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (hs, hello) = channel::ClientHandshake::start(&mut rng);
        let reply = svc.handle(&hello);
        let (_, attest) = reply.into_iter().next().ok_or(PmtError::AttestationRefused("no reply"))?;
        let channel = hs.finish(&attest, ta_key)?;
        Ok(LocalClient {
            channel,
            rng,
            next_tag: 0,
        })
    }

    pub fn session(&self) -> u64 {
        self.channel.session_id()
    }

    /// Seals a QUERY frame; returns it with its client tag.
    pub fn query_frame(&mut self, item: &crate::ItemId) -> (u64, Frame) {
        let tag = self.next_tag;
        self.next_tag += 1;
        let sealed = self.channel.seal(&mut self.rng, &channel::query_plaintext(item, tag));
        (tag, Frame::new(FrameType::Query, sealed))
    }

    /// Decrypts a RESPONSE frame into `(tag, member)`.
    pub fn open_response(&mut self, frame: &Frame) -> Result<(u64, bool)> {
        if frame.ty != FrameType::Response {
            return Err(PmtError::Wire("expected RESPONSE".into()));
        }
        channel::parse_response_plaintext(&self.channel.open(&frame.payload)?)
    }
}
