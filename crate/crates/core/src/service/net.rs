//! TCP transport. One reader thread per connection feeds a single scheduler
//! thread that owns the [`LookupService`] and writes replies.

use std::collections::HashMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use ed25519_dalek::VerifyingKey;
use rand::rngs::OsRng;

use crate::error::{PmtError, Result};
use crate::model::ItemId;

use super::channel::{parse_response_plaintext, query_plaintext, ClientHandshake, SecureChannel};
use super::wire::{Frame, FrameType, Reject};
use super::LookupService;

enum Event {
    Open(u64, TcpStream),
    Frame(u64, Frame),
    Closed(u64),
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn wait(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }
}

/// Serves `svc` on `listener` in background threads.
pub fn spawn(listener: TcpListener, mut svc: LookupService) -> Result<ServerHandle> {
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel::<Event>();

    let accept_stop = stop.clone();
    let acceptor = thread::spawn(move || {
        let mut next = 0u64;
        while !accept_stop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let _ = stream.set_nonblocking(false);
                    let _ = stream.set_nodelay(true);
                    let id = next;
                    next += 1;
                    let Ok(writer) = stream.try_clone() else { continue };
                    if tx.send(Event::Open(id, writer)).is_err() {
                        break;
                    }
                    let tx = tx.clone();
                    thread::spawn(move || {
                        let mut s = stream;
                        while let Ok(Some(f)) = Frame::read_from(&mut s) {
                            if tx.send(Event::Frame(id, f)).is_err() {
                                return;
                            }
                        }
                        let _ = tx.send(Event::Closed(id));
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                Err(_) => thread::sleep(Duration::from_millis(5)),
            }
        }
    });

    let sched_stop = stop.clone();
    let scheduler = thread::spawn(move || {
        let mut conns: HashMap<u64, TcpStream> = HashMap::new();
        let mut owner: HashMap<u64, u64> = HashMap::new();
        while !sched_stop.load(Ordering::SeqCst) {
            let wait = if svc.backlog() > 0 {
                Duration::ZERO
            } else {
                Duration::from_millis(20)
            };
            let mut events = Vec::new();
            match rx.recv_timeout(wait) {
                Ok(e) => events.push(e),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            events.extend(rx.try_iter());
            for ev in events {
                match ev {
                    Event::Open(id, s) => {
                        conns.insert(id, s);
                    }
                    Event::Closed(id) => {
                        conns.remove(&id);
                    }
                    Event::Frame(id, f) => {
                        for (session, reply) in svc.handle(&f) {
                            if reply.ty == FrameType::Attest {
                                owner.insert(session, id);
                            }
                            if let Some(s) = conns.get_mut(&id) {
                                let _ = reply.write_to(s);
                            }
                        }
                    }
                }
            }
            if svc.backlog() > 0 {
                if svc.step().is_err() {
                    break;
                }
                for (session, f) in svc.take_outgoing() {
                    if let Some(s) = owner.get(&session).and_then(|c| conns.get_mut(c)) {
                        let _ = f.write_to(s);
                    }
                }
            }
        }
    });

    Ok(ServerHandle {
        addr,
        stop,
        threads: vec![acceptor, scheduler],
    })
}

/// Blocking user client over TCP.
pub struct RemoteClient {
    stream: TcpStream,
    channel: SecureChannel,
    next_tag: u64,
}

impl RemoteClient {
    pub fn connect(addr: SocketAddr, ta_key: &VerifyingKey) -> Result<Self> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let (hs, hello) = ClientHandshake::start(&mut OsRng);
        hello.write_to(&mut stream)?;
        let attest = Frame::read_from(&mut stream)?.ok_or(PmtError::AttestationRefused("connection closed"))?;
        let channel = hs.finish(&attest, ta_key)?;
        Ok(RemoteClient {
            stream,
            channel,
            next_tag: 0,
        })
    }

    pub fn session(&self) -> u64 {
        self.channel.session_id()
    }

    /// Submits all items, resending on retriable rejects, and returns the
    /// membership bits in input order.
    pub fn query_many(&mut self, items: &[ItemId]) -> Result<Vec<bool>> {
        let mut out: Vec<Option<bool>> = vec![None; items.len()];
        let mut by_seq: HashMap<u64, usize> = HashMap::new();
        let mut by_tag: HashMap<u64, usize> = HashMap::new();
        for i in 0..items.len() {
            self.send(&items[i], i, &mut by_seq, &mut by_tag)?;
        }
        let mut left = items.len();
        while left > 0 {
            let f = Frame::read_from(&mut self.stream)?.ok_or(PmtError::Wire("connection closed".into()))?;
            match f.ty {
                FrameType::Response => {
                    let (tag, bit) = parse_response_plaintext(&self.channel.open(&f.payload)?)?;
                    if let Some(i) = by_tag.remove(&tag) {
                        out[i] = Some(bit);
                        left -= 1;
                    }
                }
                FrameType::Reject => {
                    let r = Reject::parse(&f)?;
                    if !r.code.retriable() {
                        return Err(PmtError::ChannelRejected("query refused"));
                    }
                    if let Some(i) = by_seq.remove(&r.seq) {
                        thread::sleep(Duration::from_millis(10));
                        self.send(&items[i], i, &mut by_seq, &mut by_tag)?;
                    }
                }
                _ => return Err(PmtError::Wire("unexpected frame".into())),
            }
        }
        Ok(out.into_iter().map(|b| b.expect("all answered")).collect())
    }

    pub fn query(&mut self, item: &ItemId) -> Result<bool> {
        Ok(self.query_many(std::slice::from_ref(item))?[0])
    }

    fn send(
        &mut self,
        item: &ItemId,
        i: usize,
        by_seq: &mut HashMap<u64, usize>,
        by_tag: &mut HashMap<u64, usize>,
    ) -> Result<()> {
        let tag = self.next_tag;
        self.next_tag += 1;
        by_seq.insert(self.channel.next_send_seq(), i);
        by_tag.insert(tag, i);
        let sealed = self.channel.seal(&mut OsRng, &query_plaintext(item, tag));
        Frame::new(FrameType::Query, sealed).write_to(&mut self.stream)
    }
}
