//! User-to-TA channel: stubbed attestation with an X25519 exchange, then
//! AES-128-CBC with an HMAC over session, sequence, IV and ciphertext.

use ed25519_dalek::{Signature, Signer, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use x25519_dalek::{PublicKey, StaticSecret};

use crate::crypto::{cbc_decrypt, cbc_encrypt, derive, mac16, mac16_verify, TAG_LEN};
use crate::error::{PmtError, Result};
use crate::keys::AttestationKey;
use crate::model::ItemId;

use super::wire::{Frame, FrameType};

/// Stand-in for the TA code measurement.
pub fn measurement() -> [u8; 32] {
    derive("pmt/ta/measurement", &[b"carousel-ta 1"])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Client,
    Ta,
}

impl Role {
    fn peer(self) -> Role {
        match self {
            Role::Client => Role::Ta,
            Role::Ta => Role::Client,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Role::Client => 0,
            Role::Ta => 1,
        }
    }
}

/// Header in clear ahead of the IV: `session u64 | seq u64`.
pub const SEALED_HEADER: usize = 16;

/// Encrypted message length for a plaintext of `len` bytes.
pub fn sealed_len(len: usize) -> usize {
    SEALED_HEADER + 16 + (len / 16 + 1) * 16 + TAG_LEN
}

pub struct SecureChannel {
    session_id: u64,
    role: Role,
    enc_key: [u8; 16],
    mac_key: [u8; 32],
    send_seq: u64,
    recv_seq: u64,
}

impl std::fmt::Debug for SecureChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecureChannel")
            .field("session_id", &self.session_id)
            .field("role", &self.role)
            .field("send_seq", &self.send_seq)
            .field("recv_seq", &self.recv_seq)
            .finish()
    }
}

impl SecureChannel {
    fn from_secret(session_id: u64, role: Role, secret: &[u8; 32]) -> Self {
        let k = derive("pmt/channel/enc", &[secret]);
        SecureChannel {
            session_id,
            role,
            enc_key: k[..16].try_into().unwrap(),
            mac_key: derive("pmt/channel/mac", &[secret]),
            send_seq: 0,
            recv_seq: 0,
        }
    }

    pub fn session_id(&self) -> u64 {
        self.session_id
    }

    /// Key fingerprint, for freshness checks.
    pub fn key_id(&self) -> [u8; 16] {
        self.enc_key
    }

    /// Sequence number the next `seal` will use.
    pub fn next_send_seq(&self) -> u64 {
        self.send_seq + 1
    }

    pub fn seal<R: RngCore>(&mut self, rng: &mut R, plaintext: &[u8]) -> Vec<u8> {
        self.send_seq += 1;
        let mut iv = [0u8; 16];
        rng.fill_bytes(&mut iv);
        let ct = cbc_encrypt(&self.enc_key, &iv, plaintext);
        let mut out = Vec::with_capacity(sealed_len(plaintext.len()));
        out.extend_from_slice(&self.session_id.to_le_bytes());
        out.extend_from_slice(&self.send_seq.to_le_bytes());
        out.extend_from_slice(&iv);
        out.extend_from_slice(&ct);
        let tag = mac16(&self.mac_key, &[&[self.role.tag()], &out]);
        out.extend_from_slice(&tag);
        out
    }

    /// Verifies and decrypts. Sequence numbers must strictly increase, so
    /// replayed and reordered messages fail.
    pub fn open(&mut self, sealed: &[u8]) -> Result<Vec<u8>> {
        if sealed.len() < SEALED_HEADER + 32 + TAG_LEN {
            return Err(PmtError::ChannelRejected("short message"));
        }
        let (body, tag) = sealed.split_at(sealed.len() - TAG_LEN);
        if !mac16_verify(&self.mac_key, &[&[self.role.peer().tag()], body], tag) {
            return Err(PmtError::ChannelRejected("bad MAC"));
        }
        let (session, seq) = sealed_header(sealed)?;
        if session != self.session_id {
            return Err(PmtError::ChannelRejected("wrong session"));
        }
        if seq <= self.recv_seq {
            return Err(PmtError::ChannelRejected("replayed or reordered"));
        }
        let iv: [u8; 16] = body[16..32].try_into().unwrap();
        let pt = cbc_decrypt(&self.enc_key, &iv, &body[32..]).ok_or(PmtError::ChannelRejected("bad padding"))?;
        self.recv_seq = seq;
        Ok(pt)
    }
}

/// Reads `(session, seq)` from a sealed message without authenticating it.
pub fn sealed_header(sealed: &[u8]) -> Result<(u64, u64)> {
    if sealed.len() < SEALED_HEADER {
        return Err(PmtError::Wire("sealed message too short".into()));
    }
    Ok((
        u64::from_le_bytes(sealed[..8].try_into().unwrap()),
        u64::from_le_bytes(sealed[8..16].try_into().unwrap()),
    ))
}

fn signed_transcript(session: u64, m: &[u8; 32], nonce: &[u8], client_pub: &[u8], ta_pub: &[u8]) -> Vec<u8> {
    [&session.to_le_bytes()[..], m, nonce, client_pub, ta_pub].concat()
}

/// TA half of the handshake: answers a HELLO payload with an ATTEST payload.
pub fn ta_accept<R: RngCore + CryptoRng>(
    rng: &mut R,
    key: &AttestationKey,
    session_id: u64,
    hello: &[u8],
) -> Result<(SecureChannel, Vec<u8>)> {
    if hello.len() != 64 {
        return Err(PmtError::Wire("HELLO payload must be 64 bytes".into()));
    }
    let nonce = &hello[..32];
    let client_pub = PublicKey::from(<[u8; 32]>::try_from(&hello[32..]).unwrap());
    let secret = StaticSecret::random_from_rng(&mut *rng);
    let ta_pub = PublicKey::from(&secret);
    let shared = secret.diffie_hellman(&client_pub);
    let m = measurement();
    let t = signed_transcript(session_id, &m, nonce, client_pub.as_bytes(), ta_pub.as_bytes());
    let sig = key.signing().sign(&t);
    let k = derive("pmt/session", &[shared.as_bytes(), &t]);
    let mut out = Vec::with_capacity(136);
    out.extend_from_slice(&session_id.to_le_bytes());
    out.extend_from_slice(&m);
    out.extend_from_slice(ta_pub.as_bytes());
    out.extend_from_slice(&sig.to_bytes());
    Ok((SecureChannel::from_secret(session_id, Role::Ta, &k), out))
}

/// User half of the handshake.
pub struct ClientHandshake {
    nonce: [u8; 32],
    secret: StaticSecret,
}

impl ClientHandshake {
    pub fn start<R: RngCore + CryptoRng>(rng: &mut R) -> (Self, Frame) {
        let mut nonce = [0u8; 32];
        rng.fill_bytes(&mut nonce);
        let secret = StaticSecret::random_from_rng(&mut *rng);
        let p = [&nonce[..], PublicKey::from(&secret).as_bytes()].concat();
        (ClientHandshake { nonce, secret }, Frame::new(FrameType::Hello, p))
    }

    /// Checks the measurement and its signature, then derives the channel.
    pub fn finish(self, attest: &Frame, ta_key: &VerifyingKey) -> Result<SecureChannel> {
        let p = &attest.payload;
        if attest.ty != FrameType::Attest || p.len() != 136 {
            return Err(PmtError::AttestationRefused("malformed ATTEST"));
        }
        let session = u64::from_le_bytes(p[..8].try_into().unwrap());
        let m: [u8; 32] = p[8..40].try_into().unwrap();
        let ta_pub = PublicKey::from(<[u8; 32]>::try_from(&p[40..72]).unwrap());
        let sig = Signature::from_bytes(&p[72..136].try_into().unwrap());
        let client_pub = PublicKey::from(&self.secret);
        let t = signed_transcript(session, &m, &self.nonce, client_pub.as_bytes(), ta_pub.as_bytes());
        ta_key
            .verify(&t, &sig)
            .map_err(|_| PmtError::AttestationRefused("bad signature"))?;
        if m != measurement() {
            return Err(PmtError::AttestationRefused("unexpected measurement"));
        }
        let shared = self.secret.diffie_hellman(&ta_pub);
        let k = derive("pmt/session", &[shared.as_bytes(), &t]);
        Ok(SecureChannel::from_secret(session, Role::Client, &k))
    }
}

/// QUERY plaintext: `item[16] | client tag u64`.
pub fn query_plaintext(item: &ItemId, tag: u64) -> [u8; 24] {
    let mut p = [0u8; 24];
    p[..16].copy_from_slice(item.as_bytes());
    p[16..].copy_from_slice(&tag.to_le_bytes());
    p
}

pub fn parse_query_plaintext(p: &[u8]) -> Result<(ItemId, u64)> {
    if p.len() != 24 {
        return Err(PmtError::Wire("query plaintext must be 24 bytes".into()));
    }
    Ok((
        ItemId::from_bytes(p[..16].try_into().unwrap()),
        u64::from_le_bytes(p[16..].try_into().unwrap()),
    ))
}

/// RESPONSE plaintext: `client tag u64 | bit u8`.
pub fn response_plaintext(tag: u64, member: bool) -> [u8; 9] {
    let mut p = [0u8; 9];
    p[..8].copy_from_slice(&tag.to_le_bytes());
    p[8] = member as u8;
    p
}

pub fn parse_response_plaintext(p: &[u8]) -> Result<(u64, bool)> {
    if p.len() != 9 || p[8] > 1 {
        return Err(PmtError::Wire("malformed response plaintext".into()));
    }
    Ok((u64::from_le_bytes(p[..8].try_into().unwrap()), p[8] == 1))
}
