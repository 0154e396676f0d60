//! Long-term keys: the provider-to-TA authentication key and the (stub)
//! attestation signing key. Setting `PMT_TEST_KEYS` selects fixed test keys.

use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};

use crate::crypto::derive;

pub const TEST_KEYS_ENV: &str = "PMT_TEST_KEYS";

/// True when `PMT_TEST_KEYS` is set to anything other than empty or `0`.
pub fn test_keys_enabled() -> bool {
    std::env::var(TEST_KEYS_ENV)
        .map(|v| !v.is_empty() && v != "0")
        .unwrap_or(false)
}

/// Key shared between the dictionary provider and every TA instance; it
/// authenticates serialized representations.
#[derive(Clone, PartialEq, Eq)]
pub struct ProviderKey(pub [u8; 32]);

impl ProviderKey {
    pub fn test() -> Self {
        ProviderKey(derive("pmt/test/provider", &[]))
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        ProviderKey(k)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.len() != 64 {
            return None;
        }
        let mut k = [0u8; 32];
        for (i, out) in k.iter_mut().enumerate() {
            *out = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
        }
        Some(ProviderKey(k))
    }
}

impl std::fmt::Debug for ProviderKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ProviderKey(..)")
    }
}

/// Signs the TA measurement during the attestation stub.
#[derive(Clone)]
pub struct AttestationKey(SigningKey);

impl AttestationKey {
    pub fn test() -> Self {
        AttestationKey(SigningKey::from_bytes(&derive("pmt/test/attestation", &[])))
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        AttestationKey(SigningKey::generate(rng))
    }

    pub fn signing(&self) -> &SigningKey {
        &self.0
    }

    pub fn verifying(&self) -> VerifyingKey {
        self.0.verifying_key()
    }
}

impl AttestationKey {
    pub fn verifying_hex(&self) -> String {
        self.verifying().as_bytes().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses a hex-encoded attestation verifying key.
pub fn parse_verifying_key(s: &str) -> Option<VerifyingKey> {
    let s = s.trim();
    if s.len() != 64 {
        return None;
    }
    let mut k = [0u8; 32];
    for (i, out) in k.iter_mut().enumerate() {
        *out = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    VerifyingKey::from_bytes(&k).ok()
}
