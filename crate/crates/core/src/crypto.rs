//! Thin wrappers over the symmetric primitives used throughout: truncated
//! HMAC-SHA256 tags, AES-128-CBC for the user channel and AES-128-CTR for
//! ORAM blocks.

use aes::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit, StreamCipher};
use aes::Aes128;
use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

type HmacSha256 = Hmac<Sha256>;
type CbcEnc = cbc::Encryptor<Aes128>;
type CbcDec = cbc::Decryptor<Aes128>;
type Ctr = ctr::Ctr128BE<Aes128>;

pub const TAG_LEN: usize = 16;
pub const BLOCK: usize = 16;

fn hmac(key: &[u8], parts: &[&[u8]]) -> HmacSha256 {
    let mut m = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        m.update(p);
    }
    m
}

/// HMAC-SHA256 over the concatenation of `parts`, truncated to 128 bits.
pub fn mac16(key: &[u8], parts: &[&[u8]]) -> [u8; TAG_LEN] {
    let full = hmac(key, parts).finalize().into_bytes();
    let mut tag = [0u8; TAG_LEN];
    tag.copy_from_slice(&full[..TAG_LEN]);
    tag
}

/// Constant-time check of a truncated tag.
pub fn mac16_verify(key: &[u8], parts: &[&[u8]], tag: &[u8]) -> bool {
    tag.len() == TAG_LEN && hmac(key, parts).verify_truncated_left(tag).is_ok()
}

/// SHA-256 of a domain label followed by `parts`.
pub fn derive(label: &str, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((label.len() as u32).to_le_bytes());
    h.update(label.as_bytes());
    for p in parts {
        h.update((p.len() as u32).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// AES-128-CBC with PKCS#7 padding.
pub fn cbc_encrypt(key: &[u8; 16], iv: &[u8; 16], plaintext: &[u8]) -> Vec<u8> {
    let pad = BLOCK - plaintext.len() % BLOCK;
    let mut buf = Vec::with_capacity(plaintext.len() + pad);
    buf.extend_from_slice(plaintext);
    buf.resize(plaintext.len() + pad, pad as u8);
    let mut enc = CbcEnc::new(key.into(), iv.into());
    for block in buf.chunks_exact_mut(BLOCK) {
        enc.encrypt_block_mut(block.into());
    }
    buf
}

pub fn cbc_decrypt(key: &[u8; 16], iv: &[u8; 16], ciphertext: &[u8]) -> Option<Vec<u8>> {
    if ciphertext.is_empty() || ciphertext.len() % BLOCK != 0 {
        return None;
    }
    let mut buf = ciphertext.to_vec();
    let mut dec = CbcDec::new(key.into(), iv.into());
    for block in buf.chunks_exact_mut(BLOCK) {
        dec.decrypt_block_mut(block.into());
    }
    let pad = *buf.last()? as usize;
    if pad == 0 || pad > BLOCK || buf[buf.len() - pad..].iter().any(|&b| b as usize != pad) {
        return None;
    }
    buf.truncate(buf.len() - pad);
    Some(buf)
}

/// XORs the AES-128-CTR keystream for `nonce` into `data`.
pub fn ctr_apply(key: &[u8; 16], nonce: &[u8; 16], data: &mut [u8]) {
    let mut c = Ctr::new(key.into(), nonce.into());
    c.apply_keystream(data);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cbc_round_trip_and_padding() {
        let key = [7u8; 16];
        let iv = [9u8; 16];
        for len in [0usize, 1, 15, 16, 17, 24, 64] {
            let pt: Vec<u8> = (0..len as u8).collect();
            let ct = cbc_encrypt(&key, &iv, &pt);
            assert_eq!(ct.len() % 16, 0);
            assert!(ct.len() > pt.len());
            assert_eq!(cbc_decrypt(&key, &iv, &ct).unwrap(), pt);
        }
        assert!(cbc_decrypt(&key, &iv, &[0u8; 15]).is_none());
    }

    #[test]
    fn mac_detects_tamper() {
        let tag = mac16(b"k", &[b"hello", b"world"]);
        assert!(mac16_verify(b"k", &[b"hello", b"world"], &tag));
        assert!(!mac16_verify(b"k", &[b"hello", b"worle"], &tag));
        assert!(!mac16_verify(b"j", &[b"hello", b"world"], &tag));
        assert!(!mac16_verify(b"k", &[b"hello", b"world"], &tag[..15]));
    }

    #[test]
    fn ctr_is_an_involution() {
        let mut d = vec![1u8, 2, 3, 4, 5];
        ctr_apply(&[1; 16], &[2; 16], &mut d);
        assert_ne!(d, vec![1, 2, 3, 4, 5]);
        ctr_apply(&[1; 16], &[2; 16], &mut d);
        assert_eq!(d, vec![1, 2, 3, 4, 5]);
    }
}
