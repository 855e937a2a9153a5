//! At-rest encryption for local buckets (AES-256-GCM).
//!
//! Sealed layout: `b"ORO1" || nonce(12) || ciphertext+tag`. The object key is
//! bound as associated data, so a sealed blob moved to another key fails to
//! open.

use std::fmt;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use rand::RngCore;

use crate::{ObjectKey, StoreError};

const MAGIC: &[u8; 4] = b"ORO1";
const NONCE_LEN: usize = 12;

#[derive(Clone)]
pub struct EncryptionKey([u8; 32]);

impl fmt::Debug for EncryptionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("EncryptionKey(..)")
    }
}

impl EncryptionKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    /// Parses 64 hex digits.
    pub fn from_hex(hex_key: &str) -> Result<Self, StoreError> {
        let bytes = hex::decode(hex_key.trim())
            .map_err(|e| StoreError::InvalidKey(format!("encryption key: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| StoreError::InvalidKey("encryption key must be 32 bytes".into()))?;
        Ok(Self(arr))
    }

    pub fn generate() -> Self {
        let mut k = [0u8; 32];
        rand::thread_rng().fill_bytes(&mut k);
        Self(k)
    }

    fn cipher(&self) -> Aes256Gcm {
        Aes256Gcm::new_from_slice(&self.0).expect("32-byte key")
    }

    pub(crate) fn seal(&self, key: &ObjectKey, plaintext: &[u8]) -> Vec<u8> {
        let mut nonce = [0u8; NONCE_LEN];
        rand::thread_rng().fill_bytes(&mut nonce);
        let aad = key.to_string();
        let ct = self
            .cipher()
            .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad: aad.as_bytes() })
            .expect("AES-GCM encryption does not fail for in-memory buffers");
        let mut out = Vec::with_capacity(MAGIC.len() + NONCE_LEN + ct.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&ct);
        out
    }

    pub(crate) fn open(&self, key: &ObjectKey, sealed: &[u8]) -> Result<Vec<u8>, StoreError> {
        if sealed.len() < MAGIC.len() + NONCE_LEN || &sealed[..MAGIC.len()] != MAGIC {
            return Err(StoreError::Integrity(key.clone()));
        }
        let (nonce, ct) = sealed[MAGIC.len()..].split_at(NONCE_LEN);
        let aad = key.to_string();
        self.cipher()
            .decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad: aad.as_bytes() })
            .map_err(|_| StoreError::Integrity(key.clone()))
    }
}
