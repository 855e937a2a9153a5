//! Password hashing and bearer tokens.

use argon2::password_hash::rand_core::{OsRng, RngCore};
use argon2::password_hash::{PasswordHash, PasswordHasher as _, PasswordVerifier, SaltString};
use argon2::{Algorithm, Argon2, Params, Version};
use sha2::{Digest, Sha256};

/// Argon2id with configurable cost. Verification reads the parameters from
/// the stored hash, so lowering the cost never locks out existing users.
#[derive(Clone, Default)]
pub struct PasswordHasher {
    params: Params,
}


impl PasswordHasher {
    /// Minimal cost, for tests.
    pub fn fast() -> Self {
        Self { params: Params::new(256, 1, 1, None).expect("valid argon2 params") }
    }

    fn argon(&self) -> Argon2<'static> {
        Argon2::new(Algorithm::Argon2id, Version::V0x13, self.params.clone())
    }

    pub fn hash(&self, password: &str) -> String {
        let salt = SaltString::generate(&mut OsRng);
        self.argon()
            .hash_password(password.as_bytes(), &salt)
            .expect("argon2 hashing with valid params")
            .to_string()
    }

    pub fn verify(&self, password: &str, stored: &str) -> bool {
        PasswordHash::new(stored).is_ok_and(|h| self.argon().verify_password(password.as_bytes(), &h).is_ok())
    }
}

/// A fresh random token and the hash under which it is stored.
pub fn new_token() -> (String, String) {
    let mut raw = [0u8; 32];
    OsRng.fill_bytes(&mut raw);
    let token = hex::encode(raw);
    let hash = token_hash(&token);
    (token, hash)
}

pub fn token_hash(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// A readable initial password for a newly registered patient.
pub fn generate_password() -> String {
    const ALPHABET: &[u8] = b"abcdefghjkmnpqrstuvwxyz23456789";
    let mut raw = [0u8; 16];
    OsRng.fill_bytes(&mut raw);
    raw.iter().map(|b| ALPHABET[*b as usize % ALPHABET.len()] as char).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_and_verify() {
        let h = PasswordHasher::fast();
        let stored = h.hash("s3cret");
        assert!(h.verify("s3cret", &stored));
        assert!(!h.verify("S3cret", &stored));
        assert!(!h.verify("s3cret", "not a hash"));
        // Parameters travel with the hash.
        assert!(PasswordHasher::default().verify("s3cret", &stored));
    }

    #[test]
    fn tokens_are_distinct() {
        let (a, ha) = new_token();
        let (b, _) = new_token();
        assert_ne!(a, b);
        assert_eq!(token_hash(&a), ha);
        assert_eq!(generate_password().len(), 16);
    }
}
