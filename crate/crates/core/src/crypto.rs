//! MAC primitive behind every authenticator.
//!
//! One algorithm is picked at bus startup and used everywhere; keys minted for
//! one algorithm produce and check tags of that algorithm's length only.

use std::fmt;

use hmac::{Hmac, Mac};
use rand::rngs::OsRng;
use rand::RngCore;
use sha1::Sha1;
use sha2::Sha256;
use thiserror::Error;

use crate::types::AuthTag;

pub const KEY_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("system random source unavailable: {0}")]
    RngUnavailable(String),
    #[error("tag length {got} does not match the {expected} bytes of {algorithm}")]
    TagLengthMismatch { got: usize, expected: usize, algorithm: MacAlgorithm },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacAlgorithm {
    HmacSha1,
    HmacSha256,
}

impl MacAlgorithm {
    pub fn tag_len(self) -> usize {
        match self {
            MacAlgorithm::HmacSha1 => 20,
            MacAlgorithm::HmacSha256 => 32,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "hmac-sha1" => Some(MacAlgorithm::HmacSha1),
            "hmac-sha256" => Some(MacAlgorithm::HmacSha256),
            _ => None,
        }
    }
}

impl fmt::Display for MacAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MacAlgorithm::HmacSha1 => "hmac-sha1",
            MacAlgorithm::HmacSha256 => "hmac-sha256",
        })
    }
}

/// 32 random bytes shared between one principal and the authority.
///
/// Key material stays inside this module: no serialization, and `Debug`
/// redacts the bytes.
#[derive(Clone)]
pub struct SecretKey {
    bytes: [u8; KEY_LEN],
    algorithm: MacAlgorithm,
}

impl SecretKey {
    pub fn algorithm(&self) -> MacAlgorithm {
        self.algorithm
    }

    /// For provisioning fixed channel secrets (trust-store files, tests).
    pub fn from_bytes(bytes: [u8; KEY_LEN], algorithm: MacAlgorithm) -> Self {
        Self { bytes, algorithm }
    }

    /// Crate-internal: trust-store persistence needs the raw bytes. Nothing
    /// outside the crate can read key material.
    pub(crate) fn bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey(<redacted>, {})", self.algorithm)
    }
}

/// Fresh 32-byte key from the OS random source.
pub fn keygen(algorithm: MacAlgorithm) -> Result<SecretKey, CryptoError> {
    let mut bytes = [0u8; KEY_LEN];
    OsRng
        .try_fill_bytes(&mut bytes)
        .map_err(|e| CryptoError::RngUnavailable(e.to_string()))?;
    Ok(SecretKey { bytes, algorithm })
}

/// Raw HMAC over `data` with an arbitrary-length key. Standard construction;
/// key material shorter or longer than the block size is handled per the HMAC
/// definition.
pub fn hmac(algorithm: MacAlgorithm, key: &[u8], data: &[u8]) -> AuthTag {
    let bytes = match algorithm {
        MacAlgorithm::HmacSha1 => {
            let mut mac = Hmac::<Sha1>::new_from_slice(key).expect("HMAC accepts any key length");
            mac.update(data);
            mac.finalize().into_bytes().to_vec()
        }
        MacAlgorithm::HmacSha256 => {
            let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("HMAC accepts any key length");
            mac.update(data);
            mac.finalize().into_bytes().to_vec()
        }
    };
    AuthTag::from_bytes(bytes)
}

/// Authenticator over `data` under `key`.
pub fn mac_create(key: &SecretKey, data: &[u8]) -> AuthTag {
    hmac(key.algorithm, &key.bytes, data)
}

/// Recomputes the MAC and compares in constant time.
pub fn mac_verify(key: &SecretKey, data: &[u8], tag: &AuthTag) -> Result<bool, CryptoError> {
    let expected = key.algorithm.tag_len();
    if tag.len() != expected {
        return Err(CryptoError::TagLengthMismatch {
            got: tag.len(),
            expected,
            algorithm: key.algorithm,
        });
    }
    let ok = match key.algorithm {
        MacAlgorithm::HmacSha1 => {
            let mut mac = Hmac::<Sha1>::new_from_slice(&key.bytes).unwrap();
            mac.update(data);
            mac.verify_slice(tag.as_bytes()).is_ok()
        }
        MacAlgorithm::HmacSha256 => {
            let mut mac = Hmac::<Sha256>::new_from_slice(&key.bytes).unwrap();
            mac.update(data);
            mac.verify_slice(tag.as_bytes()).is_ok()
        }
    };
    Ok(ok)
}
