//! Domain types shared by every module: principals, messages, statements,
//! call chains, and their canonical encodings.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::codec::{Decode, DecodeError, Decoder, Encode, EncodeError, Encoder};

/// Safety cap on call-chain length.
pub const DEFAULT_MAX_CHAIN_DEPTH: usize = 64;
/// Safety cap on message payload size (1 MiB).
pub const DEFAULT_MAX_PAYLOAD: usize = 1 << 20;

/// Identity of one running app instance: a user id plus a process id.
///
/// Ordering is lexicographic (uid, then pid), which the derived `Ord` gives us
/// from field order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Principal {
    pub uid: u32,
    pub pid: u32,
}

impl Principal {
    pub fn new(uid: u32, pid: u32) -> Self {
        Self { uid, pid }
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.uid, self.pid)
    }
}

impl Encode for Principal {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_u32(self.uid);
        enc.put_u32(self.pid);
        Ok(())
    }
}

impl Decode for Principal {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { uid: dec.get_u32()?, pid: dec.get_u32()? })
    }
}

/// A named permission, matched case-sensitively ("FINE_LOCATION", "INTERNET", ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PermissionToken(String);

impl PermissionToken {
    /// Panics on an empty name; permissions are compile-time constants in practice.
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "permission name must be non-empty");
        Self(name)
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PermissionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PermissionToken {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Human-readable identity a uid resolves to, plus its granted permissions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppIdentity {
    pub app_name: String,
    pub permissions: BTreeSet<PermissionToken>,
}

impl AppIdentity {
    /// App names are comma-joined into wire headers, so commas are banned.
    pub fn new(app_name: impl Into<String>, permissions: impl IntoIterator<Item = PermissionToken>) -> Self {
        let app_name = app_name.into();
        assert!(!app_name.is_empty(), "app name must be non-empty");
        assert!(!app_name.contains(','), "app name must not contain commas");
        Self { app_name, permissions: permissions.into_iter().collect() }
    }
}

/// One IPC payload: a method selector, opaque bytes, and a millisecond timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub method: String,
    pub payload: Vec<u8>,
    pub timestamp: u64,
}

impl Message {
    pub fn new(method: impl Into<String>, payload: Vec<u8>, timestamp: u64) -> Self {
        Self { method: method.into(), payload, timestamp }
    }
}

impl Encode for Message {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_str(&self.method)?;
        enc.put_bytes(&self.payload)?;
        enc.put_u64(self.timestamp);
        Ok(())
    }
}

impl Decode for Message {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            method: dec.get_str()?,
            payload: dec.get_bytes()?,
            timestamp: dec.get_u64()?,
        })
    }
}

/// Fixed-length message authentication code (20 bytes for HMAC-SHA1,
/// 32 for HMAC-SHA256).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct AuthTag(Vec<u8>);

impl AuthTag {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl fmt::Debug for AuthTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AuthTag({})", self.to_hex())
    }
}

impl Encode for AuthTag {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_bytes(&self.0)
    }
}

impl Decode for AuthTag {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self(dec.get_bytes()?))
    }
}

/// "Speaker says message", bound by a MAC only the authority can check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub speaker: Principal,
    pub message: Message,
    pub tag: AuthTag,
}

impl Statement {
    /// The bytes a statement's tag is computed over: the canonical encoding of
    /// the speaker followed by the message. The tag itself is excluded.
    pub fn signing_bytes(speaker: &Principal, message: &Message) -> Vec<u8> {
        let mut enc = Encoder::with_capacity(message.payload.len() + 64);
        speaker.encode_into(&mut enc).expect("principal encoding cannot overflow");
        message
            .encode_into(&mut enc)
            .expect("message within payload limits cannot overflow");
        enc.finish()
    }
}

impl Encode for Statement {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        self.speaker.encode_into(enc)?;
        self.message.encode_into(enc)?;
        self.tag.encode_into(enc)
    }
}

impl Decode for Statement {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            speaker: Principal::decode_from(dec)?,
            message: Message::decode_from(dec)?,
            tag: AuthTag::decode_from(dec)?,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("call chain depth limit of {max} links exceeded")]
    DepthExceeded { max: usize },
}

/// Ordered list of principals a request passed through, most recent caller first.
///
/// `[B, A]` records that B relayed a request that A originated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct CallChain {
    links: Vec<Principal>,
}

impl CallChain {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_links(links: Vec<Principal>) -> Self {
        Self { links }
    }

    /// New chain with `caller` quoted in front; the input is left unchanged.
    pub fn prepend(&self, caller: Principal, max_depth: usize) -> Result<CallChain, ChainError> {
        if self.links.len() >= max_depth {
            return Err(ChainError::DepthExceeded { max: max_depth });
        }
        let mut links = Vec::with_capacity(self.links.len() + 1);
        links.push(caller);
        links.extend_from_slice(&self.links);
        Ok(CallChain { links })
    }

    /// Same links ordered origin first; the order wire headers use.
    pub fn origin_first(&self) -> CallChain {
        let mut links = self.links.clone();
        links.reverse();
        CallChain { links }
    }

    pub fn links(&self) -> &[Principal] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Principal> {
        self.links.iter()
    }
}

impl FromIterator<Principal> for CallChain {
    fn from_iter<I: IntoIterator<Item = Principal>>(iter: I) -> Self {
        Self { links: iter.into_iter().collect() }
    }
}

impl Encode for CallChain {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_seq(&self.links)
    }
}

impl Decode for CallChain {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { links: dec.get_seq()? })
    }
}

/// App-name rendering of a call chain, same order as its source chain.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResolvedChain {
    names: Vec<String>,
}

impl ResolvedChain {
    pub fn from_names(names: Vec<String>) -> Self {
        Self { names }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Encode for ResolvedChain {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_seq(&self.names)
    }
}

impl Decode for ResolvedChain {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { names: dec.get_seq()? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(uid: u32, pid: u32) -> Principal {
        Principal::new(uid, pid)
    }

    #[test]
    fn principal_ordering_is_lexicographic() {
        assert!(p(1, 9) < p(2, 0));
        assert!(p(1, 1) < p(1, 2));
        assert_eq!(p(3, 4), p(3, 4));
    }

    #[test]
    fn prepend_leaves_input_unchanged() {
        let chain = CallChain::from_links(vec![p(1, 1)]);
        let grown = chain.prepend(p(2, 2), DEFAULT_MAX_CHAIN_DEPTH).unwrap();
        assert_eq!(grown.links(), &[p(2, 2), p(1, 1)]);
        assert_eq!(chain.links(), &[p(1, 1)]);
    }

    #[test]
    fn prepend_on_empty_chain() {
        let chain = CallChain::empty().prepend(p(7, 7), DEFAULT_MAX_CHAIN_DEPTH).unwrap();
        assert_eq!(chain.links(), &[p(7, 7)]);
    }

    #[test]
    fn prepend_rejects_at_max_depth() {
        let chain = CallChain::from_links((0..64).map(|i| p(i, i)).collect());
        let err = chain.prepend(p(99, 99), 64).unwrap_err();
        assert_eq!(err, ChainError::DepthExceeded { max: 64 });
    }

    #[test]
    fn prepend_composes_like_concatenation() {
        let base = CallChain::from_links(vec![p(5, 5), p(6, 6)]);
        let out = base
            .prepend(p(1, 1), 64)
            .unwrap()
            .prepend(p(2, 2), 64)
            .unwrap();
        assert_eq!(out.links(), &[p(2, 2), p(1, 1), p(5, 5), p(6, 6)]);
    }

    #[test]
    fn origin_first_reverses() {
        let chain = CallChain::from_links(vec![p(2, 2), p(1, 1)]);
        assert_eq!(chain.origin_first().links(), &[p(1, 1), p(2, 2)]);
    }

    #[test]
    #[should_panic(expected = "non-empty")]
    fn empty_permission_name_rejected() {
        PermissionToken::new("");
    }

    #[test]
    #[should_panic(expected = "commas")]
    fn app_names_with_commas_rejected() {
        AppIdentity::new("Evil,App", []);
    }
}
