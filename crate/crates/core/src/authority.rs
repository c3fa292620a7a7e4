//! The trusted authority manager: per-principal key registry, statement
//! verification, and principal-name resolution.
//!
//! Keys never leave this module except to the registering principal itself.
//! Re-registering replaces the stored key, so statements signed under a
//! previous key stop verifying; this closes off uid/pid-reuse attacks.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use thiserror::Error;

use crate::crypto::{self, MacAlgorithm, SecretKey};
use crate::types::{AppIdentity, CallChain, Principal, ResolvedChain, Statement};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthorityError {
    #[error("principal {0} is not registered with the bus")]
    UnknownPrincipal(Principal),
    #[error("chain link {index} does not resolve to a known app")]
    UnresolvablePrincipal { index: usize },
    #[error(transparent)]
    Crypto(#[from] crypto::CryptoError),
}

/// Outcome of checking one statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Tag matches the current key of the claimed speaker.
    Valid,
    /// Speaker is known but the tag does not check out.
    InvalidTag,
    /// No key on file for the claimed speaker.
    UnknownSpeaker,
}

impl Verdict {
    pub fn is_valid(self) -> bool {
        matches!(self, Verdict::Valid)
    }

    pub fn wire_byte(self) -> u8 {
        match self {
            Verdict::Valid => 0,
            Verdict::InvalidTag => 1,
            Verdict::UnknownSpeaker => 2,
        }
    }

    pub fn from_wire_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Verdict::Valid),
            1 => Some(Verdict::InvalidTag),
            2 => Some(Verdict::UnknownSpeaker),
            _ => None,
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Valid => "valid",
            Verdict::InvalidTag => "invalid-tag",
            Verdict::UnknownSpeaker => "unknown-speaker",
        })
    }
}

#[derive(Default)]
struct Registry {
    keys: HashMap<Principal, SecretKey>,
    directory: HashMap<u32, AppIdentity>,
    live: HashSet<Principal>,
}

/// Shared service; all operations are atomic with respect to one another.
pub struct Authority {
    algorithm: MacAlgorithm,
    registry: Mutex<Registry>,
}

impl Authority {
    pub fn new(algorithm: MacAlgorithm) -> Self {
        Self { algorithm, registry: Mutex::new(Registry::default()) }
    }

    pub fn algorithm(&self) -> MacAlgorithm {
        self.algorithm
    }

    /// Bus lifecycle hook: a process came up under `principal` with `identity`.
    pub fn admit(&self, principal: Principal, identity: AppIdentity) {
        let mut reg = self.registry.lock().unwrap();
        reg.live.insert(principal);
        reg.directory.insert(principal.uid, identity);
    }

    /// Bus lifecycle hook: process teardown. The key is destroyed immediately;
    /// statements it signed become `UnknownSpeaker`.
    pub fn retire(&self, principal: Principal) {
        let mut reg = self.registry.lock().unwrap();
        reg.live.remove(&principal);
        reg.keys.remove(&principal);
        reg.directory.remove(&principal.uid);
    }

    /// Mints and stores a fresh key for a live principal, returning it to the
    /// caller. Any previously stored key is replaced and its statements stop
    /// verifying.
    pub fn register(&self, principal: Principal) -> Result<SecretKey, AuthorityError> {
        let key = crypto::keygen(self.algorithm)?;
        let mut reg = self.registry.lock().unwrap();
        if !reg.live.contains(&principal) {
            return Err(AuthorityError::UnknownPrincipal(principal));
        }
        reg.keys.insert(principal, key.clone());
        Ok(key)
    }

    /// Checks a statement against the speaker's current key. The key never
    /// leaves the registry; callers learn only the verdict.
    pub fn verify_statement(&self, stmt: &Statement) -> Verdict {
        let key = {
            let reg = self.registry.lock().unwrap();
            match reg.keys.get(&stmt.speaker) {
                Some(k) => k.clone(),
                None => return Verdict::UnknownSpeaker,
            }
        };
        let data = Statement::signing_bytes(&stmt.speaker, &stmt.message);
        match crypto::mac_verify(&key, &data, &stmt.tag) {
            Ok(true) => Verdict::Valid,
            // A wrong-length tag cannot have been produced under this key.
            Ok(false) | Err(_) => Verdict::InvalidTag,
        }
    }

    /// App-name rendering of a chain, in the chain's own link order.
    pub fn resolve_chain(&self, chain: &CallChain) -> Result<ResolvedChain, AuthorityError> {
        let reg = self.registry.lock().unwrap();
        let mut names = Vec::with_capacity(chain.len());
        for (index, link) in chain.iter().enumerate() {
            match reg.directory.get(&link.uid) {
                Some(identity) => names.push(identity.app_name.clone()),
                None => return Err(AuthorityError::UnresolvablePrincipal { index }),
            }
        }
        Ok(ResolvedChain::from_names(names))
    }

    pub fn resolve_principal(&self, principal: Principal) -> Option<String> {
        let reg = self.registry.lock().unwrap();
        reg.directory.get(&principal.uid).map(|i| i.app_name.clone())
    }

    pub fn identity_of_uid(&self, uid: u32) -> Option<AppIdentity> {
        let reg = self.registry.lock().unwrap();
        reg.directory.get(&uid).cloned()
    }

    /// Snapshot of every directory entry, uid to identity.
    pub fn directory_snapshot(&self) -> Vec<(u32, AppIdentity)> {
        let reg = self.registry.lock().unwrap();
        reg.directory.iter().map(|(uid, id)| (*uid, id.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AuthTag, Message};

    fn live_authority() -> (Authority, Principal) {
        let authority = Authority::new(MacAlgorithm::HmacSha1);
        let p = Principal::new(10001, 1);
        authority.admit(p, AppIdentity::new("ExampleApp", []));
        (authority, p)
    }

    fn sign(key: &SecretKey, speaker: Principal, msg: Message) -> Statement {
        let tag = crypto::mac_create(key, &Statement::signing_bytes(&speaker, &msg));
        Statement { speaker, message: msg, tag }
    }

    #[test]
    fn register_then_verify_round_trip() {
        let (authority, p) = live_authority();
        let key = authority.register(p).unwrap();
        let stmt = sign(&key, p, Message::new("m", b"hello".to_vec(), 7));
        assert_eq!(authority.verify_statement(&stmt), Verdict::Valid);
    }

    #[test]
    fn reregistration_invalidates_prior_statements() {
        let (authority, p) = live_authority();
        let key1 = authority.register(p).unwrap();
        let stmt = sign(&key1, p, Message::new("m", b"old".to_vec(), 1));
        assert_eq!(authority.verify_statement(&stmt), Verdict::Valid);

        authority.register(p).unwrap();
        assert_eq!(authority.verify_statement(&stmt), Verdict::InvalidTag);
    }

    #[test]
    fn unknown_principal_cannot_register() {
        let authority = Authority::new(MacAlgorithm::HmacSha1);
        let ghost = Principal::new(4242, 1);
        assert!(matches!(
            authority.register(ghost),
            Err(AuthorityError::UnknownPrincipal(p)) if p == ghost
        ));
    }

    #[test]
    fn never_registered_speaker_is_unknown() {
        let authority = Authority::new(MacAlgorithm::HmacSha1);
        let stmt = Statement {
            speaker: Principal::new(1, 1),
            message: Message::new("m", vec![], 0),
            tag: AuthTag::from_bytes(vec![0; 20]),
        };
        assert_eq!(authority.verify_statement(&stmt), Verdict::UnknownSpeaker);
    }

    #[test]
    fn tampered_payload_is_invalid() {
        let (authority, p) = live_authority();
        let key = authority.register(p).unwrap();
        let mut stmt = sign(&key, p, Message::new("m", vec![1, 2, 3], 0));
        stmt.message.payload[0] ^= 0xff;
        assert_eq!(authority.verify_statement(&stmt), Verdict::InvalidTag);
    }

    #[test]
    fn wrong_length_tag_is_invalid_not_an_error() {
        let (authority, p) = live_authority();
        authority.register(p).unwrap();
        let stmt = Statement {
            speaker: p,
            message: Message::new("m", vec![], 0),
            tag: AuthTag::from_bytes(vec![0; 5]),
        };
        assert_eq!(authority.verify_statement(&stmt), Verdict::InvalidTag);
    }

    #[test]
    fn resolve_chain_preserves_order() {
        let authority = Authority::new(MacAlgorithm::HmacSha1);
        let a = Principal::new(10001, 1);
        let b = Principal::new(10002, 2);
        authority.admit(a, AppIdentity::new("ExampleApp", []));
        authority.admit(b, AppIdentity::new("PayBuddy", []));
        let chain = CallChain::from_links(vec![a, b]);
        let resolved = authority.resolve_chain(&chain).unwrap();
        assert_eq!(resolved.names(), ["ExampleApp", "PayBuddy"]);
    }

    #[test]
    fn resolve_empty_chain() {
        let authority = Authority::new(MacAlgorithm::HmacSha1);
        assert!(authority.resolve_chain(&CallChain::empty()).unwrap().is_empty());
    }

    #[test]
    fn retired_principal_is_unresolvable_and_unknown() {
        let (authority, p) = live_authority();
        let key = authority.register(p).unwrap();
        let stmt = sign(&key, p, Message::new("m", vec![], 0));
        authority.retire(p);

        let chain = CallChain::from_links(vec![p]);
        assert_eq!(
            authority.resolve_chain(&chain),
            Err(AuthorityError::UnresolvablePrincipal { index: 0 })
        );
        assert_eq!(authority.verify_statement(&stmt), Verdict::UnknownSpeaker);
    }

    #[test]
    fn concurrent_register_and_verify() {
        use std::sync::Arc;
        let authority = Arc::new(Authority::new(MacAlgorithm::HmacSha1));
        let p = Principal::new(777, 1);
        authority.admit(p, AppIdentity::new("Spinner", []));

        let mut handles = Vec::new();
        for t in 0..8 {
            let authority = Arc::clone(&authority);
            handles.push(std::thread::spawn(move || {
                for i in 0..50 {
                    let key = authority.register(p).unwrap();
                    let msg = Message::new("spin", vec![t, i], u64::from(i));
                    let stmt = sign(&key, p, msg);
                    // Another thread may have replaced the key in between; the
                    // verdict must still be decisive, never a partial state.
                    let v = authority.verify_statement(&stmt);
                    assert!(matches!(v, Verdict::Valid | Verdict::InvalidTag));
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
    }
}
