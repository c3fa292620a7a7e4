//! A provenance-carrying IPC framework and simulator.
//!
//! Apps run as isolated processes on a message bus that stamps every call
//! with the sender's identity and carries the full call chain along. A
//! trusted authority manager holds one MAC key per principal, so any app can
//! make a verifiable statement cheaply and anyone can have it checked. A
//! network provider turns on-device provenance into attested RPCs over a
//! channel whose secret no app can read.
//!
//! Module map:
//!
//! * [`codec`]: the canonical byte encoding everything is MAC'd over
//! * [`types`]: principals, messages, statements, call chains
//! * [`crypto`]: the HMAC primitive and key generation
//! * [`authority`]: key registry, statement verification, name resolution
//! * [`policy`]: intersection-rule permission checks over chains
//! * [`bus`]: the simulated multi-process environment
//! * [`net`]: attested RPC provider, remote verifier, transports
//! * [`scenario`]: the two end-to-end demonstration flows
//! * [`config`]: runtime configuration, fixed at bus startup

pub mod authority;
pub mod bus;
pub mod codec;
pub mod config;
pub mod crypto;
pub mod net;
pub mod policy;
pub mod scenario;
pub mod types;

pub use authority::{Authority, AuthorityError, Verdict};
pub use bus::{AppCtx, AppLogic, Bus, BusError, CallContext, ChainMode, ProcessHandle};
pub use config::{Config, TransportKind};
pub use crypto::{MacAlgorithm, SecretKey};
pub use net::{
    AttestedRequest, DeviceCredential, NetProvider, Rejection, RemoteVerifier, RpcResponse,
    ServerView, TrustStore,
};
pub use policy::{Decision, DenyCause, PermissionTable};
pub use types::{
    AppIdentity, AuthTag, CallChain, Message, PermissionToken, Principal, ResolvedChain, Statement,
};
