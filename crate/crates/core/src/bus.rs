//! The simulated multi-process environment: spawns isolated app actors,
//! delivers request/reply calls with an unforgeable caller identity, and
//! propagates call chains on every call.
//!
//! Processes are threads with private state; all interaction is by message.
//! The bus stamps `immediate_caller` on every delivery from the sending
//! handle, so a caller may claim any antecedent chain it likes but can never
//! keep its own identity off the front of the callee's effective chain.
//!
//! Calls are synchronous request/reply; a cycle of calls (A waiting on B
//! waiting on A) deadlocks, as in any blocking RPC system. Keep call graphs
//! acyclic.
//!
//! Verification and resolution are reachable two ways: trusted system
//! components hold the `Authority` directly, while apps go through the
//! `authority` service endpoint the bus spawns at startup, one extra IPC
//! round trip, which is also why verifying costs more than signing here.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;

use thiserror::Error;

use crate::authority::{Authority, AuthorityError, Verdict};
use crate::codec::{Decode, Encode};
use crate::config::Config;
use crate::crypto::{self, SecretKey};
use crate::types::{
    AppIdentity, CallChain, ChainError, Message, PermissionToken, Principal, ResolvedChain,
    Statement,
};

/// Name and uid of the authority service endpoint every bus starts with.
pub const AUTHORITY_APP: &str = "authority";
pub const AUTHORITY_UID: u32 = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("app name {0:?} is already spawned")]
    DuplicateApp(String),
    #[error("no app named {0:?}")]
    UnknownTarget(String),
    #[error("app {0:?} is no longer accepting calls")]
    TargetDead(String),
    #[error(transparent)]
    ChainDepth(#[from] ChainError),
    #[error("payload of {len} bytes exceeds the {max}-byte limit")]
    PayloadTooLarge { len: usize, max: usize },
    #[error(transparent)]
    Authority(#[from] AuthorityError),
    #[error("malformed service reply: {0}")]
    BadServiceReply(String),
}

/// Whether a call carries the caller's current chain or starts fresh.
///
/// `Drop` is the privilege-drop move: the callee hears only the caller's own
/// identity, never its antecedents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainMode {
    Propagate,
    Drop,
}

/// Everything a callee learns about one incoming call.
///
/// `immediate_caller` is stamped by the bus and cannot be chosen by the
/// sender; `antecedent_chain` is whatever the sender claimed. Contexts are
/// plain values: a callee may store one and reuse its chain when dispatching
/// deferred work later.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallContext {
    immediate_caller: Principal,
    antecedent_chain: CallChain,
    statements: Vec<Statement>,
}

impl CallContext {
    /// System-side constructor. Application code never builds contexts; it
    /// receives them from the bus with each delivery.
    pub fn assemble(
        immediate_caller: Principal,
        antecedent_chain: CallChain,
        statements: Vec<Statement>,
    ) -> Self {
        Self { immediate_caller, antecedent_chain, statements }
    }

    pub fn immediate_caller(&self) -> Principal {
        self.immediate_caller
    }

    pub fn antecedent_chain(&self) -> &CallChain {
        &self.antecedent_chain
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    /// The chain this call is judged by: the caller quoted in front of
    /// whatever it claimed came before.
    pub fn effective_chain(&self) -> CallChain {
        self.antecedent_chain
            .prepend(self.immediate_caller, usize::MAX)
            .expect("no depth limit on read")
    }
}

struct Delivery {
    ctx: CallContext,
    msg: Message,
    reply_tx: mpsc::Sender<Message>,
}

struct ProcessEntry {
    principal: Principal,
    sender: mpsc::Sender<Delivery>,
    join: Option<thread::JoinHandle<()>>,
}

/// Capability to act as one spawned process. Only `Bus::spawn` creates these,
/// which is what makes the stamped caller identity trustworthy.
#[derive(Clone)]
pub struct ProcessHandle {
    inner: Arc<HandleInner>,
}

struct HandleInner {
    principal: Principal,
    identity: AppIdentity,
    key: Mutex<Option<SecretKey>>,
}

impl ProcessHandle {
    pub fn principal(&self) -> Principal {
        self.inner.principal
    }

    pub fn identity(&self) -> &AppIdentity {
        &self.inner.identity
    }

    pub fn app_name(&self) -> &str {
        &self.inner.identity.app_name
    }
}

impl std::fmt::Debug for ProcessHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ProcessHandle({} {})", self.app_name(), self.principal())
    }
}

/// App-side view of the bus while handling one call (or acting spontaneously).
///
/// Owns clones of everything it needs, so handlers and scenario drivers can
/// hold it without lifetime plumbing.
pub struct AppCtx {
    bus: Bus,
    me: ProcessHandle,
    current: CallContext,
    current_kind: CtxKind,
}

impl AppCtx {
    pub fn me(&self) -> &ProcessHandle {
        &self.me
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn context(&self) -> &CallContext {
        &self.current
    }

    /// The effective chain of the call being handled; empty-context "own
    /// behalf" work has no links at all.
    pub fn current_chain(&self) -> CallChain {
        match self.current_kind {
            CtxKind::Delivered => self.current.effective_chain(),
            CtxKind::OwnBehalf => CallChain::empty(),
        }
    }

    /// Calls `to`, carrying this app's current chain (`Propagate`) or nothing
    /// (`Drop`) as the antecedents.
    pub fn call(
        &self,
        to: &str,
        msg: Message,
        mode: ChainMode,
        statements: Vec<Statement>,
    ) -> Result<Message, BusError> {
        let antecedents = match mode {
            ChainMode::Propagate => self.current_chain(),
            ChainMode::Drop => CallChain::empty(),
        };
        self.bus.call_with_antecedents(&self.me, to, msg, antecedents, statements)
    }

    /// Same as `call`, but with an arbitrary claimed antecedent chain. A liar
    /// gains nothing: its own identity is still stamped in front.
    pub fn call_claiming(
        &self,
        to: &str,
        msg: Message,
        claimed_antecedents: CallChain,
        statements: Vec<Statement>,
    ) -> Result<Message, BusError> {
        self.bus.call_with_antecedents(&self.me, to, msg, claimed_antecedents, statements)
    }

    pub fn make_statement(&self, msg: &Message) -> Result<Statement, BusError> {
        self.bus.make_statement(&self.me, msg)
    }

    /// Statement verification through the authority service endpoint: one IPC
    /// round trip, verdict only.
    pub fn verify_statement(&self, stmt: &Statement) -> Result<Verdict, BusError> {
        let payload = stmt.encode().expect("statement within payload limits");
        let reply = self.call(
            AUTHORITY_APP,
            Message::new("verify_statement", payload, msg_timestamp()),
            ChainMode::Drop,
            Vec::new(),
        )?;
        let byte = *reply
            .payload
            .first()
            .ok_or_else(|| BusError::BadServiceReply("empty verdict".into()))?;
        Verdict::from_wire_byte(byte)
            .ok_or_else(|| BusError::BadServiceReply(format!("verdict byte {byte}")))
    }

    /// Chain resolution through the authority service endpoint.
    pub fn resolve_chain(&self, chain: &CallChain) -> Result<Result<ResolvedChain, usize>, BusError> {
        let payload = chain.encode().expect("chain within payload limits");
        let reply = self.call(
            AUTHORITY_APP,
            Message::new("resolve_chain", payload, msg_timestamp()),
            ChainMode::Drop,
            Vec::new(),
        )?;
        decode_resolution_reply(&reply.payload)
    }
}

/// Distinguishes a context delivered by the bus from an own-behalf one, so
/// `current_chain` on the latter stays empty instead of naming the app itself.
#[derive(Clone, Copy, PartialEq, Eq)]
enum CtxKind {
    Delivered,
    OwnBehalf,
}

/// Handler for incoming calls. Closures with the matching signature qualify.
pub trait AppLogic: Send {
    fn on_call(&mut self, ctx: &AppCtx, msg: &Message) -> Message;
}

impl<F> AppLogic for F
where
    F: FnMut(&AppCtx, &Message) -> Message + Send,
{
    fn on_call(&mut self, ctx: &AppCtx, msg: &Message) -> Message {
        self(ctx, msg)
    }
}

struct BusInner {
    config: Config,
    authority: Arc<Authority>,
    processes: Mutex<HashMap<String, ProcessEntry>>,
    next_pid: AtomicU32,
}

/// Cloneable handle to one running bus.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<BusInner>,
}

impl Bus {
    /// Starts a bus and its authority service endpoint.
    pub fn start(config: Config) -> Bus {
        let authority = Arc::new(Authority::new(config.algorithm));
        let bus = Bus {
            inner: Arc::new(BusInner {
                config,
                authority: Arc::clone(&authority),
                processes: Mutex::new(HashMap::new()),
                next_pid: AtomicU32::new(1),
            }),
        };
        let service_authority = Arc::clone(&authority);
        bus.spawn(AUTHORITY_APP, AUTHORITY_UID, [], move |_ctx: &AppCtx, msg: &Message| {
            authority_service_reply(&service_authority, msg)
        })
        .expect("fresh bus has no name collisions");
        bus
    }

    pub fn config(&self) -> &Config {
        &self.inner.config
    }

    pub fn authority(&self) -> &Arc<Authority> {
        &self.inner.authority
    }

    /// Permission snapshot over everything currently spawned.
    pub fn permission_table(&self) -> crate::policy::PermissionTable {
        crate::policy::PermissionTable::from_authority(&self.inner.authority)
    }

    /// Launches an isolated process for `app_name` under a fresh pid and
    /// enters it in the authority's directory.
    pub fn spawn(
        &self,
        app_name: &str,
        uid: u32,
        permissions: impl IntoIterator<Item = PermissionToken>,
        logic: impl AppLogic + 'static,
    ) -> Result<ProcessHandle, BusError> {
        let identity = AppIdentity::new(app_name, permissions);
        let pid = self.inner.next_pid.fetch_add(1, Ordering::Relaxed);
        let principal = Principal::new(uid, pid);
        let handle = ProcessHandle {
            inner: Arc::new(HandleInner {
                principal,
                identity: identity.clone(),
                key: Mutex::new(None),
            }),
        };

        let (tx, rx) = mpsc::channel::<Delivery>();
        {
            let mut procs = self.inner.processes.lock().unwrap();
            if procs.contains_key(app_name) {
                return Err(BusError::DuplicateApp(app_name.to_string()));
            }
            self.inner.authority.admit(principal, identity);

            let bus = self.clone();
            let thread_handle = handle.clone();
            let mut logic = logic;
            let join = thread::Builder::new()
                .name(format!("app-{app_name}"))
                .spawn(move || {
                    while let Ok(delivery) = rx.recv() {
                        let ctx = AppCtx {
                            bus: bus.clone(),
                            me: thread_handle.clone(),
                            current: delivery.ctx,
                            current_kind: CtxKind::Delivered,
                        };
                        let reply = logic.on_call(&ctx, &delivery.msg);
                        // The caller may have given up; that is its problem.
                        let _ = delivery.reply_tx.send(reply);
                    }
                })
                .expect("thread spawn");

            procs.insert(
                app_name.to_string(),
                ProcessEntry { principal, sender: tx, join: Some(join) },
            );
        }
        Ok(handle)
    }

    /// A context for work an app does on its own behalf: no antecedents.
    pub fn app_ctx(&self, me: &ProcessHandle) -> AppCtx {
        AppCtx {
            bus: self.clone(),
            me: me.clone(),
            current: CallContext::assemble(me.principal(), CallChain::empty(), Vec::new()),
            current_kind: CtxKind::OwnBehalf,
        }
    }

    /// Synchronous request/reply with no claimed antecedents.
    pub fn call(
        &self,
        from: &ProcessHandle,
        to: &str,
        msg: Message,
        statements: Vec<Statement>,
    ) -> Result<Message, BusError> {
        self.call_with_antecedents(from, to, msg, CallChain::empty(), statements)
    }

    /// Synchronous request/reply. The delivered context carries
    /// `from.principal()` as the immediate caller (the one field no sender
    /// controls) plus the claimed antecedents and the statements untouched.
    pub fn call_with_antecedents(
        &self,
        from: &ProcessHandle,
        to: &str,
        msg: Message,
        antecedents: CallChain,
        statements: Vec<Statement>,
    ) -> Result<Message, BusError> {
        let max_payload = self.inner.config.max_payload;
        if msg.payload.len() > max_payload {
            return Err(BusError::PayloadTooLarge { len: msg.payload.len(), max: max_payload });
        }
        // The callee's effective chain must fit the depth limit.
        if antecedents.len() + 1 > self.inner.config.max_chain_depth {
            return Err(BusError::ChainDepth(ChainError::DepthExceeded {
                max: self.inner.config.max_chain_depth,
            }));
        }
        let sender = {
            let procs = self.inner.processes.lock().unwrap();
            let entry = procs.get(to).ok_or_else(|| BusError::UnknownTarget(to.to_string()))?;
            entry.sender.clone()
        };
        let ctx = CallContext::assemble(from.principal(), antecedents, statements);
        let (reply_tx, reply_rx) = mpsc::channel();
        sender
            .send(Delivery { ctx, msg, reply_tx })
            .map_err(|_| BusError::TargetDead(to.to_string()))?;
        reply_rx.recv().map_err(|_| BusError::TargetDead(to.to_string()))
    }

    /// Signs `msg` as `from`, registering a key with the authority on first
    /// use. The key is cached in the handle and stays off every wire.
    pub fn make_statement(&self, from: &ProcessHandle, msg: &Message) -> Result<Statement, BusError> {
        let mut slot = from.inner.key.lock().unwrap();
        let key = match slot.as_ref() {
            Some(k) => k.clone(),
            None => {
                let k = self.inner.authority.register(from.principal())?;
                *slot = Some(k.clone());
                k
            }
        };
        drop(slot);
        let data = Statement::signing_bytes(&from.principal(), msg);
        Ok(Statement {
            speaker: from.principal(),
            message: msg.clone(),
            tag: crypto::mac_create(&key, &data),
        })
    }

    /// Requests a replacement key, invalidating everything signed before.
    pub fn rekey(&self, from: &ProcessHandle) -> Result<(), BusError> {
        let key = self.inner.authority.register(from.principal())?;
        *from.inner.key.lock().unwrap() = Some(key);
        Ok(())
    }

    /// Tears a process down: its inbox closes, its key is destroyed, its
    /// directory entry disappears. Returns false if no such app.
    pub fn teardown(&self, app_name: &str) -> bool {
        let entry = {
            let mut procs = self.inner.processes.lock().unwrap();
            procs.remove(app_name)
        };
        match entry {
            Some(mut entry) => {
                self.inner.authority.retire(entry.principal);
                drop(entry.sender);
                if let Some(join) = entry.join.take() {
                    let _ = join.join();
                }
                true
            }
            None => false,
        }
    }

    /// Stops every process and waits for their threads.
    pub fn shutdown(&self) {
        let names: Vec<String> = {
            let procs = self.inner.processes.lock().unwrap();
            procs.keys().cloned().collect()
        };
        for name in names {
            self.teardown(&name);
        }
    }
}

fn authority_service_reply(authority: &Authority, msg: &Message) -> Message {
    match msg.method.as_str() {
        "verify_statement" => match Statement::decode(&msg.payload) {
            Ok(stmt) => {
                let verdict = authority.verify_statement(&stmt);
                Message::new("verdict", vec![verdict.wire_byte()], msg.timestamp)
            }
            Err(e) => Message::new("error", e.to_string().into_bytes(), msg.timestamp),
        },
        "resolve_chain" => match CallChain::decode(&msg.payload) {
            Ok(chain) => {
                let payload = encode_resolution_reply(authority.resolve_chain(&chain));
                Message::new("resolution", payload, msg.timestamp)
            }
            Err(e) => Message::new("error", e.to_string().into_bytes(), msg.timestamp),
        },
        other => Message::new("error", format!("unknown method {other:?}").into_bytes(), msg.timestamp),
    }
}

fn encode_resolution_reply(res: Result<ResolvedChain, AuthorityError>) -> Vec<u8> {
    let mut enc = crate::codec::Encoder::new();
    match res {
        Ok(resolved) => {
            enc.put_u8(0);
            resolved.encode_into(&mut enc).expect("resolved names fit");
        }
        Err(AuthorityError::UnresolvablePrincipal { index }) => {
            enc.put_u8(1);
            enc.put_u32(index as u32);
        }
        Err(other) => {
            enc.put_u8(2);
            enc.put_bytes(other.to_string().as_bytes()).expect("short error text");
        }
    }
    enc.finish()
}

fn decode_resolution_reply(payload: &[u8]) -> Result<Result<ResolvedChain, usize>, BusError> {
    let mut dec = crate::codec::Decoder::new(payload);
    let status = dec
        .get_u8()
        .map_err(|e| BusError::BadServiceReply(e.to_string()))?;
    match status {
        0 => {
            let resolved = ResolvedChain::decode_from(&mut dec)
                .map_err(|e| BusError::BadServiceReply(e.to_string()))?;
            Ok(Ok(resolved))
        }
        1 => {
            let index = dec
                .get_u32()
                .map_err(|e| BusError::BadServiceReply(e.to_string()))?;
            Ok(Err(index as usize))
        }
        _ => {
            let text = dec.get_bytes().unwrap_or_default();
            Err(BusError::BadServiceReply(String::from_utf8_lossy(&text).into_owned()))
        }
    }
}

/// Milliseconds since the Unix epoch; plumbing for messages that do not care
/// about deterministic time.
pub fn msg_timestamp() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
