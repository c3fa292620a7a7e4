//! The network provider service and its matching remote verifier.
//!
//! The provider is the only component holding the device credential. For each
//! outbound RPC it verifies the supplied statements with the authority,
//! resolves the caller's bus-observed chain into app names, and builds an
//! attested request whose provenance headers no app can influence except
//! through its genuine chain and statements. The whole request is then
//! authenticated to the remote end with the channel secret.
//!
//! Wire formats (all canonical encoding, see `codec`):
//!
//! * attested request: `device_id | url | payload | chain | statements`,
//!   where `chain` is the resolved app-name list written origin first (the
//!   reverse of the in-memory most-recent-caller-first chain order) and each
//!   statement is restated as `app_name | message | tag`.
//! * signed request: `request_bytes | channel_mac`, the MAC taken over
//!   `request_bytes` with the channel secret.
//! * request frame: `kind (u8) | body`, kind 0 = plain echo, 1 = attested.
//! * reply frame: `status (u8) | body`, status 0 = accepted, 1 = bad channel
//!   auth, 2 = malformed, 3 = refused by the server application.
//!
//! Rendered as HTTP-style headers, the same provenance travels as
//! `X-Provenance-Chain` (comma-joined names, so names may not contain commas)
//! and `X-Provenance-Statements` (base16 of the restated-statement list).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use thiserror::Error;

use crate::authority::{Authority, Verdict};
use crate::bus::{AppCtx, AppLogic, CallContext};
use crate::codec::{Decode, DecodeError, Decoder, Encode, EncodeError, Encoder};
use crate::crypto::{self, MacAlgorithm, SecretKey};
use crate::types::{AuthTag, Message, ResolvedChain, Statement};

pub const CHAIN_HEADER: &str = "X-Provenance-Chain";
pub const STATEMENTS_HEADER: &str = "X-Provenance-Statements";

/// Channel credential held only by the provider; apps have no API that
/// reaches the secret.
pub struct DeviceCredential {
    device_id: String,
    channel_secret: SecretKey,
}

impl DeviceCredential {
    pub fn new(device_id: impl Into<String>, channel_secret: SecretKey) -> Self {
        Self { device_id: device_id.into(), channel_secret }
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }
}

/// One statement re-spoken by the provider after on-device verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestatedStatement {
    pub app_name: String,
    pub message: Message,
    pub tag: AuthTag,
}

impl Encode for RestatedStatement {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_str(&self.app_name)?;
        self.message.encode_into(enc)?;
        self.tag.encode_into(enc)
    }
}

impl Decode for RestatedStatement {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            app_name: dec.get_str()?,
            message: Message::decode_from(dec)?,
            tag: AuthTag::decode_from(dec)?,
        })
    }
}

/// Outbound RPC as assembled by the provider. Header fields are
/// provider-generated; the calling app only ever controls `url` and
/// `payload`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestedRequest {
    pub device_id: String,
    pub url: String,
    pub payload: Vec<u8>,
    pub header_chain: ResolvedChain,
    pub header_statements: Vec<RestatedStatement>,
}

impl AttestedRequest {
    /// Value of the `X-Provenance-Chain` header.
    pub fn chain_header(&self) -> String {
        self.header_chain.names().join(",")
    }

    /// Value of the `X-Provenance-Statements` header.
    pub fn statements_header(&self) -> String {
        let mut enc = Encoder::new();
        enc.put_seq(&self.header_statements).expect("statements fit");
        hex::encode(enc.finish())
    }
}

impl Encode for AttestedRequest {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_str(&self.device_id)?;
        enc.put_str(&self.url)?;
        enc.put_bytes(&self.payload)?;
        self.header_chain.encode_into(enc)?;
        enc.put_seq(&self.header_statements)
    }
}

impl Decode for AttestedRequest {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            device_id: dec.get_str()?,
            url: dec.get_str()?,
            payload: dec.get_bytes()?,
            header_chain: ResolvedChain::decode_from(dec)?,
            header_statements: dec.get_seq()?,
        })
    }
}

/// An attested request plus the channel evidence over its exact bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedRequest {
    pub request_bytes: Vec<u8>,
    pub channel_mac: AuthTag,
}

impl Encode for SignedRequest {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_bytes(&self.request_bytes)?;
        self.channel_mac.encode_into(enc)
    }
}

impl Decode for SignedRequest {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { request_bytes: dec.get_bytes()?, channel_mac: AuthTag::decode_from(dec)? })
    }
}

/// What the remote end accepts as the verified provenance of one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerView {
    pub device_id: String,
    pub url: String,
    pub chain: Vec<String>,
    pub statements: Vec<(String, Message)>,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    #[error("bad channel authentication")]
    BadChannelAuth,
    #[error("malformed provenance header")]
    MalformedHeader,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("connect failed: {0}")]
    Connect(String),
    #[error("transport i/o failed: {0}")]
    Io(String),
    #[error("unintelligible reply: {0}")]
    BadReply(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RpcError {
    #[error("statement {index} failed verification ({verdict}); nothing transmitted")]
    StatementVerificationFailed { index: usize, verdict: Verdict },
    #[error("chain link {index} does not resolve to a known app")]
    UnresolvablePrincipal { index: usize },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Reply the caller gets back, verbatim from the remote end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RpcResponse {
    Accepted { body: Vec<u8> },
    Refused { reason: String },
}

impl RpcResponse {
    pub fn is_accepted(&self) -> bool {
        matches!(self, RpcResponse::Accepted { .. })
    }
}

/// Authenticated channel to the remote verifier.
pub trait Transport: Send + Sync {
    fn round_trip(&self, frame: &[u8]) -> Result<Vec<u8>, TransportError>;
}

const FRAME_PLAIN: u8 = 0;
const FRAME_ATTESTED: u8 = 1;

const STATUS_ACCEPTED: u8 = 0;
const STATUS_BAD_CHANNEL_AUTH: u8 = 1;
const STATUS_MALFORMED: u8 = 2;
const STATUS_REFUSED: u8 = 3;

fn encode_frame(kind: u8, body: &[u8]) -> Vec<u8> {
    let mut enc = Encoder::with_capacity(body.len() + 8);
    enc.put_u8(kind);
    enc.put_bytes(body).expect("frame body fits");
    enc.finish()
}

fn decode_frame(frame: &[u8]) -> Result<(u8, Vec<u8>), DecodeError> {
    let mut dec = Decoder::new(frame);
    let kind = dec.get_u8()?;
    let body = dec.get_bytes()?;
    dec.finish()?;
    Ok((kind, body))
}

fn decode_reply(reply: &[u8]) -> Result<RpcResponse, TransportError> {
    let (status, body) = decode_frame(reply).map_err(|e| TransportError::BadReply(e.to_string()))?;
    match status {
        STATUS_ACCEPTED => Ok(RpcResponse::Accepted { body }),
        STATUS_BAD_CHANNEL_AUTH => Ok(RpcResponse::Refused { reason: Rejection::BadChannelAuth.to_string() }),
        STATUS_MALFORMED => Ok(RpcResponse::Refused { reason: Rejection::MalformedHeader.to_string() }),
        STATUS_REFUSED => Ok(RpcResponse::Refused {
            reason: String::from_utf8_lossy(&body).into_owned(),
        }),
        other => Err(TransportError::BadReply(format!("status byte {other}"))),
    }
}

/// Unattested echo round trip over the same channel; the baseline the
/// benchmarks compare attested RPCs against.
pub fn plain_round_trip(transport: &dyn Transport, payload: &[u8]) -> Result<Vec<u8>, TransportError> {
    let reply = transport.round_trip(&encode_frame(FRAME_PLAIN, payload))?;
    match decode_reply(&reply)? {
        RpcResponse::Accepted { body } => Ok(body),
        RpcResponse::Refused { reason } => Err(TransportError::BadReply(reason)),
    }
}

/// The network provider system service.
pub struct NetProvider {
    credential: DeviceCredential,
    authority: Arc<Authority>,
    transport: Arc<dyn Transport>,
}

impl NetProvider {
    pub fn new(credential: DeviceCredential, authority: Arc<Authority>, transport: Arc<dyn Transport>) -> Self {
        Self { credential, authority, transport }
    }

    pub fn device_id(&self) -> &str {
        self.credential.device_id()
    }

    /// Builds and transmits one attested request on behalf of the calling
    /// context. Every supplied statement must verify; the header chain is the
    /// resolution of the context's effective chain, written origin first.
    pub fn rpc(
        &self,
        ctx: &CallContext,
        url: &str,
        payload: &[u8],
        statements: &[Statement],
    ) -> Result<RpcResponse, RpcError> {
        for (index, stmt) in statements.iter().enumerate() {
            let verdict = self.authority.verify_statement(stmt);
            if !verdict.is_valid() {
                return Err(RpcError::StatementVerificationFailed { index, verdict });
            }
        }

        let wire_chain = ctx.effective_chain().origin_first();
        let header_chain = self
            .authority
            .resolve_chain(&wire_chain)
            .map_err(|e| match e {
                crate::authority::AuthorityError::UnresolvablePrincipal { index } => {
                    RpcError::UnresolvablePrincipal { index }
                }
                // resolve_chain has no other failure mode today
                _ => RpcError::UnresolvablePrincipal { index: 0 },
            })?;

        let mut header_statements = Vec::with_capacity(statements.len());
        for (index, stmt) in statements.iter().enumerate() {
            let app_name = self
                .authority
                .resolve_principal(stmt.speaker)
                .ok_or(RpcError::UnresolvablePrincipal { index })?;
            header_statements.push(RestatedStatement {
                app_name,
                message: stmt.message.clone(),
                tag: stmt.tag.clone(),
            });
        }

        let request = AttestedRequest {
            device_id: self.credential.device_id.clone(),
            url: url.to_string(),
            payload: payload.to_vec(),
            header_chain,
            header_statements,
        };
        let request_bytes = request.encode().expect("request fits frame limits");
        let channel_mac = crypto::mac_create(&self.credential.channel_secret, &request_bytes);
        let signed = SignedRequest { request_bytes, channel_mac };
        let frame = encode_frame(FRAME_ATTESTED, &signed.encode().expect("signed request fits"));

        let reply = self.transport.round_trip(&frame)?;
        Ok(decode_reply(&reply)?)
    }
}

/// Bus endpoint wrapping the provider: decodes `rpc` calls and answers with
/// `rpc_ok` / `rpc_refused` / `rpc_error` replies.
pub fn provider_endpoint(provider: Arc<NetProvider>) -> impl AppLogic {
    move |ctx: &AppCtx, msg: &Message| -> Message {
        if msg.method != "rpc" {
            return Message::new("rpc_error", format!("unknown method {:?}", msg.method).into_bytes(), msg.timestamp);
        }
        let call = match RpcCall::decode(&msg.payload) {
            Ok(c) => c,
            Err(e) => return Message::new("rpc_error", e.to_string().into_bytes(), msg.timestamp),
        };
        let outcome = provider.rpc(ctx.context(), &call.url, &call.payload, ctx.context().statements());
        match outcome {
            Ok(RpcResponse::Accepted { body }) => Message::new("rpc_ok", body, msg.timestamp),
            Ok(RpcResponse::Refused { reason }) => {
                Message::new("rpc_refused", reason.into_bytes(), msg.timestamp)
            }
            Err(e) => Message::new("rpc_error", e.to_string().into_bytes(), msg.timestamp),
        }
    }
}

/// Payload of a bus-level `rpc` call into the provider endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpcCall {
    pub url: String,
    pub payload: Vec<u8>,
}

impl Encode for RpcCall {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_str(&self.url)?;
        enc.put_bytes(&self.payload)
    }
}

impl Decode for RpcCall {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { url: dec.get_str()?, payload: dec.get_bytes()? })
    }
}

/// device id to channel secret, as held by the remote end.
#[derive(Default)]
pub struct TrustStore {
    devices: HashMap<String, SecretKey>,
}

#[derive(Debug, Error)]
pub enum TrustStoreError {
    #[error("cannot read trust store: {0}")]
    Io(#[from] std::io::Error),
    #[error("trust store line {0}: expected device_id=hex_secret")]
    Malformed(usize),
    #[error("trust store line {0}: secret must be 64 hex digits")]
    BadSecret(usize),
    #[error("trust store has no entries")]
    Empty,
}

impl TrustStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, device_id: impl Into<String>, secret: SecretKey) {
        self.devices.insert(device_id.into(), secret);
    }

    pub fn lookup(&self, device_id: &str) -> Option<&SecretKey> {
        self.devices.get(device_id)
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    /// Loads `device_id=hex_secret` lines; `#` starts a comment.
    pub fn load(path: impl AsRef<Path>, algorithm: MacAlgorithm) -> Result<Self, TrustStoreError> {
        let text = std::fs::read_to_string(path)?;
        let mut store = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (id, hex_secret) = trimmed.split_once('=').ok_or(TrustStoreError::Malformed(line))?;
            let bytes = hex::decode(hex_secret.trim()).map_err(|_| TrustStoreError::BadSecret(line))?;
            let bytes: [u8; crypto::KEY_LEN] =
                bytes.try_into().map_err(|_| TrustStoreError::BadSecret(line))?;
            store.insert(id.trim(), SecretKey::from_bytes(bytes, algorithm));
        }
        if store.is_empty() {
            return Err(TrustStoreError::Empty);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut text = String::from("# device_id=hex channel secret\n");
        let mut ids: Vec<_> = self.devices.keys().collect();
        ids.sort();
        for id in ids {
            let key = &self.devices[id];
            text.push_str(&format!("{id}={}\n", hex::encode(key.bytes())));
        }
        std::fs::write(path, text)
    }
}

/// Mints a channel secret for `device_id`, writes a single-entry trust store
/// to `path`, and hands back the matching device credential. Desk-scale stand
/// in for factory provisioning.
pub fn provision_device(
    path: impl AsRef<Path>,
    device_id: &str,
    algorithm: MacAlgorithm,
) -> Result<DeviceCredential, TrustStoreError> {
    let secret = crypto::keygen(algorithm).map_err(|e| {
        TrustStoreError::Io(std::io::Error::other(e.to_string()))
    })?;
    let mut store = TrustStore::new();
    store.insert(device_id, secret.clone());
    store.save(path)?;
    Ok(DeviceCredential::new(device_id, secret))
}

/// Builds the device credential from an existing trust store entry.
pub fn load_credential(
    path: impl AsRef<Path>,
    algorithm: MacAlgorithm,
) -> Result<DeviceCredential, TrustStoreError> {
    let store = TrustStore::load(path, algorithm)?;
    let mut ids: Vec<_> = store.devices.keys().cloned().collect();
    ids.sort();
    let id = ids.into_iter().next().ok_or(TrustStoreError::Empty)?;
    let secret = store.devices[&id].clone();
    Ok(DeviceCredential::new(id, secret))
}

/// Accepts a request iff its channel evidence validates against the trust
/// store, and returns the provenance exactly as attested.
pub fn server_verify(signed: &SignedRequest, trust: &TrustStore) -> Result<ServerView, Rejection> {
    let request =
        AttestedRequest::decode(&signed.request_bytes).map_err(|_| Rejection::MalformedHeader)?;
    let secret = trust.lookup(&request.device_id).ok_or(Rejection::BadChannelAuth)?;
    match crypto::mac_verify(secret, &signed.request_bytes, &signed.channel_mac) {
        Ok(true) => {}
        // Wrong length or wrong bytes: not our channel.
        Ok(false) | Err(_) => return Err(Rejection::BadChannelAuth),
    }
    Ok(ServerView {
        device_id: request.device_id,
        url: request.url,
        chain: request.header_chain.names().to_vec(),
        statements: request
            .header_statements
            .into_iter()
            .map(|s| (s.app_name, s.message))
            .collect(),
    })
}

/// Application logic behind the verifier: sees only verified provenance plus
/// the opaque payload.
pub trait ServerApp: Send + Sync {
    fn handle(&self, view: &ServerView, payload: &[u8]) -> Result<Vec<u8>, String>;
}

/// Echoes the payload; the no-op remote service used by benchmarks.
pub struct EchoApp;

impl ServerApp for EchoApp {
    fn handle(&self, _view: &ServerView, payload: &[u8]) -> Result<Vec<u8>, String> {
        Ok(payload.to_vec())
    }
}

/// The test server: channel verification in front of one `ServerApp`.
pub struct RemoteVerifier {
    trust: TrustStore,
    app: Box<dyn ServerApp>,
    log: Mutex<Vec<String>>,
}

impl RemoteVerifier {
    pub fn new(trust: TrustStore, app: Box<dyn ServerApp>) -> Self {
        Self { trust, app, log: Mutex::new(Vec::new()) }
    }

    /// Frame-level verification: decode, channel check, provenance view.
    pub fn verify_frame(&self, frame: &[u8]) -> Result<(ServerView, Vec<u8>), Rejection> {
        let (kind, body) = decode_frame(frame).map_err(|_| Rejection::MalformedHeader)?;
        if kind != FRAME_ATTESTED {
            return Err(Rejection::MalformedHeader);
        }
        let signed = SignedRequest::decode(&body).map_err(|_| Rejection::MalformedHeader)?;
        let request =
            AttestedRequest::decode(&signed.request_bytes).map_err(|_| Rejection::MalformedHeader)?;
        let view = server_verify(&signed, &self.trust)?;
        Ok((view, request.payload))
    }

    /// Full request handling, producing the reply frame.
    pub fn handle_frame(&self, frame: &[u8]) -> Vec<u8> {
        match decode_frame(frame) {
            Ok((FRAME_PLAIN, body)) => encode_frame(STATUS_ACCEPTED, &body),
            Ok((FRAME_ATTESTED, _)) => match self.verify_frame(frame) {
                Ok((view, payload)) => {
                    self.push_log(format!(
                        "accepted device={} chain={}",
                        view.device_id,
                        view.chain.join(",")
                    ));
                    match self.app.handle(&view, &payload) {
                        Ok(body) => encode_frame(STATUS_ACCEPTED, &body),
                        Err(reason) => {
                            self.push_log(format!("refused: {reason}"));
                            encode_frame(STATUS_REFUSED, reason.as_bytes())
                        }
                    }
                }
                Err(Rejection::BadChannelAuth) => {
                    self.push_log("rejected: bad channel authentication".to_string());
                    encode_frame(STATUS_BAD_CHANNEL_AUTH, b"")
                }
                Err(Rejection::MalformedHeader) => {
                    self.push_log("rejected: malformed header".to_string());
                    encode_frame(STATUS_MALFORMED, b"")
                }
            },
            _ => {
                self.push_log("rejected: malformed frame".to_string());
                encode_frame(STATUS_MALFORMED, b"")
            }
        }
    }

    fn push_log(&self, line: String) {
        self.log.lock().unwrap().push(line);
    }

    pub fn drain_log(&self) -> Vec<String> {
        std::mem::take(&mut *self.log.lock().unwrap())
    }
}

/// Default transport: the verifier lives in process, frames still travel as
/// the exact bytes the TCP transport would carry.
pub struct InMemoryTransport {
    verifier: Arc<RemoteVerifier>,
}

impl InMemoryTransport {
    pub fn new(verifier: Arc<RemoteVerifier>) -> Self {
        Self { verifier }
    }
}

impl Transport for InMemoryTransport {
    fn round_trip(&self, frame: &[u8]) -> Result<Vec<u8>, TransportError> {
        Ok(self.verifier.handle_frame(frame))
    }
}

fn write_framed(stream: &mut TcpStream, bytes: &[u8]) -> std::io::Result<()> {
    stream.write_all(&(bytes.len() as u32).to_be_bytes())?;
    stream.write_all(bytes)
}

fn read_framed(stream: &mut TcpStream) -> std::io::Result<Option<Vec<u8>>> {
    let mut len_buf = [0u8; 4];
    match stream.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    let mut buf = vec![0u8; len];
    stream.read_exact(&mut buf)?;
    Ok(Some(buf))
}

/// Loopback/TLS-free remote transport speaking the same frames over TCP.
pub struct TcpTransport {
    addr: String,
}

impl TcpTransport {
    pub fn new(addr: impl Into<String>) -> Self {
        Self { addr: addr.into() }
    }
}

impl Transport for TcpTransport {
    fn round_trip(&self, frame: &[u8]) -> Result<Vec<u8>, TransportError> {
        let mut stream =
            TcpStream::connect(&self.addr).map_err(|e| TransportError::Connect(e.to_string()))?;
        write_framed(&mut stream, frame).map_err(|e| TransportError::Io(e.to_string()))?;
        read_framed(&mut stream)
            .map_err(|e| TransportError::Io(e.to_string()))?
            .ok_or_else(|| TransportError::Io("connection closed before reply".to_string()))
    }
}

/// TCP front end for a `RemoteVerifier`; one thread per connection, any
/// number of frames per connection.
pub struct VerifierServer {
    listener: TcpListener,
    verifier: Arc<RemoteVerifier>,
}

impl VerifierServer {
    pub fn bind(addr: impl ToSocketAddrs, verifier: Arc<RemoteVerifier>) -> std::io::Result<Self> {
        Ok(Self { listener: TcpListener::bind(addr)?, verifier })
    }

    pub fn local_addr(&self) -> std::io::Result<std::net::SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until the process ends, reporting each verdict via `on_log`.
    pub fn run(self, on_log: impl Fn(&str)) -> std::io::Result<()> {
        loop {
            let (stream, _) = self.listener.accept()?;
            let verifier = Arc::clone(&self.verifier);
            Self::serve_connection(stream, &verifier);
            for line in self.verifier.drain_log() {
                on_log(&line);
            }
        }
    }

    /// Serves in a background thread until the returned guard is dropped.
    pub fn start(self) -> std::io::Result<ServerGuard> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let verifier = Arc::clone(&self.verifier);
        let join = thread::spawn(move || {
            for stream in self.listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(s) => {
                        let verifier = Arc::clone(&verifier);
                        thread::spawn(move || Self::serve_connection(s, &verifier));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(ServerGuard { addr, stop, join: Some(join) })
    }

    fn serve_connection(mut stream: TcpStream, verifier: &RemoteVerifier) {
        while let Ok(Some(frame)) = read_framed(&mut stream) {
            let reply = verifier.handle_frame(&frame);
            if write_framed(&mut stream, &reply).is_err() {
                break;
            }
        }
    }
}

/// Stops the background server when dropped.
pub struct ServerGuard {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<thread::JoinHandle<()>>,
}

impl ServerGuard {
    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }
}

impl Drop for ServerGuard {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}
