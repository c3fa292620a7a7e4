//! Click-fraud prevention: input events signed at the source, relayed by the
//! host app, and checked by the advertisement app before any click is billed.
//!
//! The ad app accepts a click only if the event's statement verifies against
//! the OS-input principal, the event was not obscured, and it is fresh, in
//! exactly that order. Accepted clicks go out as attested RPCs naming the
//! host and ad apps in the chain.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::authority::Verdict;
use crate::bus::{AppCtx, Bus, ChainMode};
use crate::codec::{Decode, DecodeError, Decoder, Encode, EncodeError, Encoder};
use crate::config::Config;
use crate::net::{
    provider_endpoint, DeviceCredential, InMemoryTransport, NetProvider, RemoteVerifier, RpcCall,
    ServerApp, ServerView, TrustStore,
};
use crate::types::{Message, PermissionToken, Principal, Statement};

use super::{Event, Recorder, RecordingTransport, Transcript};

pub const CLICK_URL: &str = "https://ads.example/click";
pub const OS_INPUT_APP: &str = "OsInput";

const DEVICE_ID: &str = "device-01";
const BASE_TS: u64 = 1_700_000_000_000;

/// One screen touch, signed by the OS-input principal at delivery time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputEvent {
    pub x: i32,
    pub y: i32,
    pub event_time: u64,
    pub obscured: bool,
    pub statement: Statement,
}

/// The bytes an event statement covers: (x, y, event_time, obscured).
pub fn event_fields_bytes(x: i32, y: i32, event_time: u64, obscured: bool) -> Vec<u8> {
    let mut enc = Encoder::with_capacity(17);
    enc.put_i32(x);
    enc.put_i32(y);
    enc.put_u64(event_time);
    enc.put_bool(obscured);
    enc.finish()
}

fn decode_event_fields(bytes: &[u8]) -> Result<(i32, i32, u64, bool), DecodeError> {
    let mut dec = Decoder::new(bytes);
    let out = (dec.get_i32()?, dec.get_i32()?, dec.get_u64()?, dec.get_bool()?);
    dec.finish()?;
    Ok(out)
}

impl Encode for InputEvent {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_i32(self.x);
        enc.put_i32(self.y);
        enc.put_u64(self.event_time);
        enc.put_bool(self.obscured);
        self.statement.encode_into(enc)
    }
}

impl Decode for InputEvent {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            x: dec.get_i32()?,
            y: dec.get_i32()?,
            event_time: dec.get_u64()?,
            obscured: dec.get_bool()?,
            statement: Statement::decode_from(dec)?,
        })
    }
}

/// Signs one touch as the OS-input principal. `os` must be that principal's
/// own context.
pub fn emit_event(
    os: &AppCtx,
    x: i32,
    y: i32,
    event_time: u64,
    obscured: bool,
) -> Result<InputEvent, crate::bus::BusError> {
    let msg = Message::new("input_event", event_fields_bytes(x, y, event_time, obscured), event_time);
    let statement = os.make_statement(&msg)?;
    Ok(InputEvent { x, y, event_time, obscured, statement })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClickVerdict {
    Accept,
    RejectForged,
    RejectObscured,
    RejectStale,
}

impl std::fmt::Display for ClickVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClickVerdict::Accept => "accept",
            ClickVerdict::RejectForged => "reject-forged",
            ClickVerdict::RejectObscured => "reject-obscured",
            ClickVerdict::RejectStale => "reject-stale",
        })
    }
}

/// The ad app's click gate: signature, then obscured flag, then freshness,
/// short-circuiting at the first failure. Events already accepted inside the
/// freshness window are treated as stale replays.
pub struct ClickValidator {
    os_input: Principal,
    freshness_ms: u64,
    seen: Mutex<HashSet<SeenKey>>,
}

/// (event_time, x, y, tag bytes) of an already-accepted click.
type SeenKey = (u64, i32, i32, Vec<u8>);

impl ClickValidator {
    pub fn new(os_input: Principal, freshness_ms: u64) -> Self {
        Self { os_input, freshness_ms, seen: Mutex::new(HashSet::new()) }
    }

    pub fn ad_validate(
        &self,
        ev: &InputEvent,
        now: u64,
        verify: impl FnOnce(&Statement) -> Verdict,
    ) -> ClickVerdict {
        // 1. The statement must be the OS-input principal speaking these
        //    exact event fields.
        if ev.statement.speaker != self.os_input {
            return ClickVerdict::RejectForged;
        }
        let covered = event_fields_bytes(ev.x, ev.y, ev.event_time, ev.obscured);
        if ev.statement.message.payload != covered {
            return ClickVerdict::RejectForged;
        }
        if !verify(&ev.statement).is_valid() {
            return ClickVerdict::RejectForged;
        }
        // 2. The ad must have been visible.
        if ev.obscured {
            return ClickVerdict::RejectObscured;
        }
        // 3. The click must be fresh and not yet spent.
        if now.saturating_sub(ev.event_time) > self.freshness_ms {
            return ClickVerdict::RejectStale;
        }
        let key = (ev.event_time, ev.x, ev.y, ev.statement.tag.as_bytes().to_vec());
        if !self.seen.lock().unwrap().insert(key) {
            return ClickVerdict::RejectStale;
        }
        ClickVerdict::Accept
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attack {
    None,
    /// The host forges its own touch event instead of relaying a real one.
    Synthesize,
    /// The host delivers the same genuine event twice.
    Replay,
    /// The click landed while the ad was covered.
    Obscure,
}

/// Ad network's server: records billed clicks.
struct AdServer {
    recorder: Recorder,
}

impl ServerApp for AdServer {
    fn handle(&self, view: &ServerView, payload: &[u8]) -> Result<Vec<u8>, String> {
        decode_event_fields(payload).map_err(|e| format!("undecodable click: {e}"))?;
        self.recorder.record_view(view.clone());
        Ok(b"click-billed".to_vec())
    }
}

/// Full flow: OS input -> host app -> ad app -> provider -> ad server.
pub fn run_clickfraud(config: &Config, attack: Attack, seed: u64) -> Transcript {
    let recorder = Recorder::new();
    let bus = Bus::start(config.clone());
    let clock = Arc::new(AtomicU64::new(BASE_TS));

    let trust_secret = crate::crypto::keygen(bus.config().algorithm).expect("rng");
    let mut trust = TrustStore::new();
    trust.insert(DEVICE_ID, trust_secret.clone());
    let verifier = Arc::new(RemoteVerifier::new(
        trust,
        Box::new(AdServer { recorder: recorder.clone() }),
    ));
    let transport = Arc::new(RecordingTransport::new(
        Arc::new(InMemoryTransport::new(verifier)),
        recorder.clone(),
    ));
    let provider = Arc::new(NetProvider::new(
        DeviceCredential::new(DEVICE_ID, trust_secret),
        Arc::clone(bus.authority()),
        transport,
    ));
    bus.spawn("NetProvider", 1001, [], provider_endpoint(provider)).expect("spawn provider");

    let os_input = bus
        .spawn(OS_INPUT_APP, 1002, [], |_: &AppCtx, msg: &Message| {
            Message::new("ok", Vec::new(), msg.timestamp)
        })
        .expect("spawn OS input");

    // Ad app: validates, then bills accepted clicks over the attested channel.
    let validator = ClickValidator::new(os_input.principal(), bus.config().freshness_ms);
    let ad_recorder = recorder.clone();
    let ad_clock = Arc::clone(&clock);
    bus.spawn(
        "AdApp",
        10004,
        [PermissionToken::new("INTERNET")],
        move |ctx: &AppCtx, msg: &Message| {
            if msg.method != "click" {
                return Message::new("error", b"unknown method".to_vec(), msg.timestamp);
            }
            let Ok((x, y, t, obscured)) = decode_event_fields(&msg.payload) else {
                return Message::new("error", b"bad event payload".to_vec(), msg.timestamp);
            };
            let Some(statement) = ctx.context().statements().first().cloned() else {
                return Message::new("error", b"no statement attached".to_vec(), msg.timestamp);
            };
            let ev = InputEvent { x, y, event_time: t, obscured, statement: statement.clone() };
            let now = ad_clock.load(Ordering::SeqCst);
            let verdict = validator.ad_validate(&ev, now, |s| {
                ctx.verify_statement(s).unwrap_or(Verdict::UnknownSpeaker)
            });
            ad_recorder.push(Event::ClickChecked { verdict: verdict.to_string() });
            if verdict != ClickVerdict::Accept {
                return Message::new("click_rejected", verdict.to_string().into_bytes(), msg.timestamp);
            }
            let rpc = RpcCall { url: CLICK_URL.to_string(), payload: msg.payload.clone() };
            ad_recorder.push(Event::Hop {
                from: "AdApp".into(),
                to: "NetProvider".into(),
                method: "rpc".into(),
            });
            match ctx.call(
                "NetProvider",
                Message::new("rpc", rpc.encode().expect("rpc call fits"), msg.timestamp),
                ChainMode::Propagate,
                vec![statement],
            ) {
                Ok(reply) => reply,
                Err(e) => Message::new("rpc_error", e.to_string().into_bytes(), msg.timestamp),
            }
        },
    )
    .expect("spawn AdApp");

    // Host app: relays events landing on the ad frame, or attacks.
    let host_recorder = recorder.clone();
    bus.spawn("HostApp", 10003, [], move |ctx: &AppCtx, msg: &Message| {
            if msg.method != "touch" {
                return Message::new("error", b"unknown method".to_vec(), msg.timestamp);
            }
            let forward = |payload: Vec<u8>, stmt: Statement, note: Option<String>| {
                if let Some(n) = note {
                    host_recorder.push(Event::Note(n));
                }
                host_recorder.push(Event::Hop {
                    from: "HostApp".into(),
                    to: "AdApp".into(),
                    method: "click".into(),
                });
                ctx.call(
                    "AdApp",
                    Message::new("click", payload, msg.timestamp),
                    ChainMode::Propagate,
                    vec![stmt],
                )
                .unwrap_or_else(|e| Message::new("error", e.to_string().into_bytes(), msg.timestamp))
            };
            let genuine_stmt = ctx.context().statements().first().cloned();
            match attack {
                Attack::Synthesize => {
                    // Fake a click with the host's own key; coordinates of its choosing.
                    let t = msg.timestamp;
                    let fields = event_fields_bytes(160, 240, t, false);
                    let fake_msg = Message::new("input_event", fields.clone(), t);
                    match ctx.make_statement(&fake_msg) {
                        Ok(stmt) => forward(
                            fields,
                            stmt,
                            Some("HostApp synthesizes a click under its own key".into()),
                        ),
                        Err(e) => Message::new("error", e.to_string().into_bytes(), t),
                    }
                }
                Attack::Replay => match genuine_stmt {
                    Some(stmt) => {
                        let first = forward(msg.payload.clone(), stmt.clone(), None);
                        let second = forward(
                            msg.payload.clone(),
                            stmt,
                            Some("HostApp delivers the same event again".into()),
                        );
                        Message::new(
                            "replay_outcomes",
                            format!(
                                "{}/{}",
                                String::from_utf8_lossy(&first.payload),
                                String::from_utf8_lossy(&second.payload)
                            )
                            .into_bytes(),
                            first.timestamp,
                        )
                    }
                    None => Message::new("error", b"no statement".to_vec(), msg.timestamp),
                },
                _ => match genuine_stmt {
                    Some(stmt) => forward(msg.payload.clone(), stmt, None),
                    None => Message::new("error", b"no statement".to_vec(), msg.timestamp),
                },
            }
        })
        .expect("spawn HostApp");

    // One touch lands on the ad frame.
    let obscured = attack == Attack::Obscure;
    let event_time = BASE_TS + (seed % 1000);
    clock.store(event_time, Ordering::SeqCst);
    let os_ctx = bus.app_ctx(&os_input);
    let x = 120 + (seed % 64) as i32;
    let y = 300;
    let outcome = match emit_event(&os_ctx, x, y, event_time, obscured) {
        Ok(ev) => {
            recorder.push(Event::StatementMade {
                speaker: OS_INPUT_APP.into(),
                about: format!("input event at ({x},{y})"),
            });
            recorder.push(Event::Hop {
                from: OS_INPUT_APP.into(),
                to: "HostApp".into(),
                method: "touch".into(),
            });
            os_ctx
                .call(
                    "HostApp",
                    Message::new("touch", event_fields_bytes(ev.x, ev.y, ev.event_time, ev.obscured), event_time),
                    ChainMode::Propagate,
                    vec![ev.statement],
                )
                .map_err(|e| e.to_string())
        }
        Err(e) => Err(e.to_string()),
    };

    let (expected, summary) = judge(attack, &outcome, &recorder);
    bus.shutdown();
    recorder.finish(expected, summary)
}

fn judge(
    attack: Attack,
    outcome: &Result<Message, String>,
    recorder: &Recorder,
) -> (bool, String) {
    let verdicts: Vec<String> = recorder
        .snapshot()
        .iter()
        .filter_map(|e| match e {
            Event::ClickChecked { verdict } => Some(verdict.clone()),
            _ => None,
        })
        .collect();
    let frames = recorder
        .snapshot()
        .iter()
        .filter(|e| matches!(e, Event::TransportFrame { .. }))
        .count();
    let accepted_views = recorder.views_snapshot();

    match attack {
        Attack::None => {
            let billed = outcome
                .as_ref()
                .is_ok_and(|m| m.method == "rpc_ok" && m.payload == b"click-billed");
            let view_ok = accepted_views
                .first()
                .is_some_and(|v| v.chain == [OS_INPUT_APP, "HostApp", "AdApp"]);
            (
                billed && verdicts == ["accept"] && view_ok,
                "genuine click accepted and billed with full chain".to_string(),
            )
        }
        Attack::Synthesize => (
            verdicts == ["reject-forged"] && frames == 0,
            "synthesized click rejected as forged; no RPC".to_string(),
        ),
        Attack::Replay => (
            verdicts == ["accept", "reject-stale"] && accepted_views.len() == 1,
            "first delivery accepted, replayed delivery rejected as stale".to_string(),
        ),
        Attack::Obscure => (
            verdicts == ["reject-obscured"] && frames == 0,
            "click on an obscured ad rejected; no RPC".to_string(),
        ),
    }
}
