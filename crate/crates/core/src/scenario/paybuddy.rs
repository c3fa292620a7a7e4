//! Micropayment flow between two mutually distrusting apps.
//!
//! ExampleApp signs a purchase order and hands it to PayBuddy, which asks the
//! user and, on approval, forwards the order through the network provider to
//! the PayBuddy.com test server. The server ends up knowing three things: the
//! request came from this device, the order came from ExampleApp untampered,
//! and the PayBuddy app approved it.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use crate::bus::{AppCtx, Bus, ChainMode};
use crate::codec::{Decode, DecodeError, Decoder, Encode, EncodeError, Encoder};
use crate::config::Config;
use crate::net::{
    provider_endpoint, DeviceCredential, InMemoryTransport, NetProvider, RemoteVerifier, RpcCall,
    ServerApp, ServerView, TrustStore,
};
use crate::types::{Message, PermissionToken, Principal, Statement};

use super::{Event, Recorder, RecordingTransport, Transcript};

pub const PAY_URL: &str = "https://paybuddy.example/pay";

const DEVICE_ID: &str = "device-01";
const BASE_TS: u64 = 1_700_000_000_000;

/// What ExampleApp wants to sell, signed before it ever leaves the app.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PurchaseOrder {
    pub order_id: String,
    pub amount_cents: u64,
    pub merchant: String,
    pub description: String,
}

impl Encode for PurchaseOrder {
    fn encode_into(&self, enc: &mut Encoder) -> Result<(), EncodeError> {
        enc.put_str(&self.order_id)?;
        enc.put_u64(self.amount_cents);
        enc.put_str(&self.merchant)?;
        enc.put_str(&self.description)
    }
}

impl Decode for PurchaseOrder {
    fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            order_id: dec.get_str()?,
            amount_cents: dec.get_u64()?,
            merchant: dec.get_str()?,
            description: dec.get_str()?,
        })
    }
}

/// The simulated okay/cancel dialog outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaymentDecision {
    pub approved: bool,
    pub decided_by: Principal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tamper {
    None,
    /// PayBuddy alters the order amount before forwarding.
    PayBuddyMutatesOrder,
    /// The same signed order is submitted twice.
    ReplayOrder,
}

/// PayBuddy.com: accepts orders whose speaker is the chain's origin and whose
/// order id has not been seen before.
struct PayBuddyServer {
    ledger: Mutex<HashSet<String>>,
    recorder: Recorder,
}

impl ServerApp for PayBuddyServer {
    fn handle(&self, view: &ServerView, payload: &[u8]) -> Result<Vec<u8>, String> {
        let (speaker, signed_msg) = view
            .statements
            .first()
            .ok_or_else(|| "missing signed purchase order".to_string())?;
        if signed_msg.payload != payload {
            return Err("request payload does not match the signed order".to_string());
        }
        let order = PurchaseOrder::decode(&signed_msg.payload)
            .map_err(|e| format!("undecodable purchase order: {e}"))?;
        if view.chain.first() != Some(speaker) {
            return Err(format!("order signed by {speaker}, but the chain does not start there"));
        }
        if view.chain.last().map(String::as_str) != Some("PayBuddy") {
            return Err("request was not submitted through the PayBuddy app".to_string());
        }
        let mut ledger = self.ledger.lock().unwrap();
        if !ledger.insert(order.order_id.clone()) {
            return Err(format!("duplicate order id {}", order.order_id));
        }
        self.recorder.record_view(view.clone());
        Ok(format!("txn-{}", order.order_id).into_bytes())
    }
}

struct Fixture {
    bus: Bus,
    example: crate::bus::ProcessHandle,
    recorder: Recorder,
}

fn set_up(config: &Config, recorder: &Recorder, approve: bool, tamper: Tamper) -> Fixture {
    let bus = Bus::start(config.clone());

    let trust_secret = crate::crypto::keygen(bus.config().algorithm).expect("rng");
    let mut trust = TrustStore::new();
    trust.insert(DEVICE_ID, trust_secret.clone());
    let verifier = Arc::new(RemoteVerifier::new(
        trust,
        Box::new(PayBuddyServer { ledger: Mutex::new(HashSet::new()), recorder: recorder.clone() }),
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

    let example = bus
        .spawn("ExampleApp", 10001, [], |_: &AppCtx, msg: &Message| {
            Message::new("ok", Vec::new(), msg.timestamp)
        })
        .expect("spawn ExampleApp");

    let rec = recorder.clone();
    bus.spawn(
        "PayBuddy",
        10002,
        [PermissionToken::new("INTERNET")],
        move |ctx: &AppCtx, msg: &Message| pay_handler(ctx, msg, &rec, approve, tamper),
        )
        .expect("spawn PayBuddy");

    Fixture { bus, example, recorder: recorder.clone() }
}

fn pay_handler(ctx: &AppCtx, msg: &Message, recorder: &Recorder, approve: bool, tamper: Tamper) -> Message {
    if msg.method != "pay" {
        return Message::new("error", b"unknown method".to_vec(), msg.timestamp);
    }
    let Some(order_stmt) = ctx.context().statements().first().cloned() else {
        return Message::new("payment_refused", b"no signed order attached".to_vec(), msg.timestamp);
    };

    // The dialog names the requesting app, learned from the chain.
    let caller_names = match ctx.resolve_chain(&ctx.current_chain()) {
        Ok(Ok(resolved)) => resolved.names().join(","),
        _ => "<unresolvable>".to_string(),
    };
    let decision = PaymentDecision { approved: approve, decided_by: ctx.me().principal() };
    recorder.push(Event::UserDecision {
        actor: format!("PayBuddy (request from {caller_names})"),
        approved: decision.approved,
    });
    if !decision.approved {
        return Message::new("payment_declined", b"user cancelled".to_vec(), msg.timestamp);
    }

    let forwarded_stmt = match tamper {
        Tamper::PayBuddyMutatesOrder => {
            let mut order = PurchaseOrder::decode(&order_stmt.message.payload)
                .expect("scenario orders decode");
            order.amount_cents = order.amount_cents.saturating_mul(100);
            let mutated = order.encode().expect("order fits");
            recorder.push(Event::Note(format!(
                "PayBuddy silently rewrites the order amount to {} cents",
                order.amount_cents
            )));
            Statement {
                speaker: order_stmt.speaker,
                message: Message::new(
                    order_stmt.message.method.clone(),
                    mutated,
                    order_stmt.message.timestamp,
                ),
                tag: order_stmt.tag.clone(),
            }
        }
        _ => order_stmt.clone(),
    };

    let rpc = RpcCall { url: PAY_URL.to_string(), payload: forwarded_stmt.message.payload.clone() };
    recorder.push(Event::Hop {
        from: "PayBuddy".into(),
        to: "NetProvider".into(),
        method: "rpc".into(),
    });
    let reply = ctx.call(
        "NetProvider",
        Message::new("rpc", rpc.encode().expect("rpc call fits"), msg.timestamp),
        ChainMode::Propagate,
        vec![forwarded_stmt],
    );
    match reply {
        Ok(r) => r,
        Err(e) => Message::new("rpc_error", e.to_string().into_bytes(), msg.timestamp),
    }
}

/// Runs one purchase attempt as ExampleApp and returns what came back.
fn attempt_purchase(fx: &Fixture, order: &PurchaseOrder, ts: u64) -> Result<Message, String> {
    let ex = fx.bus.app_ctx(&fx.example);
    let order_bytes = order.encode().expect("order fits");
    let order_msg = Message::new("purchase_order", order_bytes.clone(), ts);
    let stmt = ex.make_statement(&order_msg).map_err(|e| e.to_string())?;
    fx.recorder.push(Event::StatementMade {
        speaker: "ExampleApp".into(),
        about: format!("purchase order {}", order.order_id),
    });
    fx.recorder.push(Event::Hop { from: "ExampleApp".into(), to: "PayBuddy".into(), method: "pay".into() });
    ex.call("PayBuddy", Message::new("pay", order_bytes, ts), ChainMode::Propagate, vec![stmt])
        .map_err(|e| e.to_string())
}

/// Full PayBuddy flow. `approve` stands in for the user's okay/cancel tap.
pub fn run_paybuddy(config: &Config, approve: bool, tamper: Tamper, seed: u64) -> Transcript {
    let recorder = Recorder::new();
    let fx = set_up(config, &recorder, approve, tamper);

    let order = PurchaseOrder {
        order_id: format!("ord-{seed:08x}"),
        amount_cents: 499,
        merchant: "ExampleApp".to_string(),
        description: "one game level".to_string(),
    };

    let submissions = if tamper == Tamper::ReplayOrder { 2 } else { 1 };
    let mut replies = Vec::new();
    for i in 0..submissions {
        match attempt_purchase(&fx, &order, BASE_TS + i) {
            Ok(reply) => {
                let body = String::from_utf8_lossy(&reply.payload).into_owned();
                match reply.method.as_str() {
                    "rpc_ok" => recorder.push(Event::ServerAccepted {
                        device_id: DEVICE_ID.into(),
                        chain: vec!["ExampleApp".into(), "PayBuddy".into()],
                        reply: body.clone(),
                    }),
                    "rpc_refused" => recorder.push(Event::ServerRefused { reason: body.clone() }),
                    "payment_declined" => recorder.push(Event::Note("PayBuddy declined; nothing sent".into())),
                    _ => recorder.push(Event::Failure { stage: reply.method.clone(), error: body.clone() }),
                }
                replies.push((reply.method, body));
            }
            Err(e) => {
                recorder.push(Event::Failure { stage: "purchase".into(), error: e.clone() });
                replies.push(("error".into(), e));
            }
        }
    }

    let (expected, summary) = judge(approve, tamper, &replies, &recorder);
    fx.bus.shutdown();
    recorder.finish(expected, summary)
}

fn judge(
    approve: bool,
    tamper: Tamper,
    replies: &[(String, String)],
    recorder: &Recorder,
) -> (bool, String) {
    let frames = recorder
        .snapshot()
        .iter()
        .filter(|e| matches!(e, Event::TransportFrame { .. }))
        .count();
    let views = recorder.views_snapshot();

    if !approve {
        let declined = replies.first().is_some_and(|(m, _)| m == "payment_declined");
        let ok = declined && frames == 0;
        return (ok, "user cancelled; nothing was transmitted".to_string());
    }
    match tamper {
        Tamper::None => {
            let accepted = replies.first().is_some_and(|(m, _)| m == "rpc_ok");
            let view_ok = views.first().is_some_and(|v| {
                v.device_id == DEVICE_ID
                    && v.chain == ["ExampleApp", "PayBuddy"]
                    && v.statements.iter().any(|(s, _)| s == "ExampleApp")
            });
            (
                accepted && view_ok,
                "server accepted: device attested, order intact from ExampleApp, approved via PayBuddy"
                    .to_string(),
            )
        }
        Tamper::PayBuddyMutatesOrder => {
            let blocked = replies
                .first()
                .is_some_and(|(m, b)| m == "rpc_error" && b.contains("failed verification"));
            (
                blocked && frames == 0,
                "provider caught the mutated order; nothing reached the server".to_string(),
            )
        }
        Tamper::ReplayOrder => {
            let first_ok = replies.first().is_some_and(|(m, _)| m == "rpc_ok");
            let second_refused = replies
                .get(1)
                .is_some_and(|(m, b)| m == "rpc_refused" && b.contains("duplicate order"));
            (
                first_ok && second_refused,
                "server ledger rejected the replayed order id".to_string(),
            )
        }
    }
}
