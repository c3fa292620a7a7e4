//! End-to-end behavior of the network provider and remote verifier:
//! provenance headers, channel authentication, impersonation, truncation,
//! and the loopback TCP transport.

use std::sync::{Arc, Mutex};

use chainbus_core::bus::{AppCtx, Bus, CallContext, ChainMode};
use chainbus_core::codec::{Decode, Encode};
use chainbus_core::config::Config;
use chainbus_core::crypto::{self, MacAlgorithm};
use chainbus_core::net::{
    plain_round_trip, provider_endpoint, server_verify, AttestedRequest, DeviceCredential, EchoApp,
    InMemoryTransport, NetProvider, Rejection, RemoteVerifier, RpcCall, RpcError, RpcResponse,
    ServerApp, ServerView, SignedRequest, TcpTransport, Transport, TrustStore, VerifierServer,
    CHAIN_HEADER, STATEMENTS_HEADER,
};
use chainbus_core::types::{CallChain, Message, Principal, ResolvedChain};
use chainbus_core::Verdict;

const DEVICE: &str = "device-01";

/// Server app that records every accepted view.
struct Inspect {
    views: Arc<Mutex<Vec<ServerView>>>,
}

impl ServerApp for Inspect {
    fn handle(&self, view: &ServerView, payload: &[u8]) -> Result<Vec<u8>, String> {
        self.views.lock().unwrap().push(view.clone());
        Ok(payload.to_vec())
    }
}

struct Rig {
    bus: Bus,
    views: Arc<Mutex<Vec<ServerView>>>,
    verifier: Arc<RemoteVerifier>,
    provider: Arc<NetProvider>,
}

fn rig() -> Rig {
    let bus = Bus::start(Config::default());
    let secret = crypto::keygen(MacAlgorithm::HmacSha1).unwrap();
    let mut trust = TrustStore::new();
    trust.insert(DEVICE, secret.clone());
    let views = Arc::new(Mutex::new(Vec::new()));
    let verifier = Arc::new(RemoteVerifier::new(
        trust,
        Box::new(Inspect { views: Arc::clone(&views) }),
    ));
    let transport: Arc<dyn Transport> = Arc::new(InMemoryTransport::new(Arc::clone(&verifier)));
    let provider = Arc::new(NetProvider::new(
        DeviceCredential::new(DEVICE, secret),
        Arc::clone(bus.authority()),
        transport,
    ));
    bus.spawn("NetProvider", 1001, [], provider_endpoint(Arc::clone(&provider))).unwrap();
    Rig { bus, views, verifier, provider }
}

fn echo() -> impl FnMut(&AppCtx, &Message) -> Message + Send {
    |_: &AppCtx, m: &Message| Message::new("ok", m.payload.clone(), m.timestamp)
}

#[test]
fn chain_travels_origin_first_and_round_trips() {
    let rig = rig();
    let a = rig.bus.spawn("ExampleApp", 10001, [], echo()).unwrap();
    rig.bus
        .spawn("PayBuddy", 10002, [], |ctx: &AppCtx, msg: &Message| {
            let rpc = RpcCall { url: "https://pay.example/pay".into(), payload: msg.payload.clone() };
            ctx.call(
                "NetProvider",
                Message::new("rpc", rpc.encode().unwrap(), msg.timestamp),
                ChainMode::Propagate,
                ctx.context().statements().to_vec(),
            )
            .unwrap_or_else(|e| Message::new("rpc_error", e.to_string().into_bytes(), 0))
        })
        .unwrap();

    let ctx = rig.bus.app_ctx(&a);
    let stmt = ctx.make_statement(&Message::new("purchase_order", b"order".to_vec(), 9)).unwrap();
    let reply = ctx
        .call("PayBuddy", Message::new("pay", b"order".to_vec(), 9), ChainMode::Propagate, vec![stmt])
        .unwrap();
    assert_eq!(reply.method, "rpc_ok");

    let views = rig.views.lock().unwrap();
    let view = views.first().expect("server saw the request");
    assert_eq!(view.device_id, DEVICE);
    assert_eq!(view.chain, ["ExampleApp", "PayBuddy"]);
    assert_eq!(view.statements.len(), 1);
    assert_eq!(view.statements[0].0, "ExampleApp");
    assert_eq!(view.statements[0].1.payload, b"order");
    rig.bus.shutdown();
}

#[test]
fn minimal_rpc_carries_just_the_chain() {
    let rig = rig();
    let a = rig.bus.spawn("Solo", 10001, [], echo()).unwrap();
    let ctx = rig.bus.app_ctx(&a);
    let rpc = RpcCall { url: "https://x.example/".into(), payload: b"hi".to_vec() };
    let reply = ctx
        .call("NetProvider", Message::new("rpc", rpc.encode().unwrap(), 0), ChainMode::Propagate, vec![])
        .unwrap();
    assert_eq!(reply.method, "rpc_ok");
    assert_eq!(reply.payload, b"hi");

    let views = rig.views.lock().unwrap();
    assert_eq!(views[0].chain, ["Solo"]);
    assert!(views[0].statements.is_empty());
    rig.bus.shutdown();
}

#[test]
fn tampered_statement_aborts_before_any_transmission() {
    let rig = rig();
    let a = rig.bus.spawn("App", 10001, [], echo()).unwrap();
    let ctx = rig.bus.app_ctx(&a);
    let mut stmt = ctx.make_statement(&Message::new("claim", b"xyz".to_vec(), 1)).unwrap();
    stmt.message.payload[0] ^= 1;

    let err = rig
        .provider
        .rpc(
            &CallContext::assemble(a.principal(), CallChain::empty(), vec![]),
            "https://x.example/",
            b"p",
            &[stmt],
        )
        .unwrap_err();
    assert_eq!(
        err,
        RpcError::StatementVerificationFailed { index: 0, verdict: Verdict::InvalidTag }
    );
    assert!(rig.views.lock().unwrap().is_empty(), "nothing reached the server");
    rig.bus.shutdown();
}

#[test]
fn unresolvable_chain_link_is_reported() {
    let rig = rig();
    let a = rig.bus.spawn("App", 10001, [], echo()).unwrap();
    let ghost = Principal::new(5555, 9);
    let ctx = CallContext::assemble(a.principal(), CallChain::from_links(vec![ghost]), vec![]);
    let err = rig.provider.rpc(&ctx, "https://x.example/", b"", &[]).unwrap_err();
    // Origin-first wire order puts the unresolvable ghost at index 0.
    assert_eq!(err, RpcError::UnresolvablePrincipal { index: 0 });
    rig.bus.shutdown();
}

#[test]
fn impersonation_with_an_app_key_is_rejected() {
    let rig = rig();
    let evil = rig.bus.spawn("Evil", 10001, [], echo()).unwrap();
    // The app can sign with its own authority-issued key, but it cannot read
    // the channel secret; its best move is MACing the request itself.
    let app_key = rig.bus.authority().register(evil.principal()).unwrap();
    let request = AttestedRequest {
        device_id: DEVICE.into(),
        url: "https://pay.example/pay".into(),
        payload: b"claim anything".to_vec(),
        header_chain: ResolvedChain::from_names(vec!["TrustedApp".into()]),
        header_statements: vec![],
    };
    let request_bytes = request.encode().unwrap();
    let forged = SignedRequest {
        channel_mac: crypto::mac_create(&app_key, &request_bytes),
        request_bytes,
    };
    let trust = {
        // Rebuild the server-side trust relation with the *right* device key,
        // which the app never had.
        let mut t = TrustStore::new();
        t.insert(DEVICE, crypto::keygen(MacAlgorithm::HmacSha1).unwrap());
        t
    };
    assert_eq!(server_verify(&forged, &trust), Err(Rejection::BadChannelAuth));
    rig.bus.shutdown();
}

#[test]
fn unknown_device_is_rejected() {
    let secret = crypto::keygen(MacAlgorithm::HmacSha1).unwrap();
    let request = AttestedRequest {
        device_id: "device-99".into(),
        url: "u".into(),
        payload: vec![],
        header_chain: ResolvedChain::from_names(vec![]),
        header_statements: vec![],
    };
    let request_bytes = request.encode().unwrap();
    let signed = SignedRequest { channel_mac: crypto::mac_create(&secret, &request_bytes), request_bytes };
    let mut trust = TrustStore::new();
    trust.insert(DEVICE, secret);
    assert_eq!(server_verify(&signed, &trust), Err(Rejection::BadChannelAuth));
}

#[test]
fn every_truncation_is_malformed_never_accepted() {
    let rig = rig();
    let a = rig.bus.spawn("App", 10001, [], echo()).unwrap();
    let ctx = rig.bus.app_ctx(&a);
    let stmt = ctx.make_statement(&Message::new("claim", b"payload".to_vec(), 3)).unwrap();

    // Assemble the exact frame the provider would send.
    let request = AttestedRequest {
        device_id: DEVICE.into(),
        url: "https://x.example/".into(),
        payload: b"body".to_vec(),
        header_chain: ResolvedChain::from_names(vec!["App".into()]),
        header_statements: vec![chainbus_core::net::RestatedStatement {
            app_name: "App".into(),
            message: stmt.message.clone(),
            tag: stmt.tag.clone(),
        }],
    };
    let request_bytes = request.encode().unwrap();
    let secret = crypto::keygen(MacAlgorithm::HmacSha1).unwrap();
    let signed = SignedRequest {
        channel_mac: crypto::mac_create(&secret, &request_bytes),
        request_bytes,
    };
    let mut trust = TrustStore::new();
    trust.insert(DEVICE, secret);
    let verifier = RemoteVerifier::new(trust, Box::new(EchoApp));

    let frame = {
        use chainbus_core::codec::Encoder;
        let mut enc = Encoder::new();
        enc.put_u8(1);
        enc.put_bytes(&signed.encode().unwrap()).unwrap();
        enc.finish()
    };
    // The untruncated frame goes through.
    assert!(verifier.verify_frame(&frame).is_ok());
    // Every proper prefix is structurally broken.
    for cut in 0..frame.len() {
        let result = verifier.verify_frame(&frame[..cut]);
        assert_eq!(result.unwrap_err(), Rejection::MalformedHeader, "cut at {cut}");
    }
    rig.bus.shutdown();
}

#[test]
fn payload_bytes_cannot_become_headers() {
    let rig = rig();
    let a = rig.bus.spawn("Sneaky", 10001, [], echo()).unwrap();
    let ctx = rig.bus.app_ctx(&a);
    // Payload crafted to look like a header line plus a bogus chain.
    let evil_payload =
        format!("\r\n{CHAIN_HEADER}: Root,System\r\n{STATEMENTS_HEADER}: 00\r\n").into_bytes();
    let rpc = RpcCall { url: "https://x.example/".into(), payload: evil_payload.clone() };
    let reply = ctx
        .call("NetProvider", Message::new("rpc", rpc.encode().unwrap(), 0), ChainMode::Propagate, vec![])
        .unwrap();
    assert_eq!(reply.method, "rpc_ok");
    let views = rig.views.lock().unwrap();
    assert_eq!(views[0].chain, ["Sneaky"], "headers reflect only the bus-observed chain");
    assert_eq!(views[0].statements.len(), 0);
    // The hostile bytes stayed where they belong: in the opaque payload.
    assert_eq!(reply.payload, evil_payload);
    rig.bus.shutdown();
}

#[test]
fn restated_statements_match_authority_verdicts_one_to_one() {
    let rig = rig();
    let a = rig.bus.spawn("Alice", 10001, [], echo()).unwrap();
    let b = rig.bus.spawn("Bob", 10002, [], echo()).unwrap();
    let ctx_a = rig.bus.app_ctx(&a);
    let ctx_b = rig.bus.app_ctx(&b);
    let stmts = vec![
        ctx_a.make_statement(&Message::new("m1", b"1".to_vec(), 1)).unwrap(),
        ctx_b.make_statement(&Message::new("m2", b"2".to_vec(), 2)).unwrap(),
    ];
    for s in &stmts {
        assert!(rig.bus.authority().verify_statement(s).is_valid());
    }
    let ctx = CallContext::assemble(a.principal(), CallChain::empty(), vec![]);
    let resp = rig.provider.rpc(&ctx, "https://x.example/", b"", &stmts).unwrap();
    assert!(resp.is_accepted());
    let views = rig.views.lock().unwrap();
    let speakers: Vec<&str> = views[0].statements.iter().map(|(s, _)| s.as_str()).collect();
    assert_eq!(speakers, ["Alice", "Bob"]);
    rig.bus.shutdown();
}

#[test]
fn header_rendering_is_documented_shape() {
    let request = AttestedRequest {
        device_id: DEVICE.into(),
        url: "u".into(),
        payload: vec![],
        header_chain: ResolvedChain::from_names(vec!["ExampleApp".into(), "PayBuddy".into()]),
        header_statements: vec![],
    };
    assert_eq!(request.chain_header(), "ExampleApp,PayBuddy");
    // base16 of the canonical empty statement list: just the zero count.
    assert_eq!(request.statements_header(), "00000000");
}

#[test]
fn plain_round_trip_echoes() {
    let rig = rig();
    let transport = InMemoryTransport::new(Arc::clone(&rig.verifier));
    let out = plain_round_trip(&transport, b"ping-pong").unwrap();
    assert_eq!(out, b"ping-pong");
    rig.bus.shutdown();
}

#[test]
fn tcp_transport_and_server_round_trip() {
    let bus = Bus::start(Config::default());
    let secret = crypto::keygen(MacAlgorithm::HmacSha1).unwrap();
    let mut trust = TrustStore::new();
    trust.insert(DEVICE, secret.clone());
    let verifier = Arc::new(RemoteVerifier::new(trust, Box::new(EchoApp)));
    let server = VerifierServer::bind("127.0.0.1:0", Arc::clone(&verifier)).unwrap();
    let guard = server.start().unwrap();

    let transport: Arc<dyn Transport> = Arc::new(TcpTransport::new(guard.addr().to_string()));
    let provider = Arc::new(NetProvider::new(
        DeviceCredential::new(DEVICE, secret),
        Arc::clone(bus.authority()),
        Arc::clone(&transport),
    ));
    let a = bus.spawn("App", 10001, [], echo()).unwrap();
    let ctx = CallContext::assemble(a.principal(), CallChain::empty(), vec![]);
    let resp = provider.rpc(&ctx, "https://x.example/", b"over tcp", &[]).unwrap();
    assert_eq!(resp, RpcResponse::Accepted { body: b"over tcp".to_vec() });

    // Impersonation over the wire: garbage signing key, rejected at the channel.
    let request = AttestedRequest {
        device_id: DEVICE.into(),
        url: "u".into(),
        payload: vec![],
        header_chain: ResolvedChain::from_names(vec![]),
        header_statements: vec![],
    };
    let request_bytes = request.encode().unwrap();
    let wrong = crypto::keygen(MacAlgorithm::HmacSha1).unwrap();
    let forged = SignedRequest { channel_mac: crypto::mac_create(&wrong, &request_bytes), request_bytes };
    let mut frame = chainbus_core::codec::Encoder::new();
    frame.put_u8(1);
    frame.put_bytes(&forged.encode().unwrap()).unwrap();
    let reply = transport.round_trip(&frame.finish()).unwrap();
    // Status byte 1: channel authentication failed.
    assert_eq!(reply[0], 1);

    let log = verifier.drain_log();
    assert!(log.iter().any(|l| l.starts_with("accepted device=device-01")));
    assert!(log.iter().any(|l| l.contains("bad channel authentication")));
    bus.shutdown();
}

#[test]
fn decoded_signed_request_round_trips() {
    let secret = crypto::keygen(MacAlgorithm::HmacSha256).unwrap();
    let request = AttestedRequest {
        device_id: DEVICE.into(),
        url: "https://x/".into(),
        payload: vec![7; 9],
        header_chain: ResolvedChain::from_names(vec!["A".into()]),
        header_statements: vec![],
    };
    let request_bytes = request.encode().unwrap();
    let signed = SignedRequest {
        channel_mac: crypto::mac_create(&secret, &request_bytes),
        request_bytes,
    };
    let bytes = signed.encode().unwrap();
    assert_eq!(SignedRequest::decode(&bytes).unwrap(), signed);
}
