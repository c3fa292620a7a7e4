//! Microbenchmarks for the provenance machinery: statement create/verify
//! against payload size, IPC round trips with and without chain tracking,
//! chain resolution against depth, and attested vs plain RPC latency.
//!
//! Measurement protocol for every point: one discarded priming run, then
//! `runs` runs of `trials_per_run` timed trials; the highest and lowest run
//! (by mean) are dropped and the remaining samples pooled for the mean and
//! percentiles. Payload bytes come from a seeded generator, so re-running
//! with the same seed feeds identical inputs.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chainbus_core::bus::{AppCtx, Bus, CallContext, ChainMode};
use chainbus_core::config::Config;
use chainbus_core::crypto;
use chainbus_core::net::{
    plain_round_trip, DeviceCredential, EchoApp, InMemoryTransport, NetProvider, RemoteVerifier,
    Transport, TrustStore,
};
use chainbus_core::types::{CallChain, Message, Statement};

/// One measured point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchResult {
    pub name: String,
    /// Payload size in bytes, or chain depth, depending on the benchmark.
    pub param: u64,
    /// Pooled sample count behind the stats.
    pub trials: u32,
    pub mean_ns: u64,
    pub p50_ns: u64,
    pub p95_ns: u64,
}

/// Runs-and-trials schedule.
#[derive(Debug, Clone, Copy)]
pub struct Protocol {
    pub runs: usize,
    pub trials_per_run: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Self { runs: 10, trials_per_run: 100 }
    }
}

impl Protocol {
    /// Reduced schedule that still pools at least 100 trials per point.
    pub fn quick() -> Self {
        Self { runs: 4, trials_per_run: 50 }
    }
}

fn measure(name: &str, param: u64, protocol: &Protocol, mut op: impl FnMut()) -> BenchResult {
    // Priming run, discarded.
    for _ in 0..protocol.trials_per_run {
        op();
    }
    let mut runs: Vec<Vec<u64>> = Vec::with_capacity(protocol.runs);
    for _ in 0..protocol.runs {
        let mut samples = Vec::with_capacity(protocol.trials_per_run);
        for _ in 0..protocol.trials_per_run {
            let start = Instant::now();
            op();
            samples.push(start.elapsed().as_nanos() as u64);
        }
        runs.push(samples);
    }
    // Drop the fastest and slowest run, keep the middle.
    if runs.len() > 2 {
        runs.sort_by_key(|samples| samples.iter().sum::<u64>() / samples.len() as u64);
        runs.remove(runs.len() - 1);
        runs.remove(0);
    }
    let mut pooled: Vec<u64> = runs.into_iter().flatten().collect();
    pooled.sort_unstable();
    let n = pooled.len();
    BenchResult {
        name: name.to_string(),
        param,
        trials: n as u32,
        mean_ns: pooled.iter().sum::<u64>() / n as u64,
        p50_ns: pooled[n / 2],
        p95_ns: pooled[(n * 95 / 100).min(n - 1)],
    }
}

/// Deterministic per-size payloads.
pub fn payload_for(size: u64, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ size.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..size).map(|_| rng.gen()).collect()
}

/// Statement creation and verification timings per payload size.
///
/// Creation is one local MAC; verification rides the bus to the authority
/// service, which is why it costs strictly more.
pub fn bench_statements(sizes: &[u64], protocol: &Protocol, seed: u64) -> Vec<BenchResult> {
    let bus = Bus::start(Config::default());
    let app = bus
        .spawn("Bench", 10001, [], |_: &AppCtx, m: &Message| Message::new("ok", vec![], m.timestamp))
        .expect("spawn");
    let ctx = bus.app_ctx(&app);

    let mut out = Vec::new();
    for &size in sizes {
        let payload = payload_for(size, seed);
        let msg = Message::new("bench", payload, 1);
        out.push(measure("statement_create", size, protocol, || {
            let stmt = ctx.make_statement(&msg).expect("sign");
            std::hint::black_box(&stmt);
        }));
        let stmt = ctx.make_statement(&msg).expect("sign");
        out.push(measure("statement_verify", size, protocol, || {
            let verdict = ctx.verify_statement(&stmt).expect("service");
            std::hint::black_box(&verdict);
        }));
    }
    bus.shutdown();
    out
}

/// No-op echo round trips, one or two hops, with chain tracking
/// (per-hop statement plus propagated chain) or without.
pub fn bench_ipc(
    sizes: &[u64],
    hops: u8,
    provenance: bool,
    protocol: &Protocol,
    seed: u64,
) -> Vec<BenchResult> {
    assert!(hops == 1 || hops == 2, "one or two hops");
    let bus = Bus::start(Config::default());
    bus.spawn("Echo", 10001, [], |_: &AppCtx, m: &Message| {
        Message::new("echo", m.payload.clone(), m.timestamp)
    })
    .expect("spawn echo");
    bus.spawn("Relay", 10002, [], move |ctx: &AppCtx, m: &Message| {
        let result = if provenance {
            let mut stmts = ctx.context().statements().to_vec();
            match ctx.make_statement(m) {
                Ok(s) => stmts.push(s),
                Err(e) => return Message::new("error", e.to_string().into_bytes(), m.timestamp),
            }
            ctx.call("Echo", m.clone(), ChainMode::Propagate, stmts)
        } else {
            ctx.call("Echo", m.clone(), ChainMode::Drop, vec![])
        };
        result.unwrap_or_else(|e| Message::new("error", e.to_string().into_bytes(), m.timestamp))
    })
    .expect("spawn relay");
    let client = bus
        .spawn("Client", 10003, [], |_: &AppCtx, m: &Message| Message::new("ok", vec![], m.timestamp))
        .expect("spawn client");
    let ctx = bus.app_ctx(&client);

    let target = if hops == 2 { "Relay" } else { "Echo" };
    let label = format!("ipc_{hops}hop_provenance_{}", if provenance { "on" } else { "off" });
    let mut out = Vec::new();
    for &size in sizes {
        let payload = payload_for(size, seed);
        let msg = Message::new("bench", payload, 1);
        out.push(measure(&label, size, protocol, || {
            let reply = if provenance {
                let stmt = ctx.make_statement(&msg).expect("sign");
                ctx.call(target, msg.clone(), ChainMode::Propagate, vec![stmt])
            } else {
                ctx.call(target, msg.clone(), ChainMode::Drop, vec![])
            };
            std::hint::black_box(&reply.expect("echo"));
        }));
    }
    bus.shutdown();
    out
}

/// Chain resolution plus statement-batch verification per chain depth, the
/// work done when on-device provenance is prepared for a remote peer.
pub fn bench_resolution(depths: &[u32], protocol: &Protocol) -> Vec<BenchResult> {
    let max_depth = depths.iter().copied().max().unwrap_or(0) as usize;
    let bus = Bus::start(Config::default());
    let mut handles = Vec::new();
    for i in 0..max_depth {
        handles.push(
            bus.spawn(&format!("Link{i}"), 20001 + i as u32, [], |_: &AppCtx, m: &Message| {
                Message::new("ok", vec![], m.timestamp)
            })
            .expect("spawn link"),
        );
    }
    let client = bus
        .spawn("Client", 20999, [], |_: &AppCtx, m: &Message| Message::new("ok", vec![], m.timestamp))
        .expect("spawn client");
    let ctx = bus.app_ctx(&client);

    let mut out = Vec::new();
    for &depth in depths {
        let depth = depth as usize;
        let chain = CallChain::from_links(handles[..depth].iter().map(|h| h.principal()).collect());
        let statements: Vec<Statement> = handles[..depth]
            .iter()
            .map(|h| bus.make_statement(h, &Message::new("claim", vec![0xaa; 32], 1)).expect("sign"))
            .collect();
        out.push(measure("resolution", depth as u64, protocol, || {
            let resolved = ctx.resolve_chain(&chain).expect("service").expect("resolvable");
            std::hint::black_box(&resolved);
            for stmt in &statements {
                let verdict = ctx.verify_statement(stmt).expect("service");
                std::hint::black_box(&verdict);
            }
        }));
    }
    bus.shutdown();
    out
}

/// Attested vs plain round trips per payload size over the in-memory
/// transport.
pub fn bench_rpc(sizes: &[u64], protocol: &Protocol, seed: u64) -> Vec<BenchResult> {
    let bus = Bus::start(Config::default());
    let secret = crypto::keygen(bus.config().algorithm).expect("rng");
    let mut trust = TrustStore::new();
    trust.insert("bench-device", secret.clone());
    let verifier = Arc::new(RemoteVerifier::new(trust, Box::new(EchoApp)));
    let transport: Arc<dyn Transport> = Arc::new(InMemoryTransport::new(verifier));
    let provider = NetProvider::new(
        DeviceCredential::new("bench-device", secret),
        Arc::clone(bus.authority()),
        Arc::clone(&transport),
    );
    let app = bus
        .spawn("Caller", 10001, [], |_: &AppCtx, m: &Message| Message::new("ok", vec![], m.timestamp))
        .expect("spawn");
    let app_ctx = bus.app_ctx(&app);

    let mut out = Vec::new();
    for &size in sizes {
        let payload = payload_for(size, seed);
        let stmt = app_ctx.make_statement(&Message::new("claim", payload.clone(), 1)).expect("sign");
        let call_ctx = CallContext::assemble(app.principal(), CallChain::empty(), vec![]);
        out.push(measure("rpc_attested", size, protocol, || {
            let resp = provider
                .rpc(&call_ctx, "https://bench.example/echo", &payload, std::slice::from_ref(&stmt))
                .expect("rpc");
            std::hint::black_box(&resp);
        }));
        out.push(measure("rpc_plain", size, protocol, || {
            let body = plain_round_trip(transport.as_ref(), &payload).expect("echo");
            std::hint::black_box(&body);
        }));
    }
    bus.shutdown();
    out
}

/// Fixed column order shared by every benchmark.
pub const CSV_HEADER: &str = "name,param,trials,mean_ns,p50_ns,p95_ns";

pub fn render_csv(results: &[BenchResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.name, r.param, r.trials, r.mean_ns, r.p50_ns, r.p95_ns
        ));
    }
    out
}

pub fn write_csv(path: impl AsRef<std::path::Path>, results: &[BenchResult]) -> std::io::Result<()> {
    std::fs::write(path, render_csv(results))
}

/// Default sweeps used by the CLI.
pub mod sweeps {
    /// Statement sizes, 10 bytes up to 8000.
    pub fn statement_sizes() -> Vec<u64> {
        vec![10, 100, 500, 1000, 2000, 4000, 6000, 8000]
    }

    /// IPC payload sweep: 0 to 6336 bytes in 64-byte increments.
    pub fn ipc_sizes_full() -> Vec<u64> {
        (0..=6336).step_by(64).collect()
    }

    /// Shorter IPC sweep for interactive runs.
    pub fn ipc_sizes_short() -> Vec<u64> {
        vec![0, 256, 1024, 2048, 4096, 6336]
    }

    pub fn resolution_depths() -> Vec<u32> {
        vec![1, 2, 4, 8]
    }

    pub fn rpc_sizes() -> Vec<u64> {
        vec![16, 256, 1024, 4096, 16384]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> Protocol {
        Protocol { runs: 3, trials_per_run: 5 }
    }

    #[test]
    fn payloads_are_seed_deterministic() {
        assert_eq!(payload_for(128, 7), payload_for(128, 7));
        assert_ne!(payload_for(128, 7), payload_for(128, 8));
        assert_eq!(payload_for(0, 7), Vec::<u8>::new());
    }

    #[test]
    fn csv_has_fixed_column_order() {
        let rows = vec![BenchResult {
            name: "x".into(),
            param: 5,
            trials: 9,
            mean_ns: 1,
            p50_ns: 2,
            p95_ns: 3,
        }];
        let csv = render_csv(&rows);
        assert_eq!(csv, "name,param,trials,mean_ns,p50_ns,p95_ns\nx,5,9,1,2,3\n");
    }

    #[test]
    fn measure_counts_pooled_trials() {
        let r = measure("noop", 0, &Protocol { runs: 4, trials_per_run: 10 }, || {
            std::hint::black_box(1 + 1);
        });
        // 4 runs minus the dropped extremes, 10 trials each.
        assert_eq!(r.trials, 20);
        assert!(r.p50_ns <= r.p95_ns);
    }

    #[test]
    fn statement_bench_smoke() {
        // Size 0 still pays the fixed signing cost.
        let results = bench_statements(&[0, 100], &quick(), 1);
        assert_eq!(results.len(), 4);
        assert!(results.iter().all(|r| r.mean_ns > 0));
        assert_eq!(results.iter().filter(|r| r.name == "statement_create").count(), 2);
        assert_eq!(results.iter().filter(|r| r.name == "statement_verify").count(), 2);
    }

    #[test]
    fn ipc_bench_smoke() {
        let on = bench_ipc(&[64], 1, true, &quick(), 1);
        let off = bench_ipc(&[64], 1, false, &quick(), 1);
        assert_eq!(on[0].name, "ipc_1hop_provenance_on");
        assert_eq!(off[0].name, "ipc_1hop_provenance_off");
    }

    #[test]
    fn resolution_bench_smoke() {
        let results = bench_resolution(&[1, 2], &quick());
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].param, 1);
        assert_eq!(results[1].param, 2);
    }

    #[test]
    fn rpc_bench_smoke() {
        let results = bench_rpc(&[32], &quick(), 1);
        assert_eq!(results.len(), 2);
        assert!(results.iter().any(|r| r.name == "rpc_attested"));
        assert!(results.iter().any(|r| r.name == "rpc_plain"));
    }
}
