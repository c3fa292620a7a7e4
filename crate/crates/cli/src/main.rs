//! Command-line driver: demonstration scenarios, microbenchmarks, and the
//! loopback verifier server with its matching one-shot client.
//!
//! Exit codes: 0 when a run ends in its expected outcome (attack scenarios
//! count a correctly defeated attack as expected), 1 otherwise, 2 for usage
//! errors.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand, ValueEnum};

use chainbus_bench as bench;
use chainbus_core::bus::{Bus, CallContext};
use chainbus_core::config::{Config, TransportKind};
use chainbus_core::net::{
    self, load_credential, AttestedRequest, EchoApp, InMemoryTransport, NetProvider,
    RemoteVerifier, RpcResponse, TcpTransport, Transport, TrustStore, VerifierServer,
};
use chainbus_core::scenario::{run_clickfraud, run_paybuddy, Attack, Tamper};
use chainbus_core::types::{CallChain, Message};

#[derive(Parser)]
#[command(name = "chainbus", version, about = "Provenance-carrying IPC simulator and attested RPC demo")]
struct Cli {
    /// key=value config file (mac_algorithm, freshness_ms, max_chain_depth,
    /// max_payload, transport); flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an end-to-end demonstration flow and print its transcript
    Scenario {
        #[command(subcommand)]
        which: ScenarioCmd,
    },
    /// Run microbenchmarks and print CSV (name,param,trials,mean_ns,p50_ns,p95_ns)
    Bench {
        #[command(subcommand)]
        which: BenchCmd,
    },
    /// Serve the remote verifier over TCP until interrupted
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// device_id=hex_secret lines
        #[arg(long)]
        trust_store: PathBuf,
    },
    /// Send one attested demo request to a verifier and print the exchange
    Verify {
        /// host:port of a running verifier; required with transport=tcp
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        trust_store: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Signed purchase order from ExampleApp through PayBuddy to the server
    Paybuddy {
        /// The user cancels the payment dialog
        #[arg(long)]
        deny: bool,
        #[arg(long, value_enum)]
        tamper: Option<TamperArg>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// OS-signed click relayed host app -> ad app, with attack variants
    Clickfraud {
        #[arg(long, value_enum)]
        attack: Option<AttackArg>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TamperArg {
    /// PayBuddy rewrites the order amount before forwarding
    Mutate,
    /// The same order id is submitted twice
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    /// Host forges a click under its own key
    Synthesize,
    /// Host delivers the same event twice
    Replay,
    /// The click landed while the ad was obscured
    Obscure,
}

#[derive(Args)]
struct BenchCommon {
    /// Also write the CSV to this file
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Reduced runs/trials for a fast look
    #[arg(long)]
    quick: bool,
    /// Seed for deterministic payload generation
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Statement create/verify time vs payload size
    Statements {
        #[command(flatten)]
        common: BenchCommon,
    },
    /// Echo IPC round trip, 1 and 2 hops, chain tracking on and off
    Ipc {
        #[command(flatten)]
        common: BenchCommon,
        /// Full 0..6336 step-64 payload sweep instead of the short one
        #[arg(long)]
        full: bool,
    },
    /// Chain resolution plus statement batch vs depth {1,2,4,8}
    Resolution {
        #[command(flatten)]
        common: BenchCommon,
    },
    /// Attested vs plain RPC latency vs payload size
    Rpc {
        #[command(flatten)]
        common: BenchCommon,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let config = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => Config::default(),
    };

    match cli.cmd {
        Cmd::Scenario { which } => {
            let transcript = match which {
                ScenarioCmd::Paybuddy { deny, tamper, seed } => {
                    let tamper = match tamper {
                        None => Tamper::None,
                        Some(TamperArg::Mutate) => Tamper::PayBuddyMutatesOrder,
                        Some(TamperArg::Replay) => Tamper::ReplayOrder,
                    };
                    run_paybuddy(&config, !deny, tamper, seed)
                }
                ScenarioCmd::Clickfraud { attack, seed } => {
                    let attack = match attack {
                        None => Attack::None,
                        Some(AttackArg::Synthesize) => Attack::Synthesize,
                        Some(AttackArg::Replay) => Attack::Replay,
                        Some(AttackArg::Obscure) => Attack::Obscure,
                    };
                    run_clickfraud(&config, attack, seed)
                }
            };
            println!("{transcript}");
            Ok(if transcript.expected { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }

        Cmd::Bench { which } => {
            let results = match which {
                BenchCmd::Statements { common } => {
                    let protocol = protocol_for(&common);
                    let r = bench::bench_statements(&bench::sweeps::statement_sizes(), &protocol, common.seed);
                    finish_bench(&common, r)?
                }
                BenchCmd::Ipc { common, full } => {
                    let protocol = protocol_for(&common);
                    let sizes = if full {
                        bench::sweeps::ipc_sizes_full()
                    } else {
                        bench::sweeps::ipc_sizes_short()
                    };
                    let mut r = Vec::new();
                    for hops in [1u8, 2] {
                        for provenance in [false, true] {
                            r.extend(bench::bench_ipc(&sizes, hops, provenance, &protocol, common.seed));
                        }
                    }
                    finish_bench(&common, r)?
                }
                BenchCmd::Resolution { common } => {
                    let protocol = protocol_for(&common);
                    let r = bench::bench_resolution(&bench::sweeps::resolution_depths(), &protocol);
                    finish_bench(&common, r)?
                }
                BenchCmd::Rpc { common } => {
                    let protocol = protocol_for(&common);
                    let r = bench::bench_rpc(&bench::sweeps::rpc_sizes(), &protocol, common.seed);
                    finish_bench(&common, r)?
                }
            };
            let _ = results;
            Ok(ExitCode::SUCCESS)
        }

        Cmd::Serve { port, trust_store } => {
            let trust = TrustStore::load(&trust_store, config.algorithm)
                .with_context(|| format!("loading trust store {}", trust_store.display()))?;
            let verifier = Arc::new(RemoteVerifier::new(trust, Box::new(EchoApp)));
            let server = VerifierServer::bind(("127.0.0.1", port), verifier)
                .with_context(|| format!("binding 127.0.0.1:{port}"))?;
            println!("verifier listening on {}", server.local_addr()?);
            server.run(|line| println!("{line}"))?;
            Ok(ExitCode::SUCCESS)
        }

        Cmd::Verify { addr, trust_store } => {
            let credential = load_credential(&trust_store, config.algorithm)
                .with_context(|| format!("loading trust store {}", trust_store.display()))?;
            let transport: Arc<dyn Transport> = match config.transport {
                TransportKind::Tcp => {
                    let addr = addr.context("--addr is required with transport=tcp")?;
                    Arc::new(TcpTransport::new(addr))
                }
                TransportKind::Memory => {
                    let trust = TrustStore::load(&trust_store, config.algorithm)?;
                    Arc::new(InMemoryTransport::new(Arc::new(RemoteVerifier::new(
                        trust,
                        Box::new(EchoApp),
                    ))))
                }
            };

            let bus = Bus::start(config.clone());
            let app = bus.spawn("DemoApp", 10001, [], |_: &chainbus_core::AppCtx, m: &Message| {
                Message::new("ok", vec![], m.timestamp)
            })?;
            let ctx = bus.app_ctx(&app);
            let claim = Message::new("demo_claim", b"hello from the device".to_vec(), 1);
            let stmt = ctx.make_statement(&claim)?;
            let provider = NetProvider::new(credential, Arc::clone(bus.authority()), transport);

            // Show the headers exactly as they travel.
            let preview = AttestedRequest {
                device_id: provider.device_id().to_string(),
                url: "https://verify.example/demo".into(),
                payload: b"demo payload".to_vec(),
                header_chain: bus
                    .authority()
                    .resolve_chain(&CallChain::from_links(vec![app.principal()]))?,
                header_statements: vec![net::RestatedStatement {
                    app_name: "DemoApp".into(),
                    message: stmt.message.clone(),
                    tag: stmt.tag.clone(),
                }],
            };
            println!("{}: {}", net::CHAIN_HEADER, preview.chain_header());
            println!("{}: {}", net::STATEMENTS_HEADER, preview.statements_header());

            let call_ctx = CallContext::assemble(app.principal(), CallChain::empty(), vec![]);
            let response = provider.rpc(&call_ctx, "https://verify.example/demo", b"demo payload", &[stmt]);
            bus.shutdown();
            match response {
                Ok(RpcResponse::Accepted { body }) => {
                    println!("accepted: {}", String::from_utf8_lossy(&body));
                    Ok(ExitCode::SUCCESS)
                }
                Ok(RpcResponse::Refused { reason }) => {
                    println!("refused: {reason}");
                    Ok(ExitCode::from(1))
                }
                Err(e) => bail!("rpc failed: {e}"),
            }
        }
    }
}

fn protocol_for(common: &BenchCommon) -> bench::Protocol {
    if common.quick {
        bench::Protocol::quick()
    } else {
        bench::Protocol::default()
    }
}

fn finish_bench(common: &BenchCommon, results: Vec<bench::BenchResult>) -> anyhow::Result<Vec<bench::BenchResult>> {
    let csv = bench::render_csv(&results);
    print!("{csv}");
    if let Some(path) = &common.csv {
        bench::write_csv(path, &results).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(results)
}
