use std::alloc::{GlobalAlloc, Layout, System};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};

use nodeguard::agent::AgentConfig;
use nodeguard::bench::{self, BenchParams};
use nodeguard::gateway::{GatewayConfig, DEFAULT_LISTEN_ADDR};
use nodeguard::logger::{self, ChainStatus};
use nodeguard::sim::{self, AttackOutcome};
use nodeguard::{kat, net, NodeId};

/// Tracks live and peak heap use for the benchmark report.
struct CountingAlloc;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let live = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(live, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "nodeguard",
    version,
    about = "Gateway, agent and test tooling for attested sensor nodes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Gateway process.
    Gateway {
        #[command(subcommand)]
        cmd: RunCmd,
    },
    /// Agent process.
    Agent {
        #[command(subcommand)]
        cmd: RunCmd,
    },
    /// Deploy code to a node through a running gateway.
    Deploy {
        #[arg(long)]
        node: NodeId,
        #[arg(long)]
        code: PathBuf,
        /// Application name; defaults to the code file's stem.
        #[arg(long)]
        app: Option<String>,
        #[arg(long, default_value = DEFAULT_LISTEN_ADDR)]
        gateway: String,
    },
    /// Attest a node now through a running gateway.
    Attest {
        #[arg(long)]
        node: NodeId,
        #[arg(long, default_value = DEFAULT_LISTEN_ADDR)]
        gateway: String,
    },
    /// Simulated scenarios.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    /// AEAD timing benchmark.
    Bench {
        #[arg(long, default_value = "xoodyak,isap")]
        algs: String,
        #[arg(long, default_value = "1k..65k")]
        sizes: String,
        #[arg(long, default_value_t = 100)]
        iters: u32,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Hash-chained log tools.
    Logs {
        #[command(subcommand)]
        cmd: LogsCmd,
    },
    /// Known-answer tests.
    Kat {
        #[command(subcommand)]
        cmd: KatCmd,
    },
}

#[derive(Subcommand)]
enum RunCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    Run {
        script: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Print the full event trace.
        #[arg(long)]
        trace: bool,
    },
}

#[derive(Subcommand)]
enum LogsCmd {
    Verify {
        log_path: PathBuf,
    },
    /// Print entries as text.
    Show {
        log_path: PathBuf,
    },
}

#[derive(Subcommand)]
enum KatCmd {
    Run { dir: PathBuf },
}

enum Failure {
    Usage(String),
    Check(String),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn check(e: impl std::fmt::Display) -> Failure {
    Failure::Check(e.to_string())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn control(gateway: &str, command: &str) -> Outcome {
    let answer = net::send_control(gateway, command, Duration::from_secs(120)).map_err(check)?;
    println!("{answer}");
    if answer.starts_with("OK verdict=ok") {
        Ok(())
    } else {
        Err(check(format!("gateway answered: {answer}")))
    }
}

fn scenario(script: &Path, seed: u64, trace: bool) -> Outcome {
    let text = read_text(script)?;
    let parsed = sim::parse_script(&text).map_err(|e| usage(format!("{}: {e}", script.display())))?;
    let (sim, report) =
        sim::run_script(&parsed, seed).map_err(|e| usage(format!("{}: {e}", script.display())))?;
    if trace {
        for line in &report.trace {
            println!("{line}");
        }
    }
    let link = sim.link();
    println!(
        "scenario {} seed={seed} end={}ms frames={} delivered={} adversarial_delivered={} adversarial_accepted={}",
        script.display(),
        report.end_time,
        link.sent,
        link.delivered,
        link.adversarial_delivered,
        link.adversarial_accepted
    );
    for a in &report.attacks {
        let outcome = match a.outcome {
            AttackOutcome::Undelivered => "undelivered",
            AttackOutcome::LoggedAnomaly => "rejected, logged as NetworkAnomaly",
            AttackOutcome::RejectedSilently => "rejected WITHOUT log entry",
            AttackOutcome::RejectedByAgent => "rejected by agent",
            AttackOutcome::GenuineDelivered => "genuine frame, first delivery",
            AttackOutcome::Accepted => "ACCEPTED",
        };
        println!(
            "attack t={} {} {:?} {} {}: {outcome}",
            a.time,
            a.kind,
            a.dir,
            a.node,
            a.msg_type.map_or("?", |t| t.name())
        );
    }
    for e in &report.expectations {
        let tag = if e.passed { "PASS" } else { "FAIL" };
        println!("{tag} line {}: expect {} (actual {})", e.line, e.text, e.actual);
    }
    if report.passed() {
        Ok(())
    } else {
        Err(check("scenario expectations failed"))
    }
}

fn run_bench(algs: &str, sizes: &str, iters: u32, out: &Path, svg: Option<&Path>) -> Outcome {
    let params = BenchParams {
        algs: bench::parse_algs(algs).map_err(usage)?,
        sizes: bench::parse_sizes(sizes).map_err(usage)?,
        iters,
        ..BenchParams::default()
    };
    let base = PEAK.load(Ordering::Relaxed);
    let start = Instant::now();
    let rows = bench::run_bench(&params);
    let elapsed = start.elapsed();
    std::fs::write(out, bench::to_csv(&rows)).map_err(|e| check(format!("{}: {e}", out.display())))?;
    if let Some(svg) = svg {
        std::fs::write(svg, bench::to_svg(&rows)).map_err(|e| check(format!("{}: {e}", svg.display())))?;
    }
    for r in &rows {
        let noisy = if r.noisy { "  (noisy)" } else { "" };
        println!(
            "{:<8} {:>6} B {:<7} {:>10.2} us  sd {:>8.2}{noisy}",
            r.alg.name(),
            r.size_bytes,
            r.op.name(),
            r.mean_us,
            r.stddev_us
        );
    }
    let shape = bench::check_shape(&rows, 0.05, 5.0);
    println!(
        "xoodyak faster everywhere: {}; min isap/xoodyak ratio {:.2} (target {:.1}); non-decreasing within 5%: {}",
        shape.xoodyak_faster, shape.min_ratio, shape.ratio_target, shape.monotonic
    );
    for n in &shape.notes {
        println!("  {n}");
    }
    println!(
        "{} rows in {:.1}s, peak heap {} KiB, written to {}",
        rows.len(),
        elapsed.as_secs_f64(),
        PEAK.load(Ordering::Relaxed).saturating_sub(base) / 1024,
        out.display()
    );
    Ok(())
}

fn logs_verify(path: &Path) -> Outcome {
    let loaded = logger::load_log(path).map_err(usage)?;
    match loaded.verify() {
        ChainStatus::Ok => {
            let head = loaded
                .head
                .map_or("no head file".to_string(), |h| h.head.to_string());
            println!("ok: {} entries, head {head}", loaded.entries.len());
            Ok(())
        }
        ChainStatus::BrokenAt(i) => {
            println!("broken at entry {i}");
            Err(check(format!("log chain broken at entry {i}")))
        }
    }
}

fn kat_run(dir: &Path) -> Outcome {
    let start = Instant::now();
    let reports = kat::run_kat_dir(dir).map_err(usage)?;
    if reports.is_empty() {
        return Err(usage(format!("{}: no KAT files", dir.display())));
    }
    let mut ok = true;
    for r in &reports {
        println!(
            "{} {}: {}/{} passed",
            r.alg.name(),
            r.path.display(),
            r.passed,
            r.total
        );
        if !r.all_passed() {
            ok = false;
            println!("  failing counts: {:?}", r.failed_counts);
        }
    }
    println!("elapsed {:.2}s", start.elapsed().as_secs_f64());
    if ok {
        Ok(())
    } else {
        Err(check("KAT failures"))
    }
}

fn dispatch(cmd: Cmd) -> Outcome {
    match cmd {
        Cmd::Gateway {
            cmd: RunCmd::Run { config },
        } => {
            let cfg = GatewayConfig::parse(&read_text(&config)?).map_err(usage)?;
            net::run_gateway(cfg).map_err(check)
        }
        Cmd::Agent {
            cmd: RunCmd::Run { config },
        } => {
            let cfg = AgentConfig::parse(&read_text(&config)?).map_err(usage)?;
            net::run_agent(cfg).map_err(check)
        }
        Cmd::Deploy {
            node,
            code,
            app,
            gateway,
        } => {
            let bytes = std::fs::read(&code).map_err(|e| usage(format!("{}: {e}", code.display())))?;
            let app = app.unwrap_or_else(|| {
                code.file_stem()
                    .map_or("app".into(), |s| s.to_string_lossy().into_owned())
            });
            if app.split_whitespace().count() != 1 {
                return Err(usage("application name must be one word"));
            }
            control(&gateway, &format!("deploy {node} {app} {}", hex::encode(bytes)))
        }
        Cmd::Attest { node, gateway } => control(&gateway, &format!("attest {node}")),
        Cmd::Scenario {
            cmd: ScenarioCmd::Run { script, seed, trace },
        } => scenario(&script, seed, trace),
        Cmd::Bench {
            algs,
            sizes,
            iters,
            out,
            svg,
        } => run_bench(&algs, &sizes, iters, &out, svg.as_deref()),
        Cmd::Logs {
            cmd: LogsCmd::Verify { log_path },
        } => logs_verify(&log_path),
        Cmd::Logs {
            cmd: LogsCmd::Show { log_path },
        } => {
            let loaded = logger::load_log(&log_path).map_err(usage)?;
            print!("{}", logger::export_text(&loaded.entries));
            Ok(())
        }
        Cmd::Kat {
            cmd: KatCmd::Run { dir },
        } => kat_run(&dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("failed: {msg}");
            ExitCode::from(EXIT_FAIL)
        }
    }
}
