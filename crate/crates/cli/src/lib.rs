//! The `firewatch` command line.

pub mod link;
pub mod replay;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use firewatch_core::{DeviceId, RuleBase};
use firewatch_crypto::{predistribute_keys, Registry, DEFAULT_POOL_SIZE};
use firewatch_service::core::CoreOptions;
use firewatch_service::http::{serve, AppState};
use firewatch_service::{EventLog, IngestCore, ServiceConfig, SystemClock};
use firewatch_sim::{generate_keys, run_scenario, NodeCredentials, Scenario, SimTrace};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::link::CoreLink;
use crate::replay::Pacing;

#[derive(Debug, Parser)]
#[command(
    name = "firewatch",
    version,
    about = "Forest-fire risk monitoring toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate AES keys and one-time signature pools for a set of devices.
    #[command(group(ArgGroup::new("source").required(true).args(["devices", "scenario"])))]
    Keygen {
        /// Comma-separated IMEIs.
        #[arg(long, value_delimiter = ',')]
        devices: Vec<DeviceId>,
        /// Take the device list (and default pool size) from a scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing registry.
        #[arg(long)]
        force: bool,
        /// One-time keys per device; a power of two.
        #[arg(long)]
        pool_size: Option<usize>,
        /// Derive keys from this seed instead of the OS generator.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario through the network simulator and an in-process service.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Trace output (JSON lines).
        #[arg(long)]
        out: PathBuf,
        /// Registry with node key seeds; keys are derived from the seed otherwise.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Also write the service event log here.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        rulebase: Option<PathBuf>,
    },
    /// Post a trace's envelopes to a running service.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Base URL, e.g. http://127.0.0.1:8080
        #[arg(long)]
        service: String,
        #[arg(long)]
        token: String,
        /// Post back to back instead of keeping the trace's timing.
        #[arg(long, conflicts_with = "speed")]
        fast: bool,
        /// Time compression factor for the trace's timing.
        #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
        speed: f64,
    },
    /// Run the ingestion service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured port; 0 picks a free one.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Export the assessments of one area from a service log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        area: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code:
/// 0 success, 2 usage error, 1 anything else.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}

/// Joins the error chain, skipping causes their parent already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

pub fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Keygen {
            devices,
            scenario,
            out,
            force,
            pool_size,
            seed,
        } => keygen(devices, scenario.as_deref(), &out, force, pool_size, seed),
        Command::Simulate {
            scenario,
            seed,
            out,
            registry,
            log,
            rulebase,
        } => simulate(
            &scenario,
            seed,
            &out,
            registry.as_deref(),
            log.as_deref(),
            rulebase.as_deref(),
        ),
        Command::Replay {
            trace,
            service,
            token,
            fast,
            speed,
        } => {
            let pacing = if fast {
                Pacing::Fast
            } else {
                Pacing::Scaled(speed)
            };
            let summary = runtime()?.block_on(replay::replay(&trace, &service, &token, pacing))?;
            println!(
                "posted {}: {} accepted, {} duplicate, {} rejected",
                summary.posted, summary.accepted, summary.duplicates, summary.rejected
            );
            Ok(())
        }
        Command::Serve { config, port } => serve_cmd(&config, port),
        Command::Report {
            log,
            area,
            format: Format::Csv,
            out,
        } => match out {
            Some(path) => {
                let mut buf = Vec::new();
                report::write_csv(&log, &area, &mut buf)?;
                std::fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))
            }
            None => report::write_csv(&log, &area, std::io::stdout().lock()).map(drop),
        },
    }
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?)
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}

fn keygen(
    mut devices: Vec<DeviceId>,
    scenario: Option<&Path>,
    out: &Path,
    force: bool,
    pool_size: Option<usize>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    if out.exists() && !force {
        bail!(
            "{} already exists; pass --force to overwrite it",
            out.display()
        );
    }
    let mut pool = pool_size.unwrap_or(DEFAULT_POOL_SIZE);
    if let Some(path) = scenario {
        let s = Scenario::load(path)?;
        devices = s.device_ids();
        pool = pool_size.unwrap_or(s.key_pool_size);
    }
    firewatch_crypto::keys::check_pool_size(pool)?;
    let mut rng = match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_os_rng(),
    };
    let p = predistribute_keys(&devices, pool, &mut rng)?;
    create_parent(out)?;
    p.registry
        .save(out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "wrote {} devices with {pool} one-time keys each to {}",
        p.registry.len(),
        out.display()
    );
    Ok(())
}

fn simulate(
    scenario_path: &Path,
    seed: Option<u64>,
    out: &Path,
    registry: Option<&Path>,
    log: Option<&Path>,
    rulebase: Option<&Path>,
) -> anyhow::Result<()> {
    let mut scenario = Scenario::load(scenario_path)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let rules = match rulebase {
        Some(p) => RuleBase::load(p)?,
        None => RuleBase::shipped(),
    };
    let (service_registry, mut creds) = match registry {
        Some(path) => {
            let reg =
                Registry::load(path).with_context(|| format!("reading {}", path.display()))?;
            let creds = NodeCredentials::from_registry(&reg, &scenario.device_ids())?;
            (reg.service_view(), creds)
        }
        None => {
            let p = generate_keys(&scenario)?;
            (
                p.registry.service_view(),
                NodeCredentials::from_predistribution(p),
            )
        }
    };
    create_parent(out)?;
    if let Some(p) = log {
        create_parent(p)?;
    }
    let trace = run_simulation(
        &scenario,
        service_registry,
        &mut creds,
        Arc::new(rules),
        log,
    )?;
    trace
        .write(out)
        .with_context(|| format!("writing {}", out.display()))?;
    let terminals = trace.terminal_states();
    let delivered = terminals
        .values()
        .filter(|t| **t == firewatch_sim::Terminal::Delivered)
        .count();
    println!(
        "{}: {} packages, {} delivered, {} rejected, {} assessments, {} alert changes; trace in {}",
        scenario.name.as_deref().unwrap_or("scenario"),
        terminals.len(),
        delivered,
        trace.count("rejected"),
        trace.count("assessed"),
        trace.count("alert"),
        out.display()
    );
    Ok(())
}

/// Runs `scenario` against an in-process service whose log goes to
/// `log_path` (replacing any file there) or stays in memory.
pub fn run_simulation(
    scenario: &Scenario,
    registry: Registry,
    creds: &mut std::collections::BTreeMap<DeviceId, NodeCredentials>,
    rules: Arc<RuleBase>,
    log_path: Option<&Path>,
) -> anyhow::Result<SimTrace> {
    let log = match log_path {
        Some(p) => {
            if p.exists() {
                std::fs::remove_file(p).with_context(|| format!("replacing {}", p.display()))?;
            }
            EventLog::open(p, false)
                .with_context(|| format!("opening {}", p.display()))?
                .0
        }
        None => EventLog::in_memory(),
    };
    let core = IngestCore::new(rules, registry, Vec::new(), log, CoreOptions::default());
    let mut link = CoreLink::new(core);
    Ok(run_scenario(scenario, creds, &mut link)?)
}

fn serve_cmd(config_path: &Path, port: Option<u16>) -> anyhow::Result<()> {
    let mut cfg = ServiceConfig::load(config_path)?;
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if let Some(p) = port {
        cfg.port = p;
    }
    let (core, report) = IngestCore::from_config(&cfg)?;
    if report.truncated_bytes > 0 {
        eprintln!(
            "WARNING: discarded {} bytes at the end of {} ({})",
            report.truncated_bytes,
            cfg.log_path.display(),
            report.problem.as_deref().unwrap_or("invalid tail")
        );
    }
    let state = AppState::new(core, Arc::new(SystemClock), Some(cfg.registry_path.clone()));
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind((cfg.bind, cfg.port))
            .await
            .with_context(|| format!("binding {}:{}", cfg.bind, cfg.port))?;
        let addr = listener.local_addr()?;
        println!(
            "listening on http://{addr} ({} log entries replayed)",
            report.entries
        );
        std::io::stdout().flush()?;
        serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| anyhow!(e))
    })
}
