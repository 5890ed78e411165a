//! `pbn`: validate, run and inspect proximity-network scenarios.
//!
//! Exit codes: 0 success, 1 assertion failed, 2 usage, parse or validation
//! error, 3 the run did not reach quiescence within `max_ticks`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pbn_core::runner::{self, Overrides, EXIT_USAGE};
use pbn_core::scenario::{Scenario, ScenarioError};
use pbn_core::trace::{inspect, TraceError, TraceQuery};

#[derive(Parser)]
#[command(name = "pbn", version, about = "Proximity-network scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file against the schema.
    Validate { file: PathBuf },
    /// Run a scenario and evaluate its assertions.
    Run {
        file: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Hop budget for data packets.
        #[arg(long)]
        ttl: Option<u32>,
        /// Ticks between a send and its arrival.
        #[arg(long)]
        latency: Option<u64>,
        #[arg(long, value_enum)]
        split_horizon: Option<Switch>,
        /// Literal table rules: no cascade on loss, no repair replies, last update wins.
        #[arg(long)]
        faithful_routing: bool,
        /// Write the trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the JSON summary here.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        max_ticks: Option<u64>,
    },
    /// Filter the records of a trace file.
    Inspect {
        trace: PathBuf,
        /// Canonical id or social name.
        #[arg(long)]
        node: Option<String>,
        /// Record kind, e.g. `table`, `update`, `data`.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Validate { file } => validate(&file),
        Command::Run { file, seed, ttl, latency, split_horizon, faithful_routing, trace, summary, max_ticks } => {
            let overrides = Overrides {
                seed,
                ttl,
                latency_ticks: latency,
                split_horizon: split_horizon.map(|s| matches!(s, Switch::On)),
                faithful_routing,
                max_ticks,
            };
            run(&file, &overrides, trace.as_deref(), summary.as_deref())
        }
        Command::Inspect { trace, node, kind, from, to } => inspect_trace(&trace, node, kind, from, to),
    };
    ExitCode::from(code as u8)
}

fn read(path: &Path) -> Result<String, i32> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        EXIT_USAGE
    })
}

fn load(path: &Path) -> Result<Scenario, i32> {
    let text = read(path)?;
    Scenario::parse(&text).map_err(|e| {
        report_invalid(path, &e);
        EXIT_USAGE
    })
}

fn report_invalid(path: &Path, err: &ScenarioError) {
    match err {
        ScenarioError::Parse { .. } => eprintln!("{}: {err}", path.display()),
        ScenarioError::Schema(violations) => {
            for v in violations {
                eprintln!("{}: {v}", path.display());
            }
        }
    }
}

fn validate(path: &Path) -> i32 {
    match load(path) {
        Ok(s) => {
            println!(
                "ok: {} ({} nodes, {} events, {} assertions)",
                s.name,
                s.nodes.len(),
                s.events.len(),
                s.assertions.len()
            );
            0
        }
        Err(code) => code,
    }
}

fn write(path: &Path, contents: &str) -> Result<(), i32> {
    fs::write(path, contents).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        EXIT_USAGE
    })
}

fn run(path: &Path, overrides: &Overrides, trace: Option<&Path>, summary: Option<&Path>) -> i32 {
    let scenario = match load(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let config = overrides.apply(scenario.config);
    let result = match runner::run(&scenario, config) {
        Ok(r) => r,
        Err(e) => {
            report_invalid(path, &e);
            return EXIT_USAGE;
        }
    };
    if let Some(p) = trace {
        if let Err(code) = write(p, &result.trace) {
            return code;
        }
    }
    let s = &result.summary;
    if let Some(p) = summary {
        let json = serde_json::to_string_pretty(s).expect("summary serializes");
        if let Err(code) = write(p, &(json + "\n")) {
            return code;
        }
    }
    for v in &s.assertions {
        let verdict = if v.passed { "PASS" } else { "FAIL" };
        println!("{verdict} #{} {}: {}", v.index, v.label, v.detail);
    }
    if s.exit_code == 3 {
        println!(
            "non-quiescent: {} events still queued after {} ticks (t={}), {} routing updates sent",
            s.report.in_flight, s.report.ticks_elapsed, s.report.end_time, s.report.counters.routing_updates
        );
    }
    let failed: Vec<String> = s.failed().map(|v| v.label.clone()).collect();
    if !failed.is_empty() {
        eprintln!("assertion failed: {}", failed.join(", "));
    }
    println!("{}: {} (exit {})", s.scenario, s.outcome.as_str(), s.exit_code);
    s.exit_code
}

fn parse_tick(flag: &str, v: Option<String>) -> Result<Option<u64>, TraceError> {
    v.map(|s| s.parse().map_err(|_| TraceError::BadQuery(format!("{flag} expects a tick, got {s:?}")))).transpose()
}

fn inspect_trace(
    path: &Path,
    node: Option<String>,
    kind: Option<String>,
    from: Option<String>,
    to: Option<String>,
) -> i32 {
    let query =
        parse_tick("--from", from).and_then(|from| Ok(TraceQuery { node, kind, from, to: parse_tick("--to", to)? }));
    let query = match query {
        Ok(q) => q,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let text = match read(path) {
        Ok(t) => t,
        Err(code) => return code,
    };
    match inspect(&text, &query) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
