//! Command-line front-end: simulate, gen-trace, analyze-security, compare.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use freshmem::config::{Preset, RunConfig};
use freshmem::engine::Mode;
use freshmem::sim::{cmd_analyze_security, cmd_compare, cmd_gen_trace, cmd_simulate, ReplayQuery, SecurityQuery};
use freshmem::trace::{PatternKind, PatternSpec};

/// Exit status when a run halts on a kill switch or capacity rejection.
const EXIT_HALTED: u8 = 2;

#[derive(Parser)]
#[command(name = "freshmem", version, about = "Trace-driven memory freshness simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one protection mode over a trace and emit JSON statistics.
    Simulate(RunArgs),
    /// Write a synthetic trace (text, or binary for a `.bin` path).
    GenTrace(GenArgs),
    /// Evaluate the exhaustion and replay bounds, optionally by Monte-Carlo.
    AnalyzeSecurity(SecurityArgs),
    /// Run several configurations over one trace and emit a CSV table.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named parameter set.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Trace file; replaces the configured trace source.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// none, ci, toleo or merkle.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// JSON pattern spec; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    kind: Option<PatternKind>,
    #[arg(long)]
    footprint: Option<u64>,
    #[arg(long)]
    ops: Option<u64>,
    #[arg(long)]
    write_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SecurityArgs {
    /// JSON security query.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stealth width for the replay check.
    #[arg(long)]
    replay_bits: Option<u32>,
    /// Monte-Carlo trials for the replay check; 0 gives the analytic value only.
    #[arg(long)]
    replay_trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// One JSON run configuration per row; repeatable.
    #[arg(long)]
    config: Vec<PathBuf>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
    /// Modes to run over the base configuration; repeatable or comma separated.
    #[arg(long, value_parser = parse_mode, value_delimiter = ',')]
    mode: Vec<Mode>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("unknown mode {s:?}; expected none, ci, toleo or merkle"))
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::parse(s).ok_or_else(|| format!("unknown preset {s:?}; expected paper"))
}

fn parse_kind(s: &str) -> Result<PatternKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown pattern kind {s:?}"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn base_config(config: Option<&Path>, preset: Option<Preset>) -> Result<RunConfig> {
    match (config, preset) {
        (Some(p), _) => Ok(RunConfig::load(p)?),
        (None, Some(pr)) => Ok(pr.config()),
        (None, None) => Ok(RunConfig::default()),
    }
}

fn apply_overrides(cfg: &mut RunConfig, trace: Option<&Path>, seed: Option<u64>) {
    if let Some(t) = trace {
        cfg.trace.path = Some(t.into());
        cfg.trace.pattern = None;
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
}

fn simulate(a: RunArgs) -> Result<ExitCode> {
    let mut cfg = base_config(a.config.as_deref(), a.preset)?;
    apply_overrides(&mut cfg, a.trace.as_deref(), a.seed);
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let report = cmd_simulate(&cfg)?;
    emit(cfg.out.as_deref(), &report.stats.to_json())?;
    match (&report.error, &report.stats.halt) {
        (Some(_), Some(h)) => {
            eprintln!("freshmem: halted at event {}: {}", h.event_index, h.reason);
            Ok(ExitCode::from(EXIT_HALTED))
        }
        _ => Ok(ExitCode::SUCCESS),
    }
}

fn gen_trace(a: GenArgs) -> Result<ExitCode> {
    let mut spec: PatternSpec = match &a.config {
        Some(p) => read_json(p)?,
        None => PatternSpec::default(),
    };
    if let Some(k) = a.kind {
        spec.kind = k;
    }
    if let Some(f) = a.footprint {
        spec.footprint_bytes = f;
    }
    if let Some(n) = a.ops {
        spec.op_count = n;
    }
    if let Some(w) = a.write_fraction {
        spec.write_fraction = w;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let n = cmd_gen_trace(&spec, &a.out)?;
    eprintln!("freshmem: wrote {n} events to {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn analyze_security(a: SecurityArgs) -> Result<ExitCode> {
    let mut q: SecurityQuery = match &a.config {
        Some(p) => read_json(p)?,
        None => SecurityQuery::default(),
    };
    if a.replay_bits.is_some() || a.replay_trials.is_some() {
        let r = q.replay.get_or_insert_with(ReplayQuery::default);
        if let Some(b) = a.replay_bits {
            r.stealth_bits = b;
        }
        if let Some(t) = a.replay_trials {
            r.trials = t;
        }
    }
    if let Some(s) = a.seed {
        if let Some(r) = q.replay.as_mut() {
            r.seed = s;
        }
        if let Some(m) = q.mc_exhaustion.as_mut() {
            m.seed = s;
        }
    }
    let report = cmd_analyze_security(&q)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    emit(a.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn compare(a: CompareArgs) -> Result<ExitCode> {
    let mut configs = Vec::new();
    for p in &a.config {
        configs.push(RunConfig::load(p)?);
    }
    if !a.mode.is_empty() {
        let base = match configs.len() {
            0 => base_config(None, a.preset)?,
            1 => configs.pop().unwrap(),
            _ => bail!("--mode expands a single base configuration; got {} configs", a.config.len()),
        };
        configs = a.mode.iter().map(|&m| RunConfig { mode: m, ..base.clone() }).collect();
    }
    for c in &mut configs {
        apply_overrides(c, a.trace.as_deref(), a.seed);
    }
    let csv = cmd_compare(&configs)?;
    emit(a.out.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::GenTrace(a) => gen_trace(a),
        Command::AnalyzeSecurity(a) => analyze_security(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("freshmem: {e:#}");
            ExitCode::FAILURE
        }
    }
}
