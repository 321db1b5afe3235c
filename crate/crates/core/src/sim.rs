//! Trace-driven simulation runs and the batch commands built on them.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::engine::{AccessOutcome, EngineConfig, EngineError, Mode, ProtectionEngine};
use crate::security::{
    exhaustion_bound, mc_exhaustion, mc_replay, no_reset_prob, replay_analytic, AnalysisError, ExhaustionQuery,
    ExhaustionSim, McEstimate, MC_REPLAY_MAX_BITS,
};
use crate::stats::{csv_header, csv_row, Halt, Stats};
use crate::trace::{encode_binary, generate, save_trace, PatternSpec, TraceError, TraceEvent, TraceFormat};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{0}")]
    Refused(String),
}

/// An engine plus the bookkeeping of one run.
#[derive(Debug, Clone)]
pub struct Simulator {
    engine: ProtectionEngine,
    first_tree_fetches: Option<u32>,
    halt: Option<Halt>,
}

impl Simulator {
    pub fn new(mode: Mode, config: EngineConfig) -> Result<Self, EngineError> {
        Ok(Self { engine: ProtectionEngine::new(mode, config)?, first_tree_fetches: None, halt: None })
    }

    pub fn engine(&self) -> &ProtectionEngine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut ProtectionEngine {
        &mut self.engine
    }

    pub fn halted(&self) -> Option<&Halt> {
        self.halt.as_ref()
    }

    /// Processes one event; the first failure halts the run.
    pub fn step(&mut self, event: TraceEvent) -> Result<AccessOutcome, EngineError> {
        if let Some(h) = &self.halt {
            return Err(EngineError::KillSwitch(h.reason.clone()));
        }
        let index = self.engine.counters().events;
        match self.engine.process_access(event) {
            Ok(o) => {
                if self.first_tree_fetches.is_none() && self.engine.mode() == Mode::Merkle {
                    self.first_tree_fetches = Some(o.tree_fetches);
                }
                Ok(o)
            }
            Err(e) => {
                self.halt = Some(Halt { event_index: index, reason: e.to_string() });
                Err(e)
            }
        }
    }

    /// Runs events until the trace ends or the engine halts.
    pub fn run<I: IntoIterator<Item = TraceEvent>>(&mut self, events: I) -> Result<(), EngineError> {
        for e in events {
            self.step(e)?;
        }
        Ok(())
    }

    pub fn stats(&self) -> Stats {
        Stats::collect(&self.engine, self.first_tree_fetches, self.halt.clone())
    }
}

/// Result of one simulation; `stats.halt` is set if the run stopped early.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub stats: Stats,
    pub error: Option<EngineError>,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

pub fn simulate_events(config: &RunConfig, events: &[TraceEvent]) -> Result<RunReport, RunError> {
    let mut sim = Simulator::new(config.mode, config.engine_config())?;
    let error = sim.run(events.iter().copied()).err();
    Ok(RunReport { stats: sim.stats(), error })
}

/// Runs the configured mode over the configured trace.
pub fn cmd_simulate(config: &RunConfig) -> Result<RunReport, RunError> {
    let events = config.load_trace()?;
    simulate_events(config, &events)
}

/// Writes the trace described by `spec`; the encoding follows the file
/// extension. Returns the number of events written.
pub fn cmd_gen_trace(spec: &PatternSpec, out: &Path) -> Result<usize, TraceError> {
    let events = generate(spec)?;
    save_trace(out, &events, TraceFormat::from_path(out))?;
    Ok(events.len())
}

/// Runs every config over its trace (in parallel) and tabulates one CSV row
/// per config, in input order. All configs must resolve to the same trace.
pub fn cmd_compare(configs: &[RunConfig]) -> Result<String, RunError> {
    if configs.len() < 2 {
        return Err(RunError::Refused("compare needs at least two configurations".into()));
    }
    let traces = configs.iter().map(RunConfig::load_trace).collect::<Result<Vec<_>, _>>()?;
    let reference = encode_binary(&traces[0]);
    if traces[1..].iter().any(|t| encode_binary(t) != reference) {
        return Err(RunError::Refused("configurations do not share one trace".into()));
    }
    let events = &traces[0];
    let reports = configs.par_iter().map(|c| simulate_events(c, events)).collect::<Result<Vec<_>, _>>()?;
    let mut out = csv_header();
    out.push('\n');
    for (i, (c, r)) in configs.iter().zip(&reports).enumerate() {
        let dup = configs.iter().filter(|o| o.mode == c.mode).count() > 1;
        let label = if dup { format!("{}-{i}", c.mode.name()) } else { c.mode.name().to_string() };
        out.push_str(&csv_row(&label, &r.stats));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayQuery {
    pub stealth_bits: u32,
    /// Zero requests the analytic value only.
    pub trials: u64,
    pub seed: u64,
}

impl Default for ReplayQuery {
    fn default() -> Self {
        Self { stealth_bits: 27, trials: 0, seed: 1 }
    }
}

/// Everything `analyze-security` can evaluate in one call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityQuery {
    pub exhaustion: ExhaustionQuery,
    pub mc_exhaustion: Option<ExhaustionSim>,
    pub replay: Option<ReplayQuery>,
}

fn mc_json(m: &McEstimate) -> Value {
    json!({ "estimate": m.estimate, "stderr": m.stderr, "trials": m.trials })
}

/// Evaluates the analytic bounds and any requested Monte-Carlo checks.
pub fn cmd_analyze_security(q: &SecurityQuery) -> Result<Value, RunError> {
    let bound = exhaustion_bound(&q.exhaustion)?;
    let mut report = serde_json::Map::new();
    report.insert(
        "exhaustion".into(),
        json!({
            "query": q.exhaustion,
            "analytic": bound,
            "no_reset_prob": no_reset_prob(q.exhaustion.interval_updates, q.exhaustion.reset_exp),
            "monte_carlo": Value::Null,
        }),
    );
    if let Some(sim) = &q.mc_exhaustion {
        let est = mc_exhaustion(sim)?;
        report.insert(
            "mc_exhaustion".into(),
            json!({ "query": sim, "analytic": sim.analytic(), "monte_carlo": mc_json(&est) }),
        );
    }
    if let Some(r) = &q.replay {
        let mc = match r.trials {
            0 => Value::Null,
            _ if r.stealth_bits > MC_REPLAY_MAX_BITS => {
                return Err(RunError::Analysis(AnalysisError::Intractable(format!(
                    "replay simulation at {} stealth bits is intractable; use at most {MC_REPLAY_MAX_BITS} bits \
                     or set trials to 0 for the analytic value",
                    r.stealth_bits
                ))))
            }
            n => mc_json(&mc_replay(r.stealth_bits, n, r.seed)?),
        };
        report.insert(
            "replay".into(),
            json!({ "query": r, "analytic": replay_analytic(r.stealth_bits), "monte_carlo": mc }),
        );
    }
    Ok(Value::Object(report))
}
