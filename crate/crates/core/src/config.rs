//! Run configuration: one JSON document naming the protection mode, every
//! engine constant and the trace source. Missing fields take the defaults,
//! which reproduce the reference parameterization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineConfig, Mode};
use crate::trace::{self, PatternSpec, TraceError, TraceEvent};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Named parameter sets selectable with `--preset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Reference cache sizes, latencies and 27/37/20 version widths.
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        (s == "paper").then_some(Self::Paper)
    }

    pub fn config(self) -> RunConfig {
        match self {
            Preset::Paper => RunConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSource {
    /// Trace file, text or binary.
    pub path: Option<PathBuf>,
    /// Inline generator spec.
    pub pattern: Option<PatternSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub engine: EngineConfig,
    pub trace: TraceSource,
    /// Overrides the store, key and pattern seeds when set.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Toleo,
            engine: EngineConfig::default(),
            trace: TraceSource::default(),
            seed: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg = Self::from_json(&text)?;
        // trace paths inside a config file are relative to the file
        if let (Some(p), Some(dir)) = (cfg.trace.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Engine configuration with the top-level seed applied.
    pub fn engine_config(&self) -> EngineConfig {
        let mut e = self.engine.clone();
        if let Some(s) = self.seed {
            e.store_seed = s;
            e.key_seed = s.wrapping_add(1);
        }
        e
    }

    /// Pattern spec with the top-level seed applied.
    pub fn pattern(&self) -> Option<PatternSpec> {
        self.trace.pattern.clone().map(|mut p| {
            if let Some(s) = self.seed {
                p.seed = s.wrapping_add(2);
            }
            p
        })
    }

    pub fn load_trace(&self) -> Result<Vec<TraceEvent>, ConfigError> {
        match (&self.trace.path, self.pattern()) {
            (Some(_), Some(_)) => Err(ConfigError::Invalid("trace has both a path and a pattern".into())),
            (Some(p), None) => Ok(trace::load_trace(p)?),
            (None, Some(spec)) => Ok(trace::generate(&spec)?),
            (None, None) => Err(ConfigError::Invalid("no trace: give trace.path, trace.pattern or --trace".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_parameters() {
        let c = Preset::Paper.config();
        assert_eq!(c.mode, Mode::Toleo);
        let e = &c.engine;
        assert_eq!((e.security.stealth_bits, e.security.upper_bits, e.security.reset_exp), (27, 37, 20));
        assert_eq!(e.caches.flat_entries, 256);
        assert_eq!(e.caches.overflow_bytes, 28 * 1024);
        assert_eq!(e.caches.mac_bytes, 32 * 1024);
        assert_eq!((e.latency.local_dram_ns, e.latency.link_ns, e.latency.device_ns), (50.0, 95.0, 15.0));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::from_json(r#"{"mode":"ci","engine":{"caches":{"mac_bytes":65536}}}"#).unwrap();
        assert_eq!(c.mode, Mode::Ci);
        assert_eq!(c.engine.caches.mac_bytes, 65536);
        assert_eq!(c.engine.caches.mac_ways, 16);
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_json(r#"{"mdoe":"ci"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"engine":{"caches":{"mac_kb":1}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mode":"sgx"}"#).is_err());
    }

    #[test]
    fn seed_override_reaches_every_stream() {
        let mut c = RunConfig::default();
        c.trace.pattern = Some(PatternSpec::default());
        c.seed = Some(40);
        assert_eq!(c.engine_config().store_seed, 40);
        assert_eq!(c.engine_config().key_seed, 41);
        assert_eq!(c.pattern().unwrap().seed, 42);
    }

    #[test]
    fn trace_source_must_be_unique() {
        let mut c = RunConfig::default();
        assert!(c.load_trace().is_err());
        c.trace.pattern = Some(PatternSpec::default());
        c.trace.path = Some("x.trace".into());
        assert!(c.load_trace().is_err());
    }
}
