//! Trace-driven model of a smart-memory freshness scheme: a trusted device
//! stores compressed per-page stealth versions, the host caches them next to
//! MACs, and the analysis toolkit bounds the probability of nonce reuse and
//! replay success.

pub mod baselines;
pub mod cache;
pub mod config;
pub mod engine;
pub mod params;
pub mod rng;
pub mod security;
pub mod sim;
pub mod stats;
pub mod trace;
pub mod trip;
