//! Probability of stealth-version reuse and of replay success, analytic and
//! Monte Carlo.
//!
//! All products of per-update probabilities are evaluated as `exp(n·ln1p(−p))`
//! so that bounds near 1e-19 stay exact in double precision.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomSource;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("invalid query: {0}")]
    Query(String),
    #[error("{0}")]
    Intractable(String),
}

/// Probability that none of `n` independent checks fires, each firing with
/// probability `2^-reset_exp`.
pub fn no_reset_prob(n: f64, reset_exp: u32) -> f64 {
    if n <= 0.0 {
        return 1.0;
    }
    if reset_exp == 0 {
        return 0.0;
    }
    (n * (-(2f64.powi(-(reset_exp as i32)))).ln_1p()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExhaustionQuery {
    pub total_updates: f64,
    pub interval_updates: f64,
    pub interval_count: f64,
    pub reset_exp: u32,
}

impl Default for ExhaustionQuery {
    fn default() -> Self {
        Self {
            total_updates: 2f64.powi(56),
            interval_updates: 2f64.powi(26),
            interval_count: 2f64.powi(30),
            reset_exp: 20,
        }
    }
}

impl ExhaustionQuery {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.interval_updates >= 0.0 && self.interval_count >= 1.0) {
            return Err(AnalysisError::Query("interval_updates must be >= 0 and interval_count >= 1".into()));
        }
        let product = self.interval_updates * self.interval_count;
        if (product - self.total_updates).abs() > 1e-9 * self.total_updates.max(1.0) {
            return Err(AnalysisError::Query(format!(
                "interval_updates × interval_count = {product} but total_updates = {}",
                self.total_updates
            )));
        }
        Ok(())
    }

    /// Query with `total_updates` derived from the other two fields.
    pub fn with_intervals(interval_updates: f64, interval_count: f64, reset_exp: u32) -> Self {
        Self { total_updates: interval_updates * interval_count, interval_updates, interval_count, reset_exp }
    }
}

/// Probability that at least one of `interval_count` intervals of
/// `interval_updates` updates sees no reset.
pub fn exhaustion_bound(q: &ExhaustionQuery) -> Result<f64, AnalysisError> {
    q.validate()?;
    let p0 = no_reset_prob(q.interval_updates, q.reset_exp);
    if p0 >= 1.0 {
        return Ok(1.0);
    }
    Ok(-(q.interval_count * (-p0).ln_1p()).exp_m1())
}

/// Success fraction with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub trials: u64,
    pub successes: u64,
}

impl McEstimate {
    fn from_counts(successes: u64, trials: u64) -> Self {
        let p = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        let stderr = if trials == 0 { 0.0 } else { (p * (1.0 - p) / trials as f64).sqrt() };
        Self { estimate: p, stderr, trials, successes }
    }

    /// Distance from `expected` in units of the binomial standard deviation
    /// implied by `expected` itself. A zero-width null with a matching
    /// estimate counts as zero distance.
    pub fn sigmas_from(&self, expected: f64) -> f64 {
        let sigma = (expected * (1.0 - expected) / self.trials as f64).sqrt();
        let d = (self.estimate - expected).abs();
        if d == 0.0 {
            0.0
        } else if sigma == 0.0 {
            f64::INFINITY
        } else {
            d / sigma
        }
    }
}

const CHUNK_TRIALS: u64 = 1024;

/// Runs `trials` Bernoulli trials split into fixed chunks, chunk `c` drawing
/// from stream `c + 1` of `seed`; the result is independent of thread count.
fn run_trials<F>(trials: u64, seed: u64, trial: F) -> McEstimate
where
    F: Fn(&mut RandomSource) -> bool + Sync,
{
    let chunks = trials.div_ceil(CHUNK_TRIALS);
    let successes: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = RandomSource::for_stream(seed, c + 1);
            let n = CHUNK_TRIALS.min(trials - c * CHUNK_TRIALS);
            (0..n).filter(|_| trial(&mut rng)).count() as u64
        })
        .sum();
    McEstimate::from_counts(successes, trials)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExhaustionSim {
    pub stealth_bits: u32,
    pub reset_exp: u32,
    pub addresses: u64,
    pub updates_per_address: u64,
    pub trials: u64,
    pub seed: u64,
}

impl Default for ExhaustionSim {
    fn default() -> Self {
        Self { stealth_bits: 10, reset_exp: 5, addresses: 1, updates_per_address: 4096, trials: 100_000, seed: 1 }
    }
}

/// Upper limit on simulated updates (`trials × addresses × updates`).
pub const MC_UPDATE_BUDGET: u128 = 1 << 36;

impl ExhaustionSim {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.stealth_bits == 0 || self.stealth_bits > 20 {
            return Err(AnalysisError::Intractable(format!(
                "stealth width {} cannot be simulated; use 1..=20 bits or the analytic bound",
                self.stealth_bits
            )));
        }
        if self.reset_exp > 63 {
            return Err(AnalysisError::Query("reset exponent must be below 64".into()));
        }
        let work = self.trials as u128 * self.addresses as u128 * self.updates_per_address as u128;
        if work > MC_UPDATE_BUDGET {
            return Err(AnalysisError::Intractable(format!(
                "{work} simulated updates exceed the budget of {MC_UPDATE_BUDGET}; reduce trials, addresses or updates"
            )));
        }
        Ok(())
    }

    /// Probability that one trial sees a repeated stealth value.
    ///
    /// A repeat needs `2^S` consecutive updates without a reset after an
    /// interval start. `u[n]`, the chance that `n` updates contain no such
    /// run, follows `u[n] = u[n-1] − p·a^m·u[n-m-1]` with `a = 1 − p`.
    pub fn analytic(&self) -> f64 {
        let n = self.updates_per_address;
        let m = 1u64 << self.stealth_bits;
        if self.reset_exp == 0 || n < m {
            return 0.0;
        }
        let p = 2f64.powi(-(self.reset_exp as i32));
        let am = (m as f64 * (-p).ln_1p()).exp();
        let (n, m) = (n as usize, m as usize);
        let mut u = vec![1.0f64; n + 1];
        u[m] = 1.0 - am;
        for k in m + 1..=n {
            u[k] = u[k - 1] - p * am * u[k - m - 1];
        }
        let none = u[n].clamp(0.0, 1.0);
        -(self.addresses as f64 * none.ln()).exp_m1()
    }
}

/// Simulates the stealth counters of `addresses` blocks, each starting at a
/// random value, incrementing per update and re-randomizing with probability
/// `2^-R`; a trial succeeds if any counter returns to its interval's start
/// value before the next reset.
pub fn mc_exhaustion(sim: &ExhaustionSim) -> Result<McEstimate, AnalysisError> {
    sim.validate()?;
    let s = sim.stealth_bits;
    let mask = (1u64 << s) - 1;
    let r = sim.reset_exp;
    Ok(run_trials(sim.trials, sim.seed, |rng| {
        if r == 0 {
            return false;
        }
        for _ in 0..sim.addresses {
            let mut v = rng.draw(s);
            let mut start = v;
            for _ in 0..sim.updates_per_address {
                if rng.one_in_pow2(r) {
                    v = rng.draw(s);
                    start = v;
                } else {
                    v = (v + 1) & mask;
                    if v == start {
                        return true;
                    }
                }
            }
        }
        false
    }))
}

/// Chance that a replayed record's stealth version matches the current one.
pub fn replay_analytic(stealth_bits: u32) -> f64 {
    2f64.powi(-(stealth_bits as i32))
}

/// Largest stealth width accepted by [`mc_replay`].
pub const MC_REPLAY_MAX_BITS: u32 = 20;

/// Captures a record at a uniform past stealth value and replays it against
/// an independent uniform current value.
pub fn mc_replay(stealth_bits: u32, trials: u64, seed: u64) -> Result<McEstimate, AnalysisError> {
    if stealth_bits == 0 || stealth_bits > MC_REPLAY_MAX_BITS {
        return Err(AnalysisError::Intractable(format!(
            "replay simulation needs 1..={MC_REPLAY_MAX_BITS} stealth bits (got {stealth_bits}); \
             wider versions are reported analytically"
        )));
    }
    Ok(run_trials(trials, seed, |rng| rng.draw(stealth_bits) == rng.draw(stealth_bits)))
}
