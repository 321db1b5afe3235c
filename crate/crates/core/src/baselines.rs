//! Comparison schemes: no protection, MAC-only integrity, and a Merkle
//! counter tree whose nodes are cached on chip.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cache::SetAssocCache;
use crate::engine::{AccessOutcome, EngineError, Mode, ProtectionEngine};
use crate::trace::TraceEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub arity: u64,
    pub node_bytes: u64,
    pub counters_per_leaf: u64,
    pub root_bytes: u64,
    pub cache_bytes: u64,
    pub cache_ways: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            arity: 8,
            node_bytes: 64,
            counters_per_leaf: 8,
            root_bytes: 3 * 1024,
            cache_bytes: 32 * 1024,
            cache_ways: 16,
        }
    }
}

impl TreeConfig {
    /// Child references held by the on-chip root.
    pub fn root_coverage(&self) -> u64 {
        (self.root_bytes / (self.node_bytes / self.arity)).max(1)
    }
}

/// Off-chip node levels walked by a fully cold verification.
///
/// Counts the leaf nodes needed for `protected_bytes` and divides by the
/// arity until the on-chip root can reference every remaining node.
pub fn tree_depth(config: &TreeConfig, protected_bytes: u64, block_bytes: u64) -> u32 {
    let mut nodes = protected_bytes.div_ceil(block_bytes).div_ceil(config.counters_per_leaf).max(1);
    let cover = config.root_coverage();
    let mut levels = 0;
    while nodes > cover {
        nodes = nodes.div_ceil(config.arity);
        levels += 1;
    }
    levels.max(1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MerkleAccess {
    /// Nodes fetched before a cached ancestor (or the root) was reached.
    pub fetches: u32,
    /// Dirty nodes written back by the fills.
    pub writebacks: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TreeStats {
    pub tree_depth: u32,
    pub accesses: u64,
    pub fetches: u64,
    pub writebacks: u64,
    pub cache_hits: u64,
}

/// Counter tree with a set-associative node cache. Node contents are
/// modeled as freshness counters only; no hashing is performed.
#[derive(Debug, Clone)]
pub struct CounterTree {
    config: TreeConfig,
    block_bytes: u64,
    depth: u32,
    arity_shift: u32,
    cache: SetAssocCache,
    counters: HashMap<u64, u64>,
    stats: TreeStats,
}

impl CounterTree {
    pub fn new(config: TreeConfig, protected_bytes: u64, block_bytes: u64) -> Result<Self, EngineError> {
        if !config.arity.is_power_of_two() || config.arity < 2 || !config.node_bytes.is_power_of_two() {
            return Err(EngineError::Config("tree arity and node size must be powers of two".into()));
        }
        if config.node_bytes < config.arity || config.counters_per_leaf == 0 {
            return Err(EngineError::Config("tree node too small for its arity".into()));
        }
        let depth = tree_depth(&config, protected_bytes, block_bytes);
        Ok(Self {
            config,
            block_bytes,
            depth,
            arity_shift: config.arity.trailing_zeros(),
            cache: SetAssocCache::with_bytes(config.cache_bytes, config.node_bytes, config.cache_ways),
            counters: HashMap::new(),
            stats: TreeStats { tree_depth: depth, ..TreeStats::default() },
        })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn stats(&self) -> &TreeStats {
        &self.stats
    }

    fn node_key(level: u32, index: u64) -> u64 {
        index << 5 | level as u64
    }

    fn node_index(&self, addr: u64, level: u32) -> u64 {
        let leaf = addr / self.block_bytes / self.config.counters_per_leaf;
        leaf >> (self.arity_shift * level)
    }

    /// Freshness counter of the node covering `addr` at `level`.
    pub fn counter(&self, addr: u64, level: u32) -> u64 {
        let key = Self::node_key(level, self.node_index(addr, level));
        self.counters.get(&key).copied().unwrap_or(0)
    }

    /// Verifies (and on a write, updates) the path from `addr`'s leaf toward
    /// the root, stopping at the first cached node.
    pub fn merkle_access(&mut self, addr: u64, is_write: bool) -> MerkleAccess {
        let mut out = MerkleAccess::default();
        let mut fetched = Vec::with_capacity(self.depth as usize);
        let mut hit = None;
        for level in 0..self.depth {
            let key = Self::node_key(level, self.node_index(addr, level));
            if self.cache.touch(key) {
                hit = Some(key);
                break;
            }
            out.fetches += 1;
            fetched.push(key);
        }
        // fill top-down so the leaf ends most recently used
        for &key in fetched.iter().rev() {
            if let Some(ev) = self.cache.insert(key, false) {
                if ev.dirty {
                    out.writebacks += 1;
                }
            }
        }
        if is_write {
            for &key in fetched.iter().chain(hit.iter()) {
                self.cache.mark_dirty(key);
            }
            for level in 0..self.depth {
                let key = Self::node_key(level, self.node_index(addr, level));
                *self.counters.entry(key).or_insert(0) += 1;
            }
        }
        self.stats.accesses += 1;
        self.stats.fetches += out.fetches as u64;
        self.stats.writebacks += out.writebacks as u64;
        self.stats.cache_hits += hit.is_some() as u64;
        out
    }
}

fn require(engine: &ProtectionEngine, mode: Mode) -> Result<(), EngineError> {
    if engine.mode() != mode {
        return Err(EngineError::Config(format!("engine runs {:?}, expected {mode:?}", engine.mode())));
    }
    Ok(())
}

/// Access under confidentiality + integrity only: MACs, no versions.
pub fn ci_access(engine: &mut ProtectionEngine, event: TraceEvent) -> Result<AccessOutcome, EngineError> {
    require(engine, Mode::Ci)?;
    engine.process_access(event)
}

/// Unprotected access: data traffic only.
pub fn none_access(engine: &mut ProtectionEngine, event: TraceEvent) -> Result<AccessOutcome, EngineError> {
    require(engine, Mode::None)?;
    engine.process_access(event)
}

/// Access under MAC integrity with Merkle-tree freshness.
pub fn merkle_engine_access(engine: &mut ProtectionEngine, event: TraceEvent) -> Result<AccessOutcome, EngineError> {
    require(engine, Mode::Merkle)?;
    engine.process_access(event)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TIB: u64 = 1 << 40;

    #[test]
    fn depth_examples() {
        let c = TreeConfig::default();
        assert_eq!(tree_depth(&c, 28 * TIB, 64), 10);
        let big_root = TreeConfig { root_bytes: 64 * 1024, ..c };
        assert_eq!(tree_depth(&big_root, 2 << 20, 64), 1);
        let small_root = TreeConfig { root_bytes: 64, ..c };
        assert_eq!(tree_depth(&small_root, 128 << 20, 64), 5);
    }

    // independent oracle: smallest k with leaves <= cover * arity^k
    fn depth_oracle(protected: u64, root_bytes: u64) -> u32 {
        let leaves = (protected as f64 / 64.0 / 8.0).ceil();
        let cover = (root_bytes / 8) as f64;
        let mut k = 0;
        while leaves > cover * 8f64.powi(k) {
            k += 1;
        }
        (k as u32).max(1)
    }

    #[test]
    fn depth_matches_oracle_over_sizes() {
        for shift in 12..50 {
            for root in [64, 512, 3072, 65536] {
                let c = TreeConfig { root_bytes: root, ..TreeConfig::default() };
                assert_eq!(tree_depth(&c, 1 << shift, 64), depth_oracle(1 << shift, root), "2^{shift} root {root}");
            }
        }
    }

    #[test]
    fn cold_access_walks_full_depth_then_hits() {
        let mut t = CounterTree::new(TreeConfig::default(), 28 * TIB, 64).unwrap();
        let first = t.merkle_access(0, false);
        assert_eq!(first.fetches, 10);
        assert_eq!(t.merkle_access(0, false).fetches, 0);
        // sibling block under the same leaf
        assert_eq!(t.merkle_access(64, false).fetches, 0);
        // different leaf under the same parent: only the leaf is missing
        assert_eq!(t.merkle_access(512, false).fetches, 1);
    }

    #[test]
    fn writes_mark_paths_dirty_and_bump_counters() {
        let cfg = TreeConfig { cache_bytes: 64 * 4, cache_ways: 4, ..TreeConfig::default() };
        let mut t = CounterTree::new(cfg, 1 << 30, 64).unwrap();
        t.merkle_access(0, true);
        assert_eq!(t.counter(0, 0), 1);
        assert_eq!(t.counter(0, t.depth() - 1), 1);
        let mut wb = 0;
        for i in 1..64u64 {
            let a = t.merkle_access(i * (1 << 24), false);
            assert!(a.fetches <= t.depth());
            wb += a.writebacks;
        }
        assert!(wb >= 1);
    }

    #[test]
    fn rejects_bad_arity() {
        let cfg = TreeConfig { arity: 6, ..TreeConfig::default() };
        assert!(CounterTree::new(cfg, 1 << 30, 64).is_err());
    }
}
