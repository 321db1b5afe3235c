//! Scenario drivers shared by the focused suites and the acceptance suite.

use std::collections::HashSet;

use freshmem::engine::{EngineConfig, Mode, ProtectionEngine, Record, ReplayOutcome};
use freshmem::params::{BlockAddr, Geometry, SecurityParams};
use freshmem::rng::RandomSource;
use freshmem::trace::{generate, PatternKind, PatternSpec, TraceEvent};
use freshmem::trip::{StoreCounters, VersionStore};

use super::{small_engine, ReferenceMap, PAGE};

pub const PAGES: u64 = 128;
pub const OPS: u64 = 100_000;

const KINDS: [PatternKind; 7] = [
    PatternKind::Sequential,
    PatternKind::PageUniform,
    PatternKind::WriteOnceReadMany,
    PatternKind::HotBlock,
    PatternKind::Zipfian,
    PatternKind::GaussianKv,
    PatternKind::Strided,
];

/// (stealth bits, reset exponent) pairs cycled across traces.
const WIDTHS: [(u32, u32); 4] = [(27, 20), (27, 7), (12, 6), (20, 4)];

fn spec(kind: usize, i: u64) -> PatternSpec {
    PatternSpec {
        write_fraction: [0.3, 0.7, 1.0][i as usize % 3],
        hot_pages: 1 + i % 4,
        hot_blocks: 1 + i % 3,
        seed: 1000 + i * 2 + kind as u64,
        ..PatternSpec::new(KINDS[kind % KINDS.len()], PAGES * PAGE, OPS / 2)
    }
}

/// Trace `i`: two half-length phases of different pattern kinds.
pub fn trace(i: u64) -> Vec<TraceEvent> {
    let first = i as usize % KINDS.len();
    let mut events = generate(&spec(first, i)).unwrap();
    events.extend(generate(&spec(first + 2, i)).unwrap());
    events
}

/// Replays trace `i` against both models; returns the number of mismatches
/// and the store's transition counters.
pub fn run_trace(i: u64) -> (u64, StoreCounters) {
    let (s, r) = WIDTHS[i as usize % WIDTHS.len()];
    let params = SecurityParams::new(s, 37, r).unwrap();
    let seed = 7 + i;
    let mut store = VersionStore::new(Geometry::default(), params, PAGES * PAGE, 1 << 20, seed).unwrap();
    let mut reference = ReferenceMap::new(seed, s, r);
    let mut host = RandomSource::for_stream(seed, 1 << 40);
    let mut mismatches = 0;
    for e in trace(i) {
        if e.is_write() {
            let got = store.update_version(e.addr).unwrap().new_version.get();
            mismatches += (got != reference.update(e.addr)) as u64;
        } else {
            let got = store.read_version(e.addr).unwrap().get();
            mismatches += (got != reference.read(e.addr)) as u64;
        }
        if host.one_in_pow2(12) {
            let page = host.below(PAGES);
            let base = store.reset_page(page).unwrap().new_base.get();
            mismatches += (base != reference.reset_page(page)) as u64;
        }
    }
    for addr in (0..PAGES * PAGE).step_by(64) {
        mismatches += (store.read_version(addr).unwrap().get() != reference.read(addr)) as u64;
    }
    store.check_invariants().unwrap();
    assert_eq!(store.counters().leading_advances, reference.advances, "trace {i}");
    (mismatches, *store.counters())
}

/// Writes one block until `advances` leading-version advances have
/// happened; every write to a lone hot block advances.
pub fn reset_count(reset_exp: u32, advances: u64, seed: u64) -> u64 {
    let params = SecurityParams::new(27, 37, reset_exp).unwrap();
    let mut store = VersionStore::new(Geometry::default(), params, PAGE, 1 << 12, seed).unwrap();
    for _ in 0..advances {
        store.update_version(0).unwrap();
    }
    assert_eq!(store.counters().leading_advances, advances);
    store.counters().resets
}

pub fn functional(cfg: EngineConfig) -> ProtectionEngine {
    ProtectionEngine::new(Mode::Toleo, EngineConfig { functional: true, ..cfg }).unwrap()
}

pub fn stealth(engine: &ProtectionEngine, addr: u64) -> u64 {
    engine.store().unwrap().peek(BlockAddr { page: addr / 4096, block: ((addr % 4096) / 64) as u32 }).get()
}

pub fn payload(i: u64) -> [u8; 64] {
    let mut p = [0u8; 64];
    p[..8].copy_from_slice(&i.to_le_bytes());
    p
}

/// Outcome counts of replays whose captured stealth differs from / equals
/// the current one: (detected, missed, equal_pairs).
pub struct ReplayTally {
    pub differing: u64,
    pub missed: u64,
    pub equal: u64,
}

/// Tries every (captured, current) stealth pair at `stealth_bits` = 4.
pub fn exhaustive_s4(seed: u64) -> (ReplayTally, usize) {
    let params = SecurityParams::new(4, 37, 2).unwrap();
    let mut cfg = small_engine(1, params);
    cfg.store_seed = seed;
    let mut engine = functional(cfg);
    let addr = 0x40;
    let mut captured: Vec<Option<Record>> = vec![None; 16];
    let mut i = 0;
    while captured.iter().any(Option::is_none) {
        engine.functional_write(addr, &payload(i)).unwrap();
        captured[stealth(&engine, addr) as usize] = engine.capture(addr).unwrap();
        i += 1;
    }
    let mut tally = ReplayTally { differing: 0, missed: 0, equal: 0 };
    let mut pairs = HashSet::new();
    let mut currents_seen = [false; 16];
    while currents_seen.iter().any(|s| !s) {
        engine.functional_write(addr, &payload(i)).unwrap();
        i += 1;
        let cur = stealth(&engine, addr);
        if currents_seen[cur as usize] {
            continue;
        }
        currents_seen[cur as usize] = true;
        for (old, rec) in captured.iter().enumerate() {
            let rec = rec.as_ref().unwrap();
            let outcome = engine.inject_replay(addr, rec).unwrap();
            engine.clear_kill_switch();
            pairs.insert((old as u64, cur));
            if old as u64 == cur {
                tally.equal += 1;
            } else {
                tally.differing += 1;
                tally.missed += (outcome == ReplayOutcome::SilentSuccess) as u64;
            }
        }
        assert_eq!(engine.functional_read(addr).unwrap(), payload(i - 1));
    }
    (tally, pairs.len())
}

/// `injections` random replays at the default 27-bit width.
pub fn randomized_s27(injections: u64, seed: u64) -> ReplayTally {
    let mut cfg = small_engine(4, SecurityParams::default());
    cfg.store_seed = seed;
    cfg.key_seed = seed + 1;
    let mut engine = functional(cfg);
    let mut rng = RandomSource::for_stream(seed, 5);
    let mut tally = ReplayTally { differing: 0, missed: 0, equal: 0 };
    for n in 0..injections {
        let addr = rng.below(4 * 64) * 64;
        engine.functional_write(addr, &payload(n)).unwrap();
        let old = engine.capture(addr).unwrap().unwrap();
        let old_stealth = stealth(&engine, addr);
        for k in 0..=rng.below(3) {
            engine.functional_write(addr, &payload(n + k + 1)).unwrap();
        }
        let outcome = engine.inject_replay(addr, &old).unwrap();
        engine.clear_kill_switch();
        if stealth(&engine, addr) == old_stealth {
            tally.equal += 1;
        } else {
            tally.differing += 1;
            tally.missed += (outcome == ReplayOutcome::SilentSuccess) as u64;
        }
    }
    tally
}
