//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Tolerances are pinned below.

mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::scenarios::{exhaustive_s4, randomized_s27, reset_count, run_trace};
use freshmem::baselines::{tree_depth, TreeConfig};
use freshmem::config::RunConfig;
use freshmem::engine::{Mode, GIB, TIB};
use freshmem::params::{Geometry, SecurityParams};
use freshmem::security::{exhaustion_bound, mc_exhaustion, mc_replay, replay_analytic, ExhaustionQuery, ExhaustionSim};
use freshmem::sim::{cmd_simulate, Simulator};
use freshmem::trace::{generate, PatternKind, PatternSpec};
use freshmem::trip::{size_ratio, DeviceLayout, EntrySizes, FlatEntry, Format};

/// Layout figures are quoted to one decimal place.
const LAYOUT_TOL_GIB: f64 = 0.2 + 1e-9;
const FLAT_ONLY_REL_TOL: f64 = 0.01;
const BOUND_RANGE: (f64, f64) = (1.6e-19, 1.8e-19);
const MC_SIGMAS: f64 = 3.0;
const MC_TRIALS: u64 = 100_000;
const MC_TIME_LIMIT: Duration = Duration::from_secs(120);
const RESET_SIGMAS: f64 = 4.0;

struct Verdict {
    pass: bool,
    detail: String,
}

type Check = fn() -> Verdict;

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn entry_sizes() -> Verdict {
    let sizes = EntrySizes::new(64, 27);
    let flat_bytes = FlatEntry::flat(SecurityParams::default().stealth(0), 0).to_bytes().len() as u64;
    // 7-bit offsets and 27-bit versions for 64 blocks, on top of the flat entry
    let uneven = 12 + 64 * 7 / 8;
    let full = 12 + 64 * 27 / 8;
    let got = (sizes.page_cost(Format::Flat), sizes.page_cost(Format::Uneven), sizes.page_cost(Format::Full));
    let ratios = (size_ratio(4096, got.0), size_ratio(4096, got.1), size_ratio(4096, got.2));
    verdict(
        flat_bytes == 12 && got == (12, uneven, full) && ratios == (341, 60, 18),
        format!("bytes {got:?} ratios {ratios:?}, expected (12, 68, 228) (341, 60, 18)"),
    )
}

fn layout() -> Verdict {
    let g = Geometry::default();
    let big = DeviceLayout::plan(&g, 248 * TIB / 10, 168 * GIB).unwrap();
    let flat = big.flat_array_bytes as f64 / GIB as f64;
    let dynamic = big.dynamic_region_bytes as f64 / GIB as f64;
    let one = DeviceLayout::plan(&g, TIB, 168 * GIB).unwrap();
    let one_gib = one.flat_array_bytes as f64 / GIB as f64;
    let pass = (flat - 74.6).abs() <= LAYOUT_TOL_GIB
        && (dynamic - 93.4).abs() <= LAYOUT_TOL_GIB
        && ((one_gib - 3.0) / 3.0).abs() <= FLAT_ONLY_REL_TOL;
    verdict(
        pass,
        format!("flat {flat:.2} GiB (74.6 ± 0.2), dynamic {dynamic:.2} GiB (93.4 ± 0.2), 1 TiB flat-only {one_gib:.3} GiB (3.00 ± 1%)"),
    )
}

fn probability_bound() -> Verdict {
    let q = ExhaustionQuery::default();
    let b = exhaustion_bound(&q).unwrap();
    // independent evaluation: K intervals, each reset-free with p0
    let k = q.total_updates / q.interval_updates;
    let ln_p0 = q.interval_updates * (-(2f64.powi(-(q.reset_exp as i32)))).ln_1p();
    let oracle = -(k * (-ln_p0.exp()).ln_1p()).exp_m1();
    let pass = (BOUND_RANGE.0..=BOUND_RANGE.1).contains(&b) && ((b - oracle) / oracle).abs() < 1e-9;
    verdict(pass, format!("bound {b:.4e} in [1.6e-19, 1.8e-19], oracle {oracle:.4e}"))
}

fn monte_carlo() -> Verdict {
    let start = Instant::now();
    let scaled = ExhaustionSim { trials: MC_TRIALS, seed: 41, ..ExhaustionSim::default() };
    let companion = ExhaustionSim { stealth_bits: 6, updates_per_address: 256, ..scaled };
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, sim) in [("exhaustion S'=10 R'=5", scaled), ("exhaustion S'=6 R'=5", companion)] {
        let est = mc_exhaustion(&sim).unwrap();
        let z = est.sigmas_from(sim.analytic());
        pass &= z <= MC_SIGMAS && est.trials >= MC_TRIALS;
        parts.push(format!("{name} est {:.4e} vs {:.4e} ({z:.2} sd)", est.estimate, sim.analytic()));
    }
    let est = mc_replay(8, MC_TRIALS, 43).unwrap();
    let z = est.sigmas_from(replay_analytic(8));
    pass &= z <= MC_SIGMAS;
    parts.push(format!("replay S'=8 est {:.5} vs {:.5} ({z:.2} sd)", est.estimate, replay_analytic(8)));
    let elapsed = start.elapsed();
    pass &= elapsed < MC_TIME_LIMIT;
    parts.push(format!("{:.1}s", elapsed.as_secs_f64()));
    verdict(pass, parts.join("; "))
}

fn oracle_equivalence() -> Verdict {
    let mismatches: u64 = (0..100).map(|i| run_trace(i).0).sum();
    verdict(mismatches == 0, format!("100 traces x 1e5 ops x 128 pages, {mismatches} mismatches"))
}

fn toleo_run(kind: PatternKind, pages: u64, ops: u64, hot_pages: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.engine.protected_bytes = 1 << 30;
    c.engine.device_capacity_bytes = 1 << 26;
    c.trace.pattern = Some(PatternSpec { write_fraction: 1.0, hot_pages, ..PatternSpec::new(kind, pages * 4096, ops) });
    c
}

fn format_regimes() -> Verdict {
    let formats = |c: RunConfig| {
        let f = cmd_simulate(&c).unwrap().stats.page_formats;
        (f.flat, f.uneven, f.full)
    };
    let uniform = formats(toleo_run(PatternKind::PageUniform, 64, 64 * 64 * 3, 1));
    let uneven = formats(toleo_run(PatternKind::HotBlock, 8, 64 * 8, 8));
    let full = formats(toleo_run(PatternKind::HotBlock, 8, 129 * 8, 8));
    let pass = uniform == (64, 0, 0) && uneven == (0, 8, 0) && full == (0, 0, 8);
    verdict(
        pass,
        format!("(flat, uneven, full) page_uniform {uniform:?}, hot_block+64 {uneven:?}, hot_block+129 {full:?}"),
    )
}

fn merkle_baseline() -> Verdict {
    let depth = tree_depth(&TreeConfig::default(), 28 * TIB, 64);
    let spec = PatternSpec::new(PatternKind::Sequential, 1 << 22, 20_000);
    let events = generate(&spec).unwrap();
    let mut cfg = RunConfig::default().engine;
    cfg.protected_bytes = 28 * TIB;
    let mut merkle = Simulator::new(Mode::Merkle, cfg.clone()).unwrap();
    let first = merkle.step(events[0]).unwrap().tree_fetches;
    let mut toleo = Simulator::new(Mode::Toleo, cfg).unwrap();
    let mut worst = 0;
    for &e in &events {
        worst = worst.max(toleo.step(e).unwrap().device_transactions());
    }
    verdict(
        depth == 10 && first == 10 && worst <= 1,
        format!("depth {depth}, cold first-access fetches {first}, toleo max device accesses per event {worst}"),
    )
}

fn replay_detection() -> Verdict {
    let (small, pairs) = exhaustive_s4(1);
    let big = randomized_s27(1_000_000, 77);
    let pass = pairs == 256 && small.differing == 240 && small.missed == 0 && big.missed == 0;
    verdict(
        pass,
        format!(
            "S=4: {} differing pairs, {} missed; S=27: {} differing of 1e6, {} missed",
            small.differing, small.missed, big.differing, big.missed
        ),
    )
}

fn reset_statistics() -> Verdict {
    let n = 1_000_000u64;
    let p = 2f64.powi(-7);
    let resets = reset_count(7, n, 5) as f64;
    let mean = n as f64 * p;
    let sd = (mean * (1.0 - p)).sqrt();
    let z = (resets - mean).abs() / sd;
    verdict(z <= RESET_SIGMAS, format!("{resets} resets over 1e6 advances, mean {mean}, {z:.2} sd (limit 4)"))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "mode": "toleo",
        "engine": { "protected_bytes": 1u64 << 30, "device_capacity_bytes": 1u64 << 26 },
        "trace": { "pattern": { "kind": "zipfian", "footprint_bytes": 1 << 22, "op_count": 200000 } },
        "seed": 12
    });
    let path = dir.path().join("run.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let outs: Vec<Vec<u8>> = ["a.json", "b.json"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let status = Command::new(env!("CARGO_BIN_EXE_freshmem"))
                .args(["simulate", "--config"])
                .arg(&path)
                .arg("--out")
                .arg(&out)
                .status()
                .unwrap();
            assert!(status.success());
            std::fs::read(out).unwrap()
        })
        .collect();
    verdict(
        outs[0] == outs[1],
        format!("two simulate runs, {} and {} bytes, identical: {}", outs[0].len(), outs[1].len(), outs[0] == outs[1]),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("entry-size arithmetic", entry_sizes),
        ("device layout arithmetic", layout),
        ("exhaustion probability bound", probability_bound),
        ("scaled Monte-Carlo agreement", monte_carlo),
        ("oracle equivalence", oracle_equivalence),
        ("format-regime guarantees", format_regimes),
        ("merkle baseline", merkle_baseline),
        ("functional replay detection", replay_detection),
        ("reset statistics", reset_statistics),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        failed += !v.pass as u32;
        println!("criterion {:>2} {} {name}: {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() as u32 - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
