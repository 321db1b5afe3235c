//! Shared test fixtures: an uncompressed per-block version map and small
//! engine configurations.

#![allow(dead_code)]

pub mod scenarios;

use std::collections::HashMap;

use freshmem::engine::EngineConfig;
use freshmem::params::SecurityParams;
use freshmem::rng::RandomSource;

pub const PAGE: u64 = 4096;
pub const BLOCK: u64 = 64;

/// Every block's version kept as a plain counter offset from a per-page
/// base. Draws from the same seeded streams as the store: stream `page+1`
/// for initial bases, stream 0 for reset checks and reset bases.
pub struct ReferenceMap {
    seed: u64,
    stealth_bits: u32,
    reset_exp: u32,
    rng: RandomSource,
    pages: HashMap<u64, (u64, [u64; 64])>,
    pub advances: u64,
    pub resets: u64,
}

impl ReferenceMap {
    pub fn new(seed: u64, stealth_bits: u32, reset_exp: u32) -> Self {
        Self {
            seed,
            stealth_bits,
            reset_exp,
            rng: RandomSource::new(seed),
            pages: HashMap::new(),
            advances: 0,
            resets: 0,
        }
    }

    fn mask(&self) -> u64 {
        (1 << self.stealth_bits) - 1
    }

    fn page(&mut self, page: u64) -> &mut (u64, [u64; 64]) {
        let (seed, bits) = (self.seed, self.stealth_bits);
        self.pages.entry(page).or_insert_with(|| (RandomSource::for_stream(seed, page + 1).draw(bits), [0; 64]))
    }

    pub fn read(&mut self, addr: u64) -> u64 {
        let mask = self.mask();
        let b = ((addr % PAGE) / BLOCK) as usize;
        let (base, counts) = *self.page(addr / PAGE);
        (base + counts[b]) & mask
    }

    pub fn update(&mut self, addr: u64) -> u64 {
        let (mask, s, r) = (self.mask(), self.stealth_bits, self.reset_exp);
        let b = ((addr % PAGE) / BLOCK) as usize;
        let page = addr / PAGE;
        let entry = self.page(page);
        let advanced = entry.1[b] == *entry.1.iter().max().unwrap();
        entry.1[b] += 1;
        let v = (entry.0 + entry.1[b]) & mask;
        if advanced {
            self.advances += 1;
            if self.rng.one_in_pow2(r) {
                self.resets += 1;
                let base = self.rng.draw(s);
                self.pages.insert(page, (base, [0; 64]));
                return base;
            }
        }
        v
    }

    pub fn reset_page(&mut self, page: u64) -> u64 {
        let base = self.rng.draw(self.stealth_bits);
        self.pages.insert(page, (base, [0; 64]));
        base
    }
}

/// Engine configuration over a small protected range with ample device
/// capacity.
pub fn small_engine(pages: u64, params: SecurityParams) -> EngineConfig {
    EngineConfig {
        security: params,
        protected_bytes: pages * PAGE,
        device_capacity_bytes: pages * 12 + pages * 5 * 56 + 4096,
        ..EngineConfig::default()
    }
}
