//! Host-side protection engine.
//!
//! Sits between the last-level cache and memory. In `toleo` mode it keeps a
//! flat-version cache (page-indexed, fully associative), an overflow buffer
//! for uneven/full lines and a MAC cache, and talks to the trusted version
//! store with one UPDATE per write and at most one READ per read. The other
//! modes reuse the same data and MAC paths with freshness disabled (`ci`),
//! everything disabled (`none`) or freshness provided by a counter tree
//! (`merkle`).

mod functional;
pub mod layout;

pub use functional::{Record, ReplayOutcome};
pub use layout::MemoryLayout;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{CounterTree, TreeConfig};
use crate::cache::{HitStats, SetAssocCache};
use crate::params::{BlockAddr, Geometry, ParamError, SecurityParams};
use crate::trace::{Op, TraceEvent};
use crate::trip::{Format, StoreError, UvUpdate, VersionStore};

use functional::FunctionalStore;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("address {addr:#x} lies in the MAC region")]
    MacRegion { addr: u64 },
    #[error("address {addr:#x} outside protected data of {limit:#x} bytes")]
    OutOfRange { addr: u64, limit: u64 },
    #[error("upper version of page {page} overflowed")]
    UvOverflow { page: u64 },
    #[error("integrity check failed at {addr:#x}")]
    Integrity { addr: u64 },
    #[error("kill switch engaged: {0}")]
    KillSwitch(String),
    #[error("invalid engine configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    None,
    Ci,
    Toleo,
    Merkle,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Ci => "ci",
            Mode::Toleo => "toleo",
            Mode::Merkle => "merkle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Mode::None, Mode::Ci, Mode::Toleo, Mode::Merkle].into_iter().find(|m| m.name() == s)
    }

    fn has_macs(self) -> bool {
        self != Mode::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub flat_entries: usize,
    pub overflow_bytes: u64,
    pub overflow_line_bytes: u64,
    pub overflow_ways: usize,
    pub mac_bytes: u64,
    pub mac_ways: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            flat_entries: 256,
            overflow_bytes: 28 * 1024,
            overflow_line_bytes: 56,
            overflow_ways: 16,
            mac_bytes: 32 * 1024,
            mac_ways: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    pub local_dram_ns: f64,
    pub link_ns: f64,
    pub device_ns: f64,
    pub cipher_cycles: f64,
    pub clock_ghz: f64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self { local_dram_ns: 50.0, link_ns: 95.0, device_ns: 15.0, cipher_cycles: 40.0, clock_ghz: 2.25 }
    }
}

impl LatencyConfig {
    pub fn pool_ns(&self) -> f64 {
        self.link_ns + self.local_dram_ns
    }

    pub fn device_round_trip_ns(&self) -> f64 {
        self.link_ns + self.device_ns
    }

    pub fn cipher_ns(&self) -> f64 {
        self.cipher_cycles / self.clock_ghz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub geometry: Geometry,
    pub security: SecurityParams,
    pub protected_bytes: u64,
    pub device_capacity_bytes: u64,
    pub caches: CacheConfig,
    pub latency: LatencyConfig,
    pub tree: TreeConfig,
    /// Size of one host↔device message.
    pub device_message_bytes: u64,
    /// Share of pages whose data lives in the pooled memory node.
    pub pool_fraction: f64,
    pub store_seed: u64,
    pub key_seed: u64,
    /// Really encrypt and MAC data so replays can be injected.
    pub functional: bool,
}

pub const TIB: u64 = 1 << 40;
pub const GIB: u64 = 1 << 30;

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            security: SecurityParams::default(),
            // 24.8 TiB of data behind a 168 GiB device
            protected_bytes: 248 * TIB / 10,
            device_capacity_bytes: 168 * GIB,
            caches: CacheConfig::default(),
            latency: LatencyConfig::default(),
            tree: TreeConfig::default(),
            device_message_bytes: 64,
            pool_fraction: 12.7 / (76.8 + 12.7),
            store_seed: 1,
            key_seed: 2,
            functional: false,
        }
    }
}

/// Cost and cache behaviour of one access (or one host-initiated action).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AccessOutcome {
    pub local_bytes: u64,
    pub pool_bytes: u64,
    pub mac_bytes: u64,
    pub device_bytes: u64,
    pub latency_ns: f64,
    pub flat_hit: Option<bool>,
    pub overflow_hit: Option<bool>,
    pub mac_hit: Option<bool>,
    pub device_reads: u32,
    pub device_updates: u32,
    pub device_resets: u32,
    pub tree_fetches: u32,
    pub tree_writebacks: u32,
    pub resets: u32,
    pub reencrypted_blocks: u64,
}

impl AccessOutcome {
    /// Device transactions issued for this access.
    pub fn device_transactions(&self) -> u32 {
        self.device_reads + self.device_updates + self.device_resets
    }

    pub fn data_bytes(&self) -> u64 {
        self.local_bytes + self.pool_bytes
    }
}

/// Running totals; every field is the sum of the matching outcome fields.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EngineCounters {
    pub events: u64,
    pub reads: u64,
    pub writes: u64,
    pub local_bytes: u64,
    pub pool_bytes: u64,
    pub mac_bytes: u64,
    pub device_bytes: u64,
    pub flat: HitStats,
    pub overflow: HitStats,
    pub mac: HitStats,
    pub device_reads: u64,
    pub device_updates: u64,
    pub device_resets: u64,
    pub tree_fetches: u64,
    pub tree_writebacks: u64,
    pub resets: u64,
    pub os_frees: u64,
    pub reencrypted_blocks: u64,
    pub read_latency_ns_sum: f64,
}

impl EngineCounters {
    fn absorb(&mut self, o: &AccessOutcome) {
        self.local_bytes += o.local_bytes;
        self.pool_bytes += o.pool_bytes;
        self.mac_bytes += o.mac_bytes;
        self.device_bytes += o.device_bytes;
        if let Some(h) = o.flat_hit {
            self.flat.record(h);
        }
        if let Some(h) = o.overflow_hit {
            self.overflow.record(h);
        }
        if let Some(h) = o.mac_hit {
            self.mac.record(h);
        }
        self.device_reads += o.device_reads as u64;
        self.device_updates += o.device_updates as u64;
        self.device_resets += o.device_resets as u64;
        self.tree_fetches += o.tree_fetches as u64;
        self.tree_writebacks += o.tree_writebacks as u64;
        self.resets += o.resets as u64;
        self.reencrypted_blocks += o.reencrypted_blocks;
    }

    pub fn avg_read_latency_ns(&self) -> f64 {
        if self.reads == 0 {
            0.0
        } else {
            self.read_latency_ns_sum / self.reads as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    Local,
    Pool,
}

#[derive(Debug, Clone)]
pub struct ProtectionEngine {
    config: EngineConfig,
    mode: Mode,
    layout: MemoryLayout,
    store: Option<VersionStore>,
    tree: Option<CounterTree>,
    flat_cache: SetAssocCache,
    overflow: SetAssocCache,
    mac_cache: SetAssocCache,
    ovf_lines: u64,
    uv: HashMap<u64, u64>,
    counters: EngineCounters,
    functional: Option<FunctionalStore>,
    kill: Option<String>,
}

impl ProtectionEngine {
    pub fn new(mode: Mode, config: EngineConfig) -> Result<Self, EngineError> {
        let g = config.geometry;
        config.security.validate()?;
        g.validate(&config.security)?;
        if config.device_message_bytes == 0 {
            return Err(EngineError::Config("device_message_bytes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&config.pool_fraction) {
            return Err(EngineError::Config("pool_fraction must lie in [0, 1]".into()));
        }
        if config.functional && mode != Mode::Toleo {
            return Err(EngineError::Config("functional mode requires toleo freshness".into()));
        }
        let c = &config.caches;
        if c.flat_entries == 0 || c.overflow_line_bytes == 0 || c.overflow_ways == 0 || c.mac_ways == 0 {
            return Err(EngineError::Config("cache shapes must be non-zero".into()));
        }
        let store = match mode {
            Mode::Toleo => Some(VersionStore::new(
                g,
                config.security,
                config.protected_bytes,
                config.device_capacity_bytes,
                config.store_seed,
            )?),
            _ => None,
        };
        let tree = match mode {
            Mode::Merkle => Some(CounterTree::new(config.tree, config.protected_bytes, g.block_bytes)?),
            _ => None,
        };
        let ovf_lines = store.as_ref().map_or(1, |s| s.region().full_slots());
        Ok(Self {
            layout: MemoryLayout::new(&g, config.protected_bytes),
            mode,
            store,
            tree,
            flat_cache: SetAssocCache::fully_associative(c.flat_entries),
            overflow: SetAssocCache::with_bytes(c.overflow_bytes, c.overflow_line_bytes, c.overflow_ways),
            mac_cache: SetAssocCache::with_bytes(c.mac_bytes, g.block_bytes, c.mac_ways),
            ovf_lines,
            uv: HashMap::new(),
            counters: EngineCounters::default(),
            functional: config.functional.then(|| FunctionalStore::new(config.key_seed)),
            kill: None,
            config,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    pub fn counters(&self) -> &EngineCounters {
        &self.counters
    }

    pub fn store(&self) -> Option<&VersionStore> {
        self.store.as_ref()
    }

    pub fn tree(&self) -> Option<&CounterTree> {
        self.tree.as_ref()
    }

    /// Upper version of `page` as held in its MAC blocks.
    pub fn uv(&self, page: u64) -> u64 {
        self.uv.get(&page).copied().unwrap_or(0)
    }

    pub fn kill_switch(&self) -> Option<&str> {
        self.kill.as_deref()
    }

    /// Re-arms the engine after a kill-switch event (test harness use).
    pub fn clear_kill_switch(&mut self) {
        self.kill = None;
    }

    fn trip(&mut self, diagnostic: String) {
        self.kill.get_or_insert(diagnostic);
    }

    fn check_alive(&self) -> Result<(), EngineError> {
        match &self.kill {
            Some(d) => Err(EngineError::KillSwitch(d.clone())),
            None => Ok(()),
        }
    }

    fn store_ref(&self) -> Result<&VersionStore, EngineError> {
        self.store
            .as_ref()
            .ok_or_else(|| EngineError::Config(format!("{} mode has no version store", self.mode.name())))
    }

    fn locate(&self, addr: u64) -> Result<BlockAddr, EngineError> {
        self.layout.mac_block_addr(addr)?;
        Ok(self.config.geometry.decompose(addr, self.layout.data_bytes)?)
    }

    /// Which memory node holds `page`'s data (and its MACs).
    fn channel(&self, page: u64) -> Channel {
        // splitmix64 finalizer as a stable page hash
        let mut z = page.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        if ((z >> 11) as f64 / (1u64 << 53) as f64) < self.config.pool_fraction {
            Channel::Pool
        } else {
            Channel::Local
        }
    }

    fn channel_latency(&self, ch: Channel) -> f64 {
        match ch {
            Channel::Local => self.config.latency.local_dram_ns,
            Channel::Pool => self.config.latency.pool_ns(),
        }
    }

    fn add_data(out: &mut AccessOutcome, ch: Channel, bytes: u64) {
        match ch {
            Channel::Local => out.local_bytes += bytes,
            Channel::Pool => out.pool_bytes += bytes,
        }
    }

    /// Bytes of a device response carrying `payload` bytes.
    fn framed(&self, payload: u64) -> u64 {
        let m = self.config.device_message_bytes;
        payload.div_ceil(m).max(1) * m
    }

    fn payload(&self, format: Format) -> u64 {
        self.store.as_ref().map_or(0, |s| s.sizes().page_cost(format))
    }

    fn overflow_lines(&self) -> u64 {
        self.ovf_lines
    }

    /// Overflow-buffer tag: page number plus the line's slot within the entry.
    fn overflow_key(&self, page: u64, slot: u64) -> u64 {
        page * self.ovf_lines + slot
    }

    /// Overflow line holding `block`'s version, if the format needs one.
    fn needed_line(&self, format: Format, at: BlockAddr) -> Option<u64> {
        let lines = self.overflow_lines();
        match format {
            Format::Flat => None,
            Format::Uneven => Some(self.overflow_key(at.page, 0)),
            Format::Full => {
                let bpp = self.config.geometry.blocks_per_page() as u64;
                Some(self.overflow_key(at.page, at.block as u64 * lines / bpp))
            }
        }
    }

    fn invalidate_overflow(&mut self, page: u64) {
        for slot in 0..self.overflow_lines() {
            self.overflow.invalidate(self.overflow_key(page, slot));
        }
    }

    /// Installs `page`'s metadata as returned by the device, keeping the
    /// overflow buffer inclusive of the flat cache.
    fn fill_metadata(&mut self, page: u64, format: Format) {
        if let Some(ev) = self.flat_cache.insert(page, false) {
            self.invalidate_overflow(ev.key);
        }
        let lines = match format {
            Format::Flat => 0,
            Format::Uneven => 1,
            Format::Full => self.overflow_lines(),
        };
        for slot in 0..self.overflow_lines() {
            let key = self.overflow_key(page, slot);
            if slot < lines {
                self.overflow.insert(key, false);
            } else {
                self.overflow.invalidate(key);
            }
        }
    }

    fn invalidate_page(&mut self, page: u64) {
        self.flat_cache.invalidate(page);
        self.invalidate_overflow(page);
        let g = self.config.geometry;
        let macs: Vec<u64> = self.layout.page_mac_blocks(&g, page).collect();
        for m in macs {
            self.mac_cache.invalidate(m / g.block_bytes);
        }
    }

    /// MAC-cache access for the block at `addr`; returns the fetch latency
    /// on a miss.
    fn mac_access(&mut self, addr: u64, ch: Channel, write: bool, out: &mut AccessOutcome) -> Result<f64, EngineError> {
        let line = self.layout.mac_block_addr(addr)? / self.config.geometry.block_bytes;
        let hit = self.mac_cache.touch(line);
        out.mac_hit = Some(hit);
        let mut lat = 0.0;
        if !hit {
            out.mac_bytes += self.config.geometry.block_bytes;
            lat = self.channel_latency(ch);
            if let Some(ev) = self.mac_cache.insert(line, write) {
                if ev.dirty {
                    out.mac_bytes += self.config.geometry.block_bytes;
                }
            }
        } else if write {
            self.mac_cache.mark_dirty(line);
        }
        Ok(lat)
    }

    /// Version metadata for a read; returns the device latency if a READ
    /// was needed.
    fn version_read(&mut self, at: BlockAddr, out: &mut AccessOutcome) -> f64 {
        let format = self.store.as_ref().expect("toleo mode").flat_entry(at.page).format();
        let flat_hit = self.flat_cache.touch(at.page);
        out.flat_hit = Some(flat_hit);
        let line = self.needed_line(format, at);
        let line_hit = line.map(|k| flat_hit && self.overflow.touch(k));
        out.overflow_hit = line_hit;
        if flat_hit && line_hit != Some(false) {
            return 0.0;
        }
        out.device_reads += 1;
        out.device_bytes += self.config.device_message_bytes + self.framed(self.payload(format));
        self.fill_metadata(at.page, format);
        self.config.latency.device_round_trip_ns()
    }

    /// Runs one trace event through the active protection scheme.
    pub fn process_access(&mut self, event: TraceEvent) -> Result<AccessOutcome, EngineError> {
        self.check_alive()?;
        let addr = event.addr;
        let at = self.locate(addr)?;
        let ch = self.channel(at.page);
        let block = self.config.geometry.block_bytes;
        let mut out = AccessOutcome::default();
        Self::add_data(&mut out, ch, block);
        let data_lat = self.channel_latency(ch);
        let write = event.op == Op::Write;

        let mut meta_lat = 0.0f64;
        if self.mode.has_macs() {
            meta_lat = meta_lat.max(self.mac_access(addr, ch, write, &mut out)?);
        }
        match self.mode {
            Mode::Toleo if write => {
                let res = match self.store.as_mut().expect("toleo mode").update_version(addr) {
                    Ok(r) => r,
                    Err(e) => {
                        self.trip(format!("device rejected update: {e}"));
                        return Err(e.into());
                    }
                };
                out.device_updates += 1;
                out.device_bytes += self.config.device_message_bytes + self.framed(self.payload(res.format_after));
                match &res.uv_update {
                    Some(uv) => self.apply_uv_update(uv, &mut out)?,
                    None => self.fill_metadata(at.page, res.format_after),
                }
            }
            Mode::Toleo => meta_lat = meta_lat.max(self.version_read(at, &mut out)),
            Mode::Merkle => {
                let tree = self.tree.as_mut().expect("merkle mode");
                let m = tree.merkle_access(addr, write);
                out.tree_fetches = m.fetches;
                out.tree_writebacks = m.writebacks;
                out.device_bytes += (m.fetches + m.writebacks) as u64 * self.config.tree.node_bytes;
                // each level is verified before its child can be trusted
                meta_lat = meta_lat.max(m.fetches as f64 * data_lat);
            }
            Mode::None | Mode::Ci => {}
        }

        if write {
            self.counters.writes += 1;
        } else {
            out.latency_ns =
                data_lat.max(meta_lat) + if self.mode.has_macs() { self.config.latency.cipher_ns() } else { 0.0 };
            self.counters.reads += 1;
            self.counters.read_latency_ns_sum += out.latency_ns;
        }
        self.counters.events += 1;
        self.counters.absorb(&out);
        Ok(out)
    }

    /// Upper-version bump after a stealth reset: re-encrypts the page under
    /// the new full versions and rewrites its MAC blocks.
    pub fn handle_uv_update(&mut self, update: &UvUpdate) -> Result<AccessOutcome, EngineError> {
        self.check_alive()?;
        let mut out = AccessOutcome::default();
        self.apply_uv_update(update, &mut out)?;
        self.counters.absorb(&out);
        Ok(out)
    }

    fn bump_uv(&mut self, page: u64) -> Result<(u64, u64), EngineError> {
        let old = self.uv(page);
        let new = old + 1;
        if new >= self.config.security.uv_limit() {
            self.trip(format!("upper version of page {page} exhausted"));
            return Err(EngineError::UvOverflow { page });
        }
        self.uv.insert(page, new);
        Ok((old, new))
    }

    fn apply_uv_update(&mut self, update: &UvUpdate, out: &mut AccessOutcome) -> Result<(), EngineError> {
        let page = update.page;
        let (_, new_uv) = self.bump_uv(page)?;
        let g = self.config.geometry;
        let blocks = g.blocks_per_page() as u64;
        let mac_blocks = g.page_bytes.div_ceil(g.mac_span_bytes());
        Self::add_data(out, self.channel(page), blocks * g.block_bytes);
        out.mac_bytes += mac_blocks * g.block_bytes;
        out.reencrypted_blocks += blocks;
        out.resets += 1;
        self.invalidate_page(page);
        if self.functional.is_some() {
            self.reencrypt_page(page, &update.prior_versions, new_uv)?;
        }
        Ok(())
    }

    /// OS page free: scrambles the page by bumping its UV and resetting its
    /// stealth versions without re-encrypting.
    pub fn os_free_page(&mut self, page: u64) -> Result<AccessOutcome, EngineError> {
        self.check_alive()?;
        let pages = self.store_ref()?.page_count();
        if page >= pages {
            return Err(StoreError::PageOutOfRange { page, pages }.into());
        }
        let (_, new_uv) = self.bump_uv(page)?;
        self.store.as_mut().expect("checked above").reset_page(page)?;
        let g = self.config.geometry;
        let out = AccessOutcome {
            mac_bytes: g.page_bytes.div_ceil(g.mac_span_bytes()) * g.block_bytes,
            device_bytes: self.config.device_message_bytes,
            device_resets: 1,
            ..AccessOutcome::default()
        };
        self.invalidate_page(page);
        if let Some(f) = self.functional.as_mut() {
            f.relabel_page(&g, page, new_uv);
        }
        self.counters.os_frees += 1;
        self.counters.absorb(&out);
        Ok(out)
    }

    /// No overflow line is valid for a page missing from the flat cache.
    pub fn check_inclusive(&self) -> bool {
        self.overflow.keys().all(|k| self.flat_cache.contains(k / self.ovf_lines))
    }

    pub fn flat_cached(&self, page: u64) -> bool {
        self.flat_cache.contains(page)
    }

    /// Valid overflow lines for `page`.
    pub fn overflow_lines_cached(&self, page: u64) -> usize {
        (0..self.overflow_lines()).filter(|&s| self.overflow.contains(self.overflow_key(page, s))).count()
    }

    pub fn mac_cached(&self, addr: u64) -> bool {
        self.layout
            .mac_block_addr(addr)
            .map(|m| self.mac_cache.contains(m / self.config.geometry.block_bytes))
            .unwrap_or(false)
    }
}
