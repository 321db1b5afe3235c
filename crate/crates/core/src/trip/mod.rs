//! Trusted version store: per-page stealth versions in flat / uneven / full form.
//!
//! Every protected page owns a 12-byte flat entry. Pages whose blocks drift
//! apart by more than one version borrow an uneven entry (7-bit offsets) from
//! the dynamic region, and pages whose spread exceeds the offset range move to
//! a full entry holding one stealth version per block.
//!
//! Page entries are materialized lazily. An untouched page's initial base is
//! drawn from a per-page stream of the store seed, so results never depend on
//! the order pages are first touched, and arbitrarily large protected ranges
//! cost nothing until written.

mod entry;
mod region;
mod snapshot;

pub use entry::{size_ratio, EntrySizes, FlatEntry, Format, FullEntry, UnevenEntry, FLAT_ENTRY_BYTES, MAX_OFFSET};
pub use region::DynamicRegion;
pub use snapshot::{Snapshot, SnapshotEntry, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::params::{BlockAddr, Geometry, ParamError, SecurityParams, StealthVersion};
use crate::rng::RandomSource;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("page {page} out of range ({pages} pages protected)")]
    PageOutOfRange { page: u64, pages: u64 },
    #[error("device capacity {capacity} B cannot hold the {needed} B flat array")]
    CapacityTooSmall { capacity: u64, needed: u64 },
    #[error("device full: page {page} needs a new {format:?} entry; downgrade pages first")]
    Rejected { page: u64, format: Format },
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

/// Static / dynamic split of the device's memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeviceLayout {
    pub pages: u64,
    pub flat_array_bytes: u64,
    pub dynamic_region_bytes: u64,
}

impl DeviceLayout {
    pub fn plan(geometry: &Geometry, protected_bytes: u64, capacity_bytes: u64) -> Result<Self, StoreError> {
        let pages = geometry.pages_for(protected_bytes);
        let flat_array_bytes = pages * FLAT_ENTRY_BYTES as u64;
        if capacity_bytes <= flat_array_bytes {
            return Err(StoreError::CapacityTooSmall { capacity: capacity_bytes, needed: flat_array_bytes });
        }
        Ok(Self { pages, flat_array_bytes, dynamic_region_bytes: capacity_bytes - flat_array_bytes })
    }
}

/// Which transitions an update went through.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct UpdateEvents {
    pub leading_advanced: bool,
    pub reset_triggered: bool,
    pub upgraded_to_uneven: bool,
    pub normalized: bool,
    pub upgraded_to_full: bool,
}

/// Notification that a page's stealth versions were re-randomized; the host
/// must bump the page's upper version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UvUpdate {
    pub page: u64,
    pub new_base: StealthVersion,
    /// Versions of every block just before the reset.
    pub prior_versions: Vec<StealthVersion>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateResult {
    pub new_version: StealthVersion,
    pub format_after: Format,
    pub events: UpdateEvents,
    /// Flat entry after the update, as carried in the device response.
    pub flat_image: FlatEntry,
    pub uv_update: Option<UvUpdate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UsageStats {
    pub pages_total: u64,
    pub pages_touched: u64,
    pub pages_flat: u64,
    pub pages_uneven: u64,
    pub pages_full: u64,
    pub static_bytes: u64,
    pub dynamic_bytes: u64,
    pub peak_dynamic_bytes: u64,
    /// Static array plus the dynamic high-water mark.
    pub peak_bytes: u64,
    /// (touched pages × flat entry + dynamic bytes) / touched pages.
    pub avg_bytes_per_page: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StoreCounters {
    pub reads: u64,
    pub updates: u64,
    pub leading_advances: u64,
    pub resets: u64,
    pub host_resets: u64,
    pub normalizations: u64,
    pub upgrades_to_uneven: u64,
    pub upgrades_to_full: u64,
    pub rejections: u64,
}

#[derive(Debug, Clone)]
enum Dynamic {
    Uneven(Box<UnevenEntry>),
    Full(Box<FullEntry>),
}

#[derive(Debug, Clone)]
pub struct VersionStore {
    geometry: Geometry,
    params: SecurityParams,
    protected_bytes: u64,
    layout: DeviceLayout,
    sizes: EntrySizes,
    seed: u64,
    flat: HashMap<u64, FlatEntry>,
    dynamic: HashMap<u64, Dynamic>,
    region: DynamicRegion,
    rng: RandomSource,
    pages_uneven: u64,
    pages_full: u64,
    dynamic_bytes: u64,
    peak_dynamic_bytes: u64,
    counters: StoreCounters,
}

impl VersionStore {
    pub fn new(
        geometry: Geometry,
        params: SecurityParams,
        protected_bytes: u64,
        device_capacity_bytes: u64,
        seed: u64,
    ) -> Result<Self, StoreError> {
        params.validate()?;
        geometry.validate(&params)?;
        let layout = DeviceLayout::plan(&geometry, protected_bytes, device_capacity_bytes)?;
        let sizes = EntrySizes::new(geometry.blocks_per_page(), params.stealth_bits);
        let full_slots = sizes.full.div_ceil(sizes.uneven);
        let region = DynamicRegion::new(layout.dynamic_region_bytes / sizes.uneven, full_slots);
        Ok(Self {
            geometry,
            params,
            protected_bytes,
            layout,
            sizes,
            seed,
            flat: HashMap::new(),
            dynamic: HashMap::new(),
            region,
            rng: RandomSource::new(seed),
            pages_uneven: 0,
            pages_full: 0,
            dynamic_bytes: 0,
            peak_dynamic_bytes: 0,
            counters: StoreCounters::default(),
        })
    }

    /// Initial base of `page` for a store created with `seed`.
    pub fn initial_base(seed: u64, page: u64, params: &SecurityParams) -> StealthVersion {
        let mut r = RandomSource::for_stream(seed, page.wrapping_add(1));
        params.stealth(r.draw(params.stealth_bits))
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn params(&self) -> &SecurityParams {
        &self.params
    }

    pub fn layout(&self) -> &DeviceLayout {
        &self.layout
    }

    pub fn sizes(&self) -> &EntrySizes {
        &self.sizes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn protected_bytes(&self) -> u64 {
        self.protected_bytes
    }

    pub fn page_count(&self) -> u64 {
        self.layout.pages
    }

    pub fn counters(&self) -> &StoreCounters {
        &self.counters
    }

    pub fn region(&self) -> &DynamicRegion {
        &self.region
    }

    fn locate(&self, addr: u64) -> Result<BlockAddr, StoreError> {
        Ok(self.geometry.decompose(addr, self.layout.pages * self.geometry.page_bytes)?)
    }

    fn check_page(&self, page: u64) -> Result<(), StoreError> {
        if page >= self.layout.pages {
            return Err(StoreError::PageOutOfRange { page, pages: self.layout.pages });
        }
        Ok(())
    }

    fn full_mask(&self) -> u64 {
        match self.geometry.blocks_per_page() {
            64 => u64::MAX,
            n => (1u64 << n) - 1,
        }
    }

    /// Current flat entry of `page`.
    pub fn flat_entry(&self, page: u64) -> FlatEntry {
        self.flat
            .get(&page)
            .copied()
            .unwrap_or_else(|| FlatEntry::flat(Self::initial_base(self.seed, page, &self.params), 0))
    }

    pub fn is_touched(&self, page: u64) -> bool {
        self.flat.contains_key(&page)
    }

    fn version_in(&self, entry: &FlatEntry, block: u32) -> StealthVersion {
        let p = &self.params;
        match entry.format() {
            Format::Flat => entry.base().add(entry.bitvec() >> block & 1, p),
            Format::Uneven => match self.dynamic.get(&entry.locator()) {
                Some(Dynamic::Uneven(u)) => entry.base().add(u.offsets[block as usize] as u64, p),
                _ => unreachable!("uneven entry without live offsets"),
            },
            Format::Full => match self.dynamic.get(&entry.locator()) {
                Some(Dynamic::Full(f)) => p.stealth(f.versions[block as usize] as u64),
                _ => unreachable!("full entry without live versions"),
            },
        }
    }

    /// READ: the block's current stealth version; the store is not modified.
    pub fn read_version(&mut self, addr: u64) -> Result<StealthVersion, StoreError> {
        let at = self.locate(addr)?;
        self.counters.reads += 1;
        Ok(self.peek(at))
    }

    /// Version lookup without touching counters.
    pub fn peek(&self, at: BlockAddr) -> StealthVersion {
        self.version_in(&self.flat_entry(at.page), at.block)
    }

    pub fn page_versions(&self, page: u64) -> Vec<StealthVersion> {
        let e = self.flat_entry(page);
        (0..self.geometry.blocks_per_page()).map(|b| self.version_in(&e, b)).collect()
    }

    pub fn uneven_entry(&self, page: u64) -> Option<&UnevenEntry> {
        let e = self.flat.get(&page)?;
        match (e.format(), self.dynamic.get(&e.locator())) {
            (Format::Uneven, Some(Dynamic::Uneven(u))) => Some(u),
            _ => None,
        }
    }

    pub fn full_entry(&self, page: u64) -> Option<&FullEntry> {
        let e = self.flat.get(&page)?;
        match (e.format(), self.dynamic.get(&e.locator())) {
            (Format::Full, Some(Dynamic::Full(f))) => Some(f),
            _ => None,
        }
    }

    fn note_dynamic(&mut self, delta: i64) {
        self.dynamic_bytes = self.dynamic_bytes.checked_add_signed(delta).expect("dynamic bytes underflow");
        self.peak_dynamic_bytes = self.peak_dynamic_bytes.max(self.dynamic_bytes);
    }

    fn release(&mut self, entry: &FlatEntry) {
        match entry.format() {
            Format::Flat => {}
            Format::Uneven => {
                self.dynamic.remove(&entry.locator());
                self.region.free_uneven(entry.locator());
                self.pages_uneven -= 1;
                self.note_dynamic(-(self.sizes.uneven as i64));
            }
            Format::Full => {
                self.dynamic.remove(&entry.locator());
                self.region.free_full(entry.locator());
                self.pages_full -= 1;
                self.note_dynamic(-(self.sizes.full as i64));
            }
        }
    }

    fn reject(&mut self, page: u64, format: Format) -> StoreError {
        self.counters.rejections += 1;
        StoreError::Rejected { page, format }
    }

    /// UPDATE: advances the block's version by one, applying format
    /// transitions and the probabilistic reset check.
    pub fn update_version(&mut self, addr: u64) -> Result<UpdateResult, StoreError> {
        let BlockAddr { page, block } = self.locate(addr)?;
        let p = self.params;
        let entry = self.flat_entry(page);
        let b = block as usize;
        let mut events = UpdateEvents::default();

        let (new_entry, new_version) = match entry.format() {
            Format::Flat => {
                let bv = entry.bitvec();
                let bit = 1u64 << block;
                if bv & bit == 0 {
                    events.leading_advanced = bv == 0;
                    let v = entry.base().add(1, &p);
                    let set = bv | bit;
                    if set == self.full_mask() {
                        (FlatEntry::flat(v, 0), v)
                    } else {
                        (FlatEntry::flat(entry.base(), set), v)
                    }
                } else {
                    // the block already holds the page's highest version
                    let loc = self.region.alloc_uneven().ok_or_else(|| self.reject(page, Format::Uneven))?;
                    let mut offsets = [0u8; 64];
                    for (i, o) in offsets.iter_mut().enumerate().take(self.geometry.blocks_per_page() as usize) {
                        *o = (bv >> i & 1) as u8;
                    }
                    offsets[b] += 1;
                    let u = UnevenEntry { offsets };
                    let (lo, hi) = u.min_max(self.geometry.blocks_per_page());
                    self.dynamic.insert(loc, Dynamic::Uneven(Box::new(u)));
                    self.pages_uneven += 1;
                    self.note_dynamic(self.sizes.uneven as i64);
                    self.counters.upgrades_to_uneven += 1;
                    events.upgraded_to_uneven = true;
                    events.leading_advanced = true;
                    (FlatEntry::uneven(entry.base(), lo, hi, loc), entry.base().add(2, &p))
                }
            }
            Format::Uneven => {
                let loc = entry.locator();
                let off = match self.dynamic.get(&loc) {
                    Some(Dynamic::Uneven(u)) => u.offsets[b],
                    _ => unreachable!("uneven entry without live offsets"),
                };
                events.leading_advanced = off == entry.max_off();
                let min = entry.min_off();
                if off < MAX_OFFSET || min > 0 {
                    let blocks = self.geometry.blocks_per_page();
                    let Some(Dynamic::Uneven(u)) = self.dynamic.get_mut(&loc) else { unreachable!() };
                    let mut base = entry.base();
                    if off == MAX_OFFSET {
                        for o in u.offsets.iter_mut().take(blocks as usize) {
                            *o -= min;
                        }
                        base = base.add(min as u64, &p);
                        events.normalized = true;
                    }
                    u.offsets[b] += 1;
                    let v = base.add(u.offsets[b] as u64, &p);
                    let (lo, hi) = u.min_max(blocks);
                    if events.normalized {
                        self.counters.normalizations += 1;
                    }
                    (FlatEntry::uneven(base, lo, hi, loc), v)
                } else {
                    // spread would exceed the 7-bit offset range even after normalizing
                    let floc = self.region.alloc_full().ok_or_else(|| self.reject(page, Format::Full))?;
                    let Some(Dynamic::Uneven(u)) = self.dynamic.remove(&loc) else { unreachable!() };
                    self.region.free_uneven(loc);
                    self.pages_uneven -= 1;
                    let mut versions = [0u32; 64];
                    for (i, v) in versions.iter_mut().enumerate().take(self.geometry.blocks_per_page() as usize) {
                        *v = entry.base().add(u.offsets[i] as u64, &p).get() as u32;
                    }
                    let v = p.stealth(versions[b] as u64 + 1);
                    versions[b] = v.get() as u32;
                    self.dynamic.insert(floc, Dynamic::Full(Box::new(FullEntry { versions })));
                    self.pages_full += 1;
                    self.note_dynamic(self.sizes.full as i64 - self.sizes.uneven as i64);
                    self.counters.upgrades_to_full += 1;
                    events.upgraded_to_full = true;
                    (FlatEntry::full(v, floc), v)
                }
            }
            Format::Full => {
                let loc = entry.locator();
                let Some(Dynamic::Full(f)) = self.dynamic.get_mut(&loc) else {
                    unreachable!("full entry without live versions")
                };
                let cur = p.stealth(f.versions[b] as u64);
                events.leading_advanced = cur == entry.base();
                let v = cur.add(1, &p);
                f.versions[b] = v.get() as u32;
                let leading = if events.leading_advanced { v } else { entry.base() };
                (FlatEntry::full(leading, loc), v)
            }
        };

        self.counters.updates += 1;
        self.flat.insert(page, new_entry);

        if events.leading_advanced {
            self.counters.leading_advances += 1;
            if self.rng.one_in_pow2(p.reset_exp) {
                events.reset_triggered = true;
                let uv = self.reset_entry(page);
                self.counters.resets += 1;
                return Ok(UpdateResult {
                    new_version: uv.new_base,
                    format_after: Format::Flat,
                    events,
                    flat_image: self.flat_entry(page),
                    uv_update: Some(uv),
                });
            }
        }

        Ok(UpdateResult {
            new_version,
            format_after: new_entry.format(),
            events,
            flat_image: new_entry,
            uv_update: None,
        })
    }

    fn reset_entry(&mut self, page: u64) -> UvUpdate {
        let prior_versions = self.page_versions(page);
        let entry = self.flat_entry(page);
        self.release(&entry);
        let new_base = self.params.stealth(self.rng.draw(self.params.stealth_bits));
        self.flat.insert(page, FlatEntry::flat(new_base, 0));
        UvUpdate { page, new_base, prior_versions }
    }

    /// RESET: downgrade `page` to flat with a fresh random base.
    pub fn reset_page(&mut self, page: u64) -> Result<UvUpdate, StoreError> {
        self.check_page(page)?;
        self.counters.host_resets += 1;
        Ok(self.reset_entry(page))
    }

    pub fn usage_stats(&self) -> UsageStats {
        let touched = self.flat.len() as u64;
        let static_bytes = self.layout.flat_array_bytes;
        let avg = if touched == 0 {
            self.sizes.flat as f64
        } else {
            (touched * self.sizes.flat + self.dynamic_bytes) as f64 / touched as f64
        };
        UsageStats {
            pages_total: self.layout.pages,
            pages_touched: touched,
            pages_flat: touched - self.pages_uneven - self.pages_full,
            pages_uneven: self.pages_uneven,
            pages_full: self.pages_full,
            static_bytes,
            dynamic_bytes: self.dynamic_bytes,
            peak_dynamic_bytes: self.peak_dynamic_bytes,
            peak_bytes: static_bytes + self.peak_dynamic_bytes,
            avg_bytes_per_page: avg,
        }
    }

    /// Materialized pages in ascending order.
    pub fn touched_pages(&self) -> Vec<u64> {
        let mut pages: Vec<u64> = self.flat.keys().copied().collect();
        pages.sort_unstable();
        pages
    }

    /// Checks the at-rest invariants of every materialized page.
    pub fn check_invariants(&self) -> Result<(), String> {
        let blocks = self.geometry.blocks_per_page();
        let (mut unevens, mut fulls) = (0, 0);
        for (&page, e) in &self.flat {
            match e.format() {
                Format::Flat => {
                    if e.bitvec() == self.full_mask() || e.bitvec() & !self.full_mask() != 0 {
                        return Err(format!("page {page}: bit-vector {:#x} at rest", e.bitvec()));
                    }
                }
                Format::Uneven => {
                    unevens += 1;
                    let Some(Dynamic::Uneven(u)) = self.dynamic.get(&e.locator()) else {
                        return Err(format!("page {page}: dangling uneven locator"));
                    };
                    let (lo, hi) = u.min_max(blocks);
                    if (lo, hi) != (e.min_off(), e.max_off()) || hi > MAX_OFFSET {
                        return Err(format!("page {page}: min/max {lo}/{hi} vs entry {e:?}"));
                    }
                }
                Format::Full => {
                    fulls += 1;
                    let Some(Dynamic::Full(f)) = self.dynamic.get(&e.locator()) else {
                        return Err(format!("page {page}: dangling full locator"));
                    };
                    let lead = e.base();
                    let p = &self.params;
                    // every block sits at or behind the leading version
                    let behind = f.versions[..blocks as usize]
                        .iter()
                        .map(|&v| lead.distance_from(p.stealth(v as u64), p))
                        .max()
                        .unwrap();
                    if behind >= p.stealth_modulus() / 2 {
                        return Err(format!("page {page}: leading version not the maximum"));
                    }
                }
            }
        }
        if unevens != self.pages_uneven || fulls != self.pages_full {
            return Err("format counters out of sync".into());
        }
        if self.dynamic.len() as u64 != unevens + fulls {
            return Err("orphaned dynamic entries".into());
        }
        let expect = unevens * self.sizes.uneven + fulls * self.sizes.full;
        if expect != self.dynamic_bytes {
            return Err(format!("dynamic bytes {} != {expect}", self.dynamic_bytes));
        }
        let slots = unevens + fulls * self.region.full_slots();
        if slots != self.region.used_slots() {
            return Err(format!("slot accounting {} != {slots}", self.region.used_slots()));
        }
        Ok(())
    }

    /// Little-endian dump of materialized entries; see [`Snapshot`].
    pub fn snapshot(&self) -> Vec<u8> {
        let blocks = self.geometry.blocks_per_page();
        let pages = self.touched_pages();
        let entries = pages
            .iter()
            .map(|&page| {
                let flat = self.flat[&page];
                let dynamic = match self.dynamic.get(&flat.locator()) {
                    Some(Dynamic::Uneven(u)) if flat.format() == Format::Uneven => Some(u.pack(blocks)),
                    Some(Dynamic::Full(f)) if flat.format() == Format::Full => {
                        Some(f.pack(blocks, self.params.stealth_bits))
                    }
                    _ => None,
                };
                SnapshotEntry { page, flat, dynamic }
            })
            .collect();
        Snapshot {
            stealth_bits: self.params.stealth_bits as u8,
            upper_bits: self.params.upper_bits as u8,
            page_count: self.layout.pages,
            blocks_per_page: blocks as u8,
            reset_exp: self.params.reset_exp as u8,
            seed: self.seed,
            entries,
        }
        .encode()
    }
}
