//! Statistics document emitted after a simulation run.

use serde::{Deserialize, Serialize};

use crate::cache::HitStats;
use crate::engine::{Mode, ProtectionEngine};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channels {
    pub local_bytes: u64,
    pub pool_bytes: u64,
    pub mac_bytes: u64,
    pub device_bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitMiss {
    pub hits: u64,
    pub misses: u64,
}

impl From<HitStats> for HitMiss {
    fn from(h: HitStats) -> Self {
        Self { hits: h.hits, misses: h.misses }
    }
}

impl HitMiss {
    pub fn hit_rate(&self) -> f64 {
        HitStats { hits: self.hits, misses: self.misses }.hit_rate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caches {
    pub flat: HitMiss,
    pub overflow: HitMiss,
    pub mac: HitMiss,
}

/// Touched pages by format.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageFormats {
    pub flat: u64,
    pub uneven: u64,
    pub full: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceUsage {
    pub static_bytes: u64,
    pub dynamic_bytes: u64,
    pub peak_bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transactions {
    pub reads: u64,
    pub writes: u64,
    pub device_reads: u64,
    pub device_updates: u64,
    pub device_resets: u64,
    pub os_frees: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleStats {
    pub tree_depth: u32,
    pub fetches: u64,
    pub writebacks: u64,
    /// Node fetches of the first access of the run.
    pub first_access_fetches: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Halt {
    pub event_index: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mode: Mode,
    pub events: u64,
    pub channels: Channels,
    pub caches: Caches,
    pub resets: u64,
    pub reencrypted_blocks: u64,
    pub avg_read_latency_ns: f64,
    pub page_formats: PageFormats,
    pub device: DeviceUsage,
    pub transactions: Transactions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merkle: Option<MerkleStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halt: Option<Halt>,
}

impl Stats {
    pub fn collect(engine: &ProtectionEngine, first_tree_fetches: Option<u32>, halt: Option<Halt>) -> Self {
        let c = engine.counters();
        let (page_formats, device) = match engine.store() {
            Some(s) => {
                let u = s.usage_stats();
                (
                    PageFormats { flat: u.pages_flat, uneven: u.pages_uneven, full: u.pages_full },
                    DeviceUsage {
                        static_bytes: u.static_bytes,
                        dynamic_bytes: u.dynamic_bytes,
                        peak_bytes: u.peak_bytes,
                    },
                )
            }
            None => Default::default(),
        };
        let merkle = engine.tree().map(|t| MerkleStats {
            tree_depth: t.depth(),
            fetches: t.stats().fetches,
            writebacks: t.stats().writebacks,
            first_access_fetches: first_tree_fetches.unwrap_or(0),
        });
        Self {
            mode: engine.mode(),
            events: c.events,
            channels: Channels {
                local_bytes: c.local_bytes,
                pool_bytes: c.pool_bytes,
                mac_bytes: c.mac_bytes,
                device_bytes: c.device_bytes,
            },
            caches: Caches { flat: c.flat.into(), overflow: c.overflow.into(), mac: c.mac.into() },
            resets: c.resets,
            reencrypted_blocks: c.reencrypted_blocks,
            avg_read_latency_ns: c.avg_read_latency_ns(),
            page_formats,
            device,
            transactions: Transactions {
                reads: c.reads,
                writes: c.writes,
                device_reads: c.device_reads,
                device_updates: c.device_updates,
                device_resets: c.device_resets,
                os_frees: c.os_frees,
            },
            merkle,
            halt,
        }
    }

    pub fn data_bytes(&self) -> u64 {
        self.channels.local_bytes + self.channels.pool_bytes
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("stats serialize");
        s.push('\n');
        s
    }
}

/// Column order of [`csv_row`].
pub const CSV_COLUMNS: &[&str] = &[
    "mode",
    "events",
    "reads",
    "writes",
    "local_bytes",
    "pool_bytes",
    "mac_bytes",
    "device_bytes",
    "device_to_data_ratio",
    "flat_hit_rate",
    "overflow_hit_rate",
    "mac_hit_rate",
    "device_reads",
    "device_updates",
    "tree_fetches",
    "resets",
    "reencrypted_blocks",
    "avg_read_latency_ns",
    "pages_flat",
    "pages_uneven",
    "pages_full",
    "static_bytes",
    "dynamic_bytes",
    "peak_bytes",
];

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

pub fn csv_row(label: &str, s: &Stats) -> String {
    let data = s.data_bytes();
    let ratio = if data == 0 { 0.0 } else { s.channels.device_bytes as f64 / data as f64 };
    let fields = [
        label.to_string(),
        s.events.to_string(),
        s.transactions.reads.to_string(),
        s.transactions.writes.to_string(),
        s.channels.local_bytes.to_string(),
        s.channels.pool_bytes.to_string(),
        s.channels.mac_bytes.to_string(),
        s.channels.device_bytes.to_string(),
        format!("{ratio:.6}"),
        format!("{:.6}", s.caches.flat.hit_rate()),
        format!("{:.6}", s.caches.overflow.hit_rate()),
        format!("{:.6}", s.caches.mac.hit_rate()),
        s.transactions.device_reads.to_string(),
        s.transactions.device_updates.to_string(),
        s.merkle.map_or(0, |m| m.fetches).to_string(),
        s.resets.to_string(),
        s.reencrypted_blocks.to_string(),
        format!("{:.3}", s.avg_read_latency_ns),
        s.page_formats.flat.to_string(),
        s.page_formats.uneven.to_string(),
        s.page_formats.full.to_string(),
        s.device.static_bytes.to_string(),
        s.device.dynamic_bytes.to_string(),
        s.device.peak_bytes.to_string(),
    ];
    fields.join(",")
}
