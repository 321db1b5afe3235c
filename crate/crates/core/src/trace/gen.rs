//! Deterministic synthetic workloads, one per version-locality regime.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use super::{Op, TraceError, TraceEvent};
use crate::rng::RandomSource;

const BLOCK: u64 = 64;
const PAGE: u64 = 4096;
const BLOCKS_PER_PAGE: u64 = PAGE / BLOCK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    /// Separate read and write cursors stream through the footprint.
    Sequential,
    /// Writes sweep every block of a page in shuffled order before the page
    /// is revisited; reads are uniform.
    PageUniform,
    /// One write per block, then uniform reads.
    WriteOnceReadMany,
    /// Writes hammer a few blocks of a few pages; reads are uniform.
    HotBlock,
    /// Zipf-distributed block popularity for both reads and writes.
    Zipfian,
    /// Key-value records picked from a normal distribution around the
    /// footprint centre; each access touches a whole record.
    GaussianKv,
    /// Fixed stride through the footprint.
    Strided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternSpec {
    pub kind: PatternKind,
    pub footprint_bytes: u64,
    pub op_count: u64,
    pub write_fraction: f64,
    pub base_addr: u64,
    pub zipf_skew: f64,
    pub stride_bytes: u64,
    pub hot_pages: u64,
    pub hot_blocks: u64,
    pub record_bytes: u64,
    /// Standard deviation of the key distribution as a fraction of the
    /// record count.
    pub key_spread: f64,
    pub seed: u64,
}

impl Default for PatternSpec {
    fn default() -> Self {
        Self {
            kind: PatternKind::Sequential,
            footprint_bytes: 1 << 20,
            op_count: 100_000,
            write_fraction: 0.3,
            base_addr: 0,
            zipf_skew: 0.99,
            stride_bytes: PAGE + BLOCK,
            hot_pages: 1,
            hot_blocks: 1,
            record_bytes: 256,
            key_spread: 0.1,
            seed: 1,
        }
    }
}

impl PatternSpec {
    pub fn new(kind: PatternKind, footprint_bytes: u64, op_count: u64) -> Self {
        Self { kind, footprint_bytes, op_count, ..Self::default() }
    }

    fn blocks(&self) -> u64 {
        self.footprint_bytes / BLOCK
    }

    fn pages(&self) -> u64 {
        self.footprint_bytes.div_ceil(PAGE)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: &str| Err(TraceError::Spec(m.into()));
        if self.footprint_bytes == 0 {
            return bad("footprint must be non-zero");
        }
        if self.blocks() == 0 {
            return bad("footprint smaller than one block");
        }
        if self.op_count == 0 {
            return bad("op_count must be positive");
        }
        if !(0.0..=1.0).contains(&self.write_fraction) {
            return bad("write_fraction must lie in [0, 1]");
        }
        if !self.base_addr.is_multiple_of(BLOCK) {
            return bad("base_addr must be block aligned");
        }
        match self.kind {
            PatternKind::Zipfian if (self.zipf_skew.is_nan() || self.zipf_skew <= 0.0) => {
                bad("zipf_skew must be positive")
            }
            PatternKind::Strided if self.stride_bytes == 0 || !self.stride_bytes.is_multiple_of(BLOCK) => {
                bad("stride must be a positive multiple of the block size")
            }
            PatternKind::HotBlock if self.hot_pages == 0 || self.hot_pages > self.pages() => {
                bad("hot_pages must be in 1..=pages in footprint")
            }
            PatternKind::HotBlock if self.hot_blocks == 0 || self.hot_blocks > BLOCKS_PER_PAGE => {
                bad("hot_blocks must be in 1..=64")
            }
            PatternKind::PageUniform | PatternKind::HotBlock if !self.footprint_bytes.is_multiple_of(PAGE) => {
                bad("footprint must be a whole number of pages")
            }
            PatternKind::GaussianKv
                if self.record_bytes == 0
                    || !self.record_bytes.is_multiple_of(BLOCK)
                    || self.record_bytes > self.footprint_bytes =>
            {
                bad("record_bytes must be a block multiple no larger than the footprint")
            }
            PatternKind::GaussianKv if (self.key_spread.is_nan() || self.key_spread <= 0.0) => {
                bad("key_spread must be positive")
            }
            _ => Ok(()),
        }
    }
}

/// Streams the events of `spec`; the output depends only on its fields.
pub fn generate_iter(spec: &PatternSpec) -> Result<Box<dyn Iterator<Item = TraceEvent> + Send>, TraceError> {
    spec.validate()?;
    let s = spec.clone();
    let mut rng = RandomSource::new(s.seed);
    let base = s.base_addr;
    let blocks = s.blocks();
    let n = s.op_count;
    let wf = s.write_fraction;
    let it: Box<dyn Iterator<Item = TraceEvent> + Send> = match s.kind {
        PatternKind::Sequential => {
            let (mut rc, mut wc) = (0u64, 0u64);
            Box::new((0..n).map(move |_| {
                if rng.bernoulli(wf) {
                    wc += 1;
                    TraceEvent::write(base + (wc - 1) % blocks * BLOCK)
                } else {
                    rc += 1;
                    TraceEvent::read(base + (rc - 1) % blocks * BLOCK)
                }
            }))
        }
        PatternKind::PageUniform => {
            let mut sweep = PageSweep::new(s.pages());
            Box::new((0..n).map(move |_| {
                if rng.bernoulli(wf) {
                    TraceEvent::write(base + sweep.next(&mut rng))
                } else {
                    TraceEvent::read(base + rng.below(blocks) * BLOCK)
                }
            }))
        }
        PatternKind::WriteOnceReadMany => Box::new((0..n).map(move |i| {
            if i < blocks {
                TraceEvent::write(base + i * BLOCK)
            } else {
                TraceEvent::read(base + rng.below(blocks) * BLOCK)
            }
        })),
        PatternKind::HotBlock => {
            let mut hot = Vec::new();
            for p in 0..s.hot_pages {
                let mut order: Vec<u64> = (0..BLOCKS_PER_PAGE).collect();
                order.shuffle(rng.as_rng());
                hot.extend(order[..s.hot_blocks as usize].iter().map(|b| p * PAGE + b * BLOCK));
            }
            let mut k = 0usize;
            Box::new((0..n).map(move |_| {
                if rng.bernoulli(wf) {
                    k += 1;
                    TraceEvent::write(base + hot[(k - 1) % hot.len()])
                } else {
                    TraceEvent::read(base + rng.below(blocks) * BLOCK)
                }
            }))
        }
        PatternKind::Zipfian => {
            let zipf = Zipf::new(blocks, s.zipf_skew).map_err(|e| TraceError::Spec(e.to_string()))?;
            Box::new((0..n).map(move |_| {
                let rank = zipf.sample(rng.as_rng()) as u64 - 1;
                let block = scatter(rank, blocks);
                let op = if rng.bernoulli(wf) { Op::Write } else { Op::Read };
                TraceEvent { op, addr: base + block * BLOCK }
            }))
        }
        PatternKind::GaussianKv => {
            let records = s.footprint_bytes / s.record_bytes;
            let per_record = s.record_bytes / BLOCK;
            let centre = records as f64 / 2.0;
            let normal =
                Normal::new(centre, s.key_spread * records as f64).map_err(|e| TraceError::Spec(e.to_string()))?;
            let (mut rec, mut left, mut op) = (0u64, 0u64, Op::Read);
            Box::new((0..n).map(move |_| {
                if left == 0 {
                    let x: f64 = normal.sample(rng.as_rng());
                    rec = x.round().clamp(0.0, (records - 1) as f64) as u64;
                    op = if rng.bernoulli(wf) { Op::Write } else { Op::Read };
                    left = per_record;
                }
                left -= 1;
                let addr = base + rec * s.record_bytes + (per_record - 1 - left) * BLOCK;
                TraceEvent { op, addr }
            }))
        }
        PatternKind::Strided => {
            let span = blocks * BLOCK;
            let stride = s.stride_bytes;
            Box::new((0..n).map(move |i| {
                let addr = base + ((i as u128 * stride as u128) % span as u128) as u64;
                if rng.bernoulli(wf) {
                    TraceEvent::write(addr)
                } else {
                    TraceEvent::read(addr)
                }
            }))
        }
    };
    Ok(it)
}

pub fn generate(spec: &PatternSpec) -> Result<Vec<TraceEvent>, TraceError> {
    Ok(generate_iter(spec)?.collect())
}

/// Spreads Zipf ranks over the footprint with an odd-multiplier bijection on
/// the next power of two, cycle-walking values that land past `n`.
fn scatter(rank: u64, n: u64) -> u64 {
    let m = n.next_power_of_two();
    let mut x = rank;
    loop {
        x = x.wrapping_mul(0x9e37_79b9_7f4a_7c15 | 1).wrapping_add(0x632b_e59b_d9b4_e019) & (m - 1);
        if x < n {
            return x;
        }
    }
}

/// Write cursor for the page-uniform pattern: a shuffled page order per
/// round, each page swept through a shuffled block order.
struct PageSweep {
    pages: Vec<u64>,
    page_pos: usize,
    blocks: Vec<u64>,
    block_pos: usize,
}

impl PageSweep {
    fn new(pages: u64) -> Self {
        Self {
            pages: (0..pages).collect(),
            page_pos: pages as usize,
            blocks: (0..BLOCKS_PER_PAGE).collect(),
            block_pos: BLOCKS_PER_PAGE as usize,
        }
    }

    fn next(&mut self, rng: &mut RandomSource) -> u64 {
        if self.block_pos == self.blocks.len() {
            if self.page_pos == self.pages.len() {
                self.pages.shuffle(rng.as_rng());
                self.page_pos = 0;
            }
            self.page_pos += 1;
            self.blocks.shuffle(rng.as_rng());
            self.block_pos = 0;
        }
        self.block_pos += 1;
        self.pages[self.page_pos - 1] * PAGE + self.blocks[self.block_pos - 1] * BLOCK
    }
}
