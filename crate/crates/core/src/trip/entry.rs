//! Packed page-metadata entries.
//!
//! A flat entry is 96 bits:
//!
//! ```text
//!  bits   0..2    format tag (0 flat, 1 uneven, 2 full)
//!  bits   2..29   base stealth version (leading version for full pages)
//!  bits  29..93   64-bit payload
//!                   flat:   coverage bit-vector, one bit per block
//!                   uneven: locator [0..48), min offset [50..57), max offset [57..64)
//!                   full:   locator [0..48)
//!  bits  93..96   unused
//! ```

use crate::params::{StealthVersion, FLAT_BASE_FIELD_BITS};

pub const FLAT_ENTRY_BYTES: usize = 12;
pub const OFFSET_BITS: u32 = 7;
pub const MAX_OFFSET: u8 = (1 << OFFSET_BITS) - 1;
pub const LOCATOR_BITS: u32 = 48;

const TAG_SHIFT: u32 = 0;
const BASE_SHIFT: u32 = 2;
const PAYLOAD_SHIFT: u32 = BASE_SHIFT + FLAT_BASE_FIELD_BITS;
const MIN_SHIFT: u32 = 50;
const MAX_SHIFT: u32 = 57;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Flat,
    Uneven,
    Full,
}

impl Format {
    fn tag(self) -> u128 {
        match self {
            Format::Flat => 0,
            Format::Uneven => 1,
            Format::Full => 2,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlatEntry {
    bits: u128,
}

impl std::fmt::Debug for FlatEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_struct("FlatEntry");
        d.field("format", &self.format()).field("base", &self.base_raw());
        match self.format() {
            Format::Flat => d.field("bitvec", &format_args!("{:#018x}", self.bitvec())),
            Format::Uneven => {
                d.field("min_off", &self.min_off()).field("max_off", &self.max_off()).field("locator", &self.locator())
            }
            Format::Full => d.field("locator", &self.locator()),
        };
        d.finish()
    }
}

fn field(v: u128, shift: u32, bits: u32) -> u64 {
    ((v >> shift) & ((1u128 << bits) - 1)) as u64
}

impl FlatEntry {
    fn assemble(format: Format, base: StealthVersion, payload: u64) -> Self {
        debug_assert!(base.get() < 1 << FLAT_BASE_FIELD_BITS);
        let bits =
            (format.tag() << TAG_SHIFT) | ((base.get() as u128) << BASE_SHIFT) | ((payload as u128) << PAYLOAD_SHIFT);
        Self { bits }
    }

    pub fn flat(base: StealthVersion, bitvec: u64) -> Self {
        Self::assemble(Format::Flat, base, bitvec)
    }

    pub fn uneven(base: StealthVersion, min_off: u8, max_off: u8, locator: u64) -> Self {
        debug_assert!(min_off <= max_off && max_off <= MAX_OFFSET);
        debug_assert!(locator < 1 << LOCATOR_BITS);
        let payload = locator | (min_off as u64) << MIN_SHIFT | (max_off as u64) << MAX_SHIFT;
        Self::assemble(Format::Uneven, base, payload)
    }

    pub fn full(leading: StealthVersion, locator: u64) -> Self {
        debug_assert!(locator < 1 << LOCATOR_BITS);
        Self::assemble(Format::Full, leading, locator)
    }

    pub fn format(&self) -> Format {
        match field(self.bits, TAG_SHIFT, 2) {
            0 => Format::Flat,
            1 => Format::Uneven,
            _ => Format::Full,
        }
    }

    fn base_raw(&self) -> u64 {
        field(self.bits, BASE_SHIFT, FLAT_BASE_FIELD_BITS)
    }

    /// Shared base (flat/uneven) or leading version (full).
    pub fn base(&self) -> StealthVersion {
        StealthVersion::raw(self.base_raw())
    }

    fn payload(&self) -> u64 {
        field(self.bits, PAYLOAD_SHIFT, 64)
    }

    pub fn bitvec(&self) -> u64 {
        self.payload()
    }

    pub fn locator(&self) -> u64 {
        self.payload() & ((1 << LOCATOR_BITS) - 1)
    }

    pub fn min_off(&self) -> u8 {
        ((self.payload() >> MIN_SHIFT) & MAX_OFFSET as u64) as u8
    }

    pub fn max_off(&self) -> u8 {
        ((self.payload() >> MAX_SHIFT) & MAX_OFFSET as u64) as u8
    }

    pub fn to_bytes(&self) -> [u8; FLAT_ENTRY_BYTES] {
        let le = self.bits.to_le_bytes();
        let mut out = [0u8; FLAT_ENTRY_BYTES];
        out.copy_from_slice(&le[..FLAT_ENTRY_BYTES]);
        out
    }

    pub fn from_bytes(bytes: &[u8; FLAT_ENTRY_BYTES]) -> Option<Self> {
        let mut le = [0u8; 16];
        le[..FLAT_ENTRY_BYTES].copy_from_slice(bytes);
        let e = Self { bits: u128::from_le_bytes(le) };
        (field(e.bits, TAG_SHIFT, 2) != 3).then_some(e)
    }
}

/// Per-block 7-bit offsets from the flat entry's base.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnevenEntry {
    pub offsets: [u8; 64],
}

impl UnevenEntry {
    pub fn packed_bytes(blocks: u32) -> usize {
        (blocks as usize * OFFSET_BITS as usize).div_ceil(8)
    }

    pub fn min_max(&self, blocks: u32) -> (u8, u8) {
        let live = &self.offsets[..blocks as usize];
        (*live.iter().min().unwrap(), *live.iter().max().unwrap())
    }

    pub fn pack(&self, blocks: u32) -> Vec<u8> {
        let mut w = BitWriter::new(Self::packed_bytes(blocks));
        for &o in &self.offsets[..blocks as usize] {
            w.put(o as u64, OFFSET_BITS);
        }
        w.finish()
    }

    pub fn unpack(bytes: &[u8], blocks: u32) -> Self {
        let mut r = BitReader::new(bytes);
        let mut offsets = [0u8; 64];
        for o in offsets.iter_mut().take(blocks as usize) {
            *o = r.take(OFFSET_BITS) as u8;
        }
        Self { offsets }
    }
}

/// Uncompressed per-block stealth versions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FullEntry {
    pub versions: [u32; 64],
}

impl FullEntry {
    pub fn packed_bytes(blocks: u32, stealth_bits: u32) -> usize {
        (blocks as usize * stealth_bits as usize).div_ceil(8)
    }

    pub fn pack(&self, blocks: u32, stealth_bits: u32) -> Vec<u8> {
        let mut w = BitWriter::new(Self::packed_bytes(blocks, stealth_bits));
        for &v in &self.versions[..blocks as usize] {
            w.put(v as u64, stealth_bits);
        }
        w.finish()
    }

    pub fn unpack(bytes: &[u8], blocks: u32, stealth_bits: u32) -> Self {
        let mut r = BitReader::new(bytes);
        let mut versions = [0u32; 64];
        for v in versions.iter_mut().take(blocks as usize) {
            *v = r.take(stealth_bits) as u32;
        }
        Self { versions }
    }
}

/// Entry sizes in bytes for a given page shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntrySizes {
    pub flat: u64,
    pub uneven: u64,
    pub full: u64,
}

impl EntrySizes {
    pub fn new(blocks_per_page: u32, stealth_bits: u32) -> Self {
        Self {
            flat: FLAT_ENTRY_BYTES as u64,
            uneven: UnevenEntry::packed_bytes(blocks_per_page) as u64,
            full: FullEntry::packed_bytes(blocks_per_page, stealth_bits) as u64,
        }
    }

    /// Device bytes consumed by one page in `format`, flat entry included.
    pub fn page_cost(&self, format: Format) -> u64 {
        match format {
            Format::Flat => self.flat,
            Format::Uneven => self.flat + self.uneven,
            Format::Full => self.flat + self.full,
        }
    }
}

/// Data-to-metadata ratio rounded to the nearest integer, e.g. 4096/12 -> 341.
pub fn size_ratio(page_bytes: u64, entry_bytes: u64) -> u64 {
    (page_bytes + entry_bytes / 2) / entry_bytes
}

struct BitWriter {
    buf: Vec<u8>,
    pos: usize,
}

impl BitWriter {
    fn new(bytes: usize) -> Self {
        Self { buf: vec![0; bytes], pos: 0 }
    }

    fn put(&mut self, value: u64, bits: u32) {
        for i in 0..bits {
            if value >> i & 1 == 1 {
                self.buf[self.pos / 8] |= 1 << (self.pos % 8);
            }
            self.pos += 1;
        }
    }

    fn finish(self) -> Vec<u8> {
        self.buf
    }
}

struct BitReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, bits: u32) -> u64 {
        let mut v = 0u64;
        for i in 0..bits {
            let bit = self.buf.get(self.pos / 8).map_or(0, |b| (b >> (self.pos % 8)) & 1);
            v |= (bit as u64) << i;
            self.pos += 1;
        }
        v
    }
}
