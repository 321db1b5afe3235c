//! Binary dump of a store's materialized entries.
//!
//! ```text
//! header   magic "TRIP" | version u16 | S u8 | U u8 | page_count u64
//!          | blocks_per_page u8 | R u8 | seed u64 | entry_count u64
//! entry    page u64 | flat entry [12] | dynamic_len u16 | packed dynamic entry
//! ```
//!
//! All integers are little-endian. Untouched pages are omitted; their entries
//! are recoverable from the seed.

use super::{FlatEntry, Format, FullEntry, StoreError, UnevenEntry, FLAT_ENTRY_BYTES};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"TRIP";
pub const SNAPSHOT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotEntry {
    pub page: u64,
    pub flat: FlatEntry,
    pub dynamic: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub stealth_bits: u8,
    pub upper_bits: u8,
    pub page_count: u64,
    pub blocks_per_page: u8,
    pub reset_exp: u8,
    pub seed: u64,
    pub entries: Vec<SnapshotEntry>,
}

impl Snapshot {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.push(self.stealth_bits);
        out.push(self.upper_bits);
        out.extend_from_slice(&self.page_count.to_le_bytes());
        out.push(self.blocks_per_page);
        out.push(self.reset_exp);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.page.to_le_bytes());
            out.extend_from_slice(&e.flat.to_bytes());
            let dyn_bytes = e.dynamic.as_deref().unwrap_or(&[]);
            out.extend_from_slice(&(dyn_bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(dyn_bytes);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(StoreError::Snapshot("bad magic".into()));
        }
        let version = r.u16()?;
        if version != SNAPSHOT_VERSION {
            return Err(StoreError::Snapshot(format!("unsupported version {version}")));
        }
        let stealth_bits = r.u8()?;
        let upper_bits = r.u8()?;
        let page_count = r.u64()?;
        let blocks_per_page = r.u8()?;
        let reset_exp = r.u8()?;
        let seed = r.u64()?;
        let n = r.u64()?;
        let mut entries = Vec::new();
        for _ in 0..n {
            let page = r.u64()?;
            let raw: [u8; FLAT_ENTRY_BYTES] = r.take(FLAT_ENTRY_BYTES)?.try_into().unwrap();
            let flat = FlatEntry::from_bytes(&raw)
                .ok_or_else(|| StoreError::Snapshot(format!("page {page}: bad format tag")))?;
            let len = r.u16()? as usize;
            let expect = match flat.format() {
                Format::Flat => 0,
                Format::Uneven => UnevenEntry::packed_bytes(blocks_per_page as u32),
                Format::Full => FullEntry::packed_bytes(blocks_per_page as u32, stealth_bits as u32),
            };
            if len != expect {
                return Err(StoreError::Snapshot(format!("page {page}: dynamic length {len}, expected {expect}")));
            }
            let dynamic = (len > 0).then(|| r.take(len).map(<[u8]>::to_vec)).transpose()?;
            entries.push(SnapshotEntry { page, flat, dynamic });
        }
        if r.pos != bytes.len() {
            return Err(StoreError::Snapshot(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { stealth_bits, upper_bits, page_count, blocks_per_page, reset_exp, seed, entries })
    }

    /// Per-block stealth versions of one snapshot entry.
    pub fn versions(&self, entry: &SnapshotEntry) -> Vec<u64> {
        let blocks = self.blocks_per_page as u32;
        let mask = (1u64 << self.stealth_bits) - 1;
        let base = entry.flat.base().get();
        match entry.flat.format() {
            Format::Flat => (0..blocks).map(|b| (base + (entry.flat.bitvec() >> b & 1)) & mask).collect(),
            Format::Uneven => {
                let u = UnevenEntry::unpack(entry.dynamic.as_deref().unwrap_or(&[]), blocks);
                (0..blocks).map(|b| (base + u.offsets[b as usize] as u64) & mask).collect()
            }
            Format::Full => {
                let f = FullEntry::unpack(entry.dynamic.as_deref().unwrap_or(&[]), blocks, self.stealth_bits as u32);
                (0..blocks).map(|b| f.versions[b as usize] as u64).collect()
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos + n;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| StoreError::Snapshot(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
