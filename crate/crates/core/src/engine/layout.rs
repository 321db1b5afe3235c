//! Physical partition of protected memory into data and MAC regions.
//!
//! Each 64-byte MAC block packs the tags of eight consecutive data blocks and
//! carries the page's upper version in its spare bits. The MAC region starts
//! directly after the data region.

use serde::Serialize;

use crate::params::Geometry;

use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryLayout {
    pub data_bytes: u64,
    pub mac_region_bytes: u64,
    block_bytes: u64,
    mac_span: u64,
}

impl MemoryLayout {
    pub fn new(geometry: &Geometry, protected_bytes: u64) -> Self {
        let data_bytes = geometry.pages_for(protected_bytes) * geometry.page_bytes;
        let mac_span = geometry.mac_span_bytes();
        Self {
            data_bytes,
            mac_region_bytes: data_bytes.div_ceil(mac_span) * geometry.block_bytes,
            block_bytes: geometry.block_bytes,
            mac_span,
        }
    }

    pub fn mac_base(&self) -> u64 {
        self.data_bytes
    }

    /// Address of the MAC block covering `data_addr`.
    pub fn mac_block_addr(&self, data_addr: u64) -> Result<u64, EngineError> {
        if data_addr >= self.data_bytes {
            if data_addr < self.data_bytes + self.mac_region_bytes {
                return Err(EngineError::MacRegion { addr: data_addr });
            }
            return Err(EngineError::OutOfRange { addr: data_addr, limit: self.data_bytes });
        }
        Ok(self.mac_base() + data_addr / self.mac_span * self.block_bytes)
    }

    /// MAC blocks holding the tags (and UV copies) of one page.
    pub fn page_mac_blocks(&self, geometry: &Geometry, page: u64) -> impl Iterator<Item = u64> {
        let first = self.mac_base() + page * geometry.page_bytes / self.mac_span * self.block_bytes;
        let n = geometry.page_bytes.div_ceil(self.mac_span);
        let step = self.block_bytes;
        (0..n).map(move |i| first + i * step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> (Geometry, MemoryLayout) {
        let g = Geometry::default();
        (g, MemoryLayout::new(&g, 1 << 20))
    }

    #[test]
    fn groups_of_eight_blocks_share_a_mac_block() {
        let (_, l) = layout();
        let base = l.mac_base();
        for blk in 0..8 {
            assert_eq!(l.mac_block_addr(blk * 64).unwrap(), base);
        }
        for blk in 8..16 {
            assert_eq!(l.mac_block_addr(blk * 64).unwrap(), base + 64);
        }
        assert_eq!(l.mac_block_addr(0x1234).unwrap(), l.mac_block_addr(0x1200).unwrap());
        assert_eq!(l.mac_block_addr(0x13ff).unwrap(), l.mac_block_addr(0x1200).unwrap());
    }

    #[test]
    fn mac_region_is_disjoint_and_an_eighth() {
        let (g, l) = layout();
        assert_eq!(l.mac_region_bytes, l.data_bytes / 8);
        assert!(matches!(l.mac_block_addr(l.data_bytes), Err(EngineError::MacRegion { .. })));
        assert!(matches!(l.mac_block_addr(l.data_bytes * 2), Err(EngineError::OutOfRange { .. })));
        let macs: Vec<u64> = l.page_mac_blocks(&g, 3).collect();
        assert_eq!(macs.len(), 8);
        assert_eq!(macs[0], l.mac_block_addr(3 * 4096).unwrap());
        assert_eq!(macs[7], l.mac_block_addr(4 * 4096 - 1).unwrap());
    }
}
