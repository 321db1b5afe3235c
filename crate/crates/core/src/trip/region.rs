//! Slot allocator for the device's dynamic region.
//!
//! The region is an array of fixed-size slots (one uneven entry each). Uneven
//! entries grow upward from slot 0; full entries take `full_slots` contiguous
//! slots and grow downward from the top. Freed slots go to per-kind free sets
//! and the watermarks retreat when the outermost allocation is released.

use std::collections::BTreeSet;

#[derive(Debug, Clone)]
pub struct DynamicRegion {
    capacity_slots: u64,
    full_slots: u64,
    low: u64,
    high: u64,
    free_uneven: BTreeSet<u64>,
    free_full: BTreeSet<u64>,
}

impl DynamicRegion {
    pub fn new(capacity_slots: u64, full_slots: u64) -> Self {
        Self {
            capacity_slots,
            full_slots,
            low: 0,
            high: capacity_slots,
            free_uneven: BTreeSet::new(),
            free_full: BTreeSet::new(),
        }
    }

    pub fn capacity_slots(&self) -> u64 {
        self.capacity_slots
    }

    pub fn full_slots(&self) -> u64 {
        self.full_slots
    }

    pub fn can_alloc_uneven(&self) -> bool {
        !self.free_uneven.is_empty() || self.low < self.high
    }

    pub fn can_alloc_full(&self) -> bool {
        !self.free_full.is_empty() || self.high - self.low >= self.full_slots
    }

    pub fn alloc_uneven(&mut self) -> Option<u64> {
        if let Some(slot) = self.free_uneven.pop_first() {
            return Some(slot);
        }
        (self.low < self.high).then(|| {
            self.low += 1;
            self.low - 1
        })
    }

    pub fn alloc_full(&mut self) -> Option<u64> {
        if let Some(slot) = self.free_full.pop_last() {
            return Some(slot);
        }
        (self.high - self.low >= self.full_slots).then(|| {
            self.high -= self.full_slots;
            self.high
        })
    }

    pub fn free_uneven(&mut self, slot: u64) {
        debug_assert!(slot < self.low);
        if slot + 1 == self.low {
            self.low -= 1;
            while self.low > 0 && self.free_uneven.remove(&(self.low - 1)) {
                self.low -= 1;
            }
        } else {
            self.free_uneven.insert(slot);
        }
    }

    pub fn free_full(&mut self, slot: u64) {
        debug_assert!(slot >= self.high);
        if slot == self.high {
            self.high += self.full_slots;
            while self.free_full.remove(&self.high) {
                self.high += self.full_slots;
            }
        } else {
            self.free_full.insert(slot);
        }
    }

    /// Slots currently handed out.
    pub fn used_slots(&self) -> u64 {
        self.low - self.free_uneven.len() as u64 + (self.capacity_slots - self.high)
            - self.free_full.len() as u64 * self.full_slots
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_grow_toward_each_other_until_exhausted() {
        let mut r = DynamicRegion::new(10, 4);
        assert_eq!(r.alloc_full(), Some(6));
        assert_eq!(r.alloc_uneven(), Some(0));
        assert_eq!(r.alloc_uneven(), Some(1));
        assert_eq!(r.alloc_uneven(), Some(2));
        // 3 free slots left between 3 and 6: not enough for a full entry
        assert!(!r.can_alloc_full());
        assert_eq!(r.alloc_full(), None);
        assert_eq!(r.used_slots(), 7);
        for s in 3..6 {
            assert_eq!(r.alloc_uneven(), Some(s));
        }
        assert_eq!(r.alloc_uneven(), None);
    }

    #[test]
    fn freeing_the_edge_retreats_watermarks() {
        let mut r = DynamicRegion::new(16, 4);
        let a = r.alloc_uneven().unwrap();
        let b = r.alloc_uneven().unwrap();
        r.free_uneven(a);
        r.free_uneven(b);
        assert_eq!(r.used_slots(), 0);
        let f1 = r.alloc_full().unwrap();
        let f2 = r.alloc_full().unwrap();
        r.free_full(f2);
        r.free_full(f1);
        assert_eq!(r.used_slots(), 0);
        // whole region is available again
        for _ in 0..4 {
            assert!(r.alloc_full().is_some());
        }
        assert!(r.alloc_uneven().is_none());
    }

    #[test]
    fn interior_frees_are_reused() {
        let mut r = DynamicRegion::new(8, 4);
        let a = r.alloc_uneven().unwrap();
        let _b = r.alloc_uneven().unwrap();
        r.free_uneven(a);
        assert_eq!(r.alloc_uneven(), Some(a));
    }
}
