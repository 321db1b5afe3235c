//! Set-associative LRU cache over `u64` keys, tracking only tags and dirty bits.

use serde::Serialize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct HitStats {
    pub hits: u64,
    pub misses: u64,
}

impl HitStats {
    pub fn record(&mut self, hit: bool) {
        if hit {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
    }

    pub fn hit_rate(&self) -> f64 {
        let n = self.hits + self.misses;
        if n == 0 {
            0.0
        } else {
            self.hits as f64 / n as f64
        }
    }
}

/// A line pushed out by an insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evicted {
    pub key: u64,
    pub dirty: bool,
}

#[derive(Debug, Clone, Copy)]
struct Line {
    key: u64,
    dirty: bool,
    stamp: u64,
}

#[derive(Debug, Clone)]
pub struct SetAssocCache {
    sets: Vec<Vec<Line>>,
    ways: usize,
    clock: u64,
}

impl SetAssocCache {
    /// `sets × ways` lines; `sets` must be non-zero.
    pub fn new(sets: usize, ways: usize) -> Self {
        assert!(sets > 0 && ways > 0, "cache needs at least one set and one way");
        Self { sets: vec![Vec::with_capacity(ways); sets], ways, clock: 0 }
    }

    pub fn fully_associative(entries: usize) -> Self {
        Self::new(1, entries)
    }

    /// Shape for `total_bytes` of `line_bytes` lines at `ways` associativity.
    pub fn with_bytes(total_bytes: u64, line_bytes: u64, ways: usize) -> Self {
        let lines = (total_bytes / line_bytes).max(1) as usize;
        let ways = ways.min(lines);
        Self::new((lines / ways).max(1), ways)
    }

    pub fn capacity(&self) -> usize {
        self.sets.len() * self.ways
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn set_count(&self) -> usize {
        self.sets.len()
    }

    pub fn len(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn set_of(&self, key: u64) -> usize {
        (key % self.sets.len() as u64) as usize
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn contains(&self, key: u64) -> bool {
        self.sets[self.set_of(key)].iter().any(|l| l.key == key)
    }

    /// Looks `key` up, refreshing its LRU position on a hit.
    pub fn touch(&mut self, key: u64) -> bool {
        let now = self.tick();
        let s = self.set_of(key);
        match self.sets[s].iter_mut().find(|l| l.key == key) {
            Some(l) => {
                l.stamp = now;
                true
            }
            None => false,
        }
    }

    /// Installs `key` as most recently used, evicting the set's LRU line if
    /// full. An already-present key is refreshed and its dirty bit or-ed.
    pub fn insert(&mut self, key: u64, dirty: bool) -> Option<Evicted> {
        let now = self.tick();
        let s = self.set_of(key);
        let ways = self.ways;
        let set = &mut self.sets[s];
        if let Some(l) = set.iter_mut().find(|l| l.key == key) {
            l.stamp = now;
            l.dirty |= dirty;
            return None;
        }
        let line = Line { key, dirty, stamp: now };
        if set.len() < ways {
            set.push(line);
            return None;
        }
        let (victim, _) = set.iter().enumerate().min_by_key(|(_, l)| l.stamp).unwrap();
        let old = std::mem::replace(&mut set[victim], line);
        Some(Evicted { key: old.key, dirty: old.dirty })
    }

    pub fn mark_dirty(&mut self, key: u64) -> bool {
        let s = self.set_of(key);
        match self.sets[s].iter_mut().find(|l| l.key == key) {
            Some(l) => {
                l.dirty = true;
                true
            }
            None => false,
        }
    }

    /// Drops `key`; returns its dirty bit if it was present.
    pub fn invalidate(&mut self, key: u64) -> Option<bool> {
        let s = self.set_of(key);
        let set = &mut self.sets[s];
        let i = set.iter().position(|l| l.key == key)?;
        Some(set.swap_remove(i).dirty)
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.sets.iter().flatten().map(|l| l.key)
    }

    /// Keys in one set from least to most recently used.
    pub fn lru_order(&self, set: usize) -> Vec<u64> {
        let mut lines = self.sets[set].clone();
        lines.sort_by_key(|l| l.stamp);
        lines.into_iter().map(|l| l.key).collect()
    }
}
