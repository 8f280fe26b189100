//! Global Status Graph: an indexed binary min-heap over cached data units.
//!
//! The top of the heap is the unit with the lowest retention priority, i.e.
//! the smallest `(iqn, rqn, seq)` triple. A key-to-slot index allows counts of
//! any resident unit to change in `O(log n)`.

use std::collections::HashMap;

use crate::catalog::DataUnitKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GsgEntry {
    pub key: DataUnitKey,
    /// Queries whose request window currently holds the unit.
    pub iqn: u32,
    /// Registered queries whose remaining request list holds the unit.
    pub rqn: u32,
    /// Insertion order; breaks `(iqn, rqn)` ties oldest-first.
    pub seq: u64,
}

impl GsgEntry {
    #[inline]
    pub fn rank(&self) -> (u32, u32, u64) {
        (self.iqn, self.rqn, self.seq)
    }
}

#[derive(Debug, Default, Clone)]
pub struct Gsg {
    heap: Vec<GsgEntry>,
    slots: HashMap<DataUnitKey, usize>,
    next_seq: u64,
}

impl Gsg {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn contains(&self, key: DataUnitKey) -> bool {
        self.slots.contains_key(&key)
    }

    pub fn get(&self, key: DataUnitKey) -> Option<&GsgEntry> {
        self.slots.get(&key).map(|&i| &self.heap[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &GsgEntry> {
        self.heap.iter()
    }

    /// Lowest-priority entry without removing it.
    pub fn peek(&self) -> Option<&GsgEntry> {
        self.heap.first()
    }

    /// Insert a new entry, or refresh the counts of an existing one (keeping
    /// its original sequence number).
    pub fn insert(&mut self, key: DataUnitKey, iqn: u32, rqn: u32) {
        if self.update(key, iqn, rqn) {
            return;
        }
        let entry = GsgEntry {
            key,
            iqn,
            rqn,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.heap.push(entry);
        let pos = self.heap.len() - 1;
        self.slots.insert(key, pos);
        self.sift_up(pos);
    }

    /// Set new counts for `key`. Returns `false` if the key is absent.
    pub fn update(&mut self, key: DataUnitKey, iqn: u32, rqn: u32) -> bool {
        let Some(&pos) = self.slots.get(&key) else {
            return false;
        };
        let old = self.heap[pos].rank();
        self.heap[pos].iqn = iqn;
        self.heap[pos].rqn = rqn;
        if self.heap[pos].rank() < old {
            self.sift_up(pos);
        } else {
            self.sift_down(pos);
        }
        true
    }

    /// Remove and return the minimum entry.
    pub fn get_next(&mut self) -> Option<GsgEntry> {
        let key = self.heap.first()?.key;
        self.erase(key)
    }

    pub fn erase(&mut self, key: DataUnitKey) -> Option<GsgEntry> {
        let pos = self.slots.remove(&key)?;
        let last = self.heap.len() - 1;
        self.heap.swap(pos, last);
        let removed = self.heap.pop().expect("non-empty");
        if pos < self.heap.len() {
            self.slots.insert(self.heap[pos].key, pos);
            self.sift_down(pos);
            self.sift_up(pos);
        }
        Some(removed)
    }

    /// Heap order holds and the index agrees with the heap.
    pub fn is_consistent(&self) -> bool {
        if self.slots.len() != self.heap.len() {
            return false;
        }
        let indexed = self
            .heap
            .iter()
            .enumerate()
            .all(|(i, e)| self.slots.get(&e.key) == Some(&i));
        let ordered = (1..self.heap.len()).all(|i| self.heap[(i - 1) / 2].rank() <= self.heap[i].rank());
        indexed && ordered
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.heap.swap(a, b);
        self.slots.insert(self.heap[a].key, a);
        self.slots.insert(self.heap[b].key, b);
    }

    fn sift_up(&mut self, mut pos: usize) {
        while pos > 0 {
            let parent = (pos - 1) / 2;
            if self.heap[pos].rank() >= self.heap[parent].rank() {
                break;
            }
            self.swap(pos, parent);
            pos = parent;
        }
    }

    fn sift_down(&mut self, mut pos: usize) {
        let len = self.heap.len();
        loop {
            let left = 2 * pos + 1;
            if left >= len {
                break;
            }
            let right = left + 1;
            let child = if right < len && self.heap[right].rank() < self.heap[left].rank() {
                right
            } else {
                left
            };
            if self.heap[child].rank() >= self.heap[pos].rank() {
                break;
            }
            self.swap(pos, child);
            pos = child;
        }
    }
}
