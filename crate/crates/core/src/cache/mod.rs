//! Window-based push-model cache (WPC).
//!
//! Cached units are single columns of single chunks. Every unit referenced by
//! a registered query carries two counts:
//!
//! - `iqn`: queries whose request window currently holds the unit;
//! - `rqn`: queries whose remaining request list holds the unit.
//!
//! Counts live in a reference table for every referenced unit, cached or not,
//! so that a freshly read unit can be judged before it is first cached.
//! Resident units are mirrored in the [`Gsg`] min-heap; its top is the next
//! eviction victim. A unit whose `rqn` drops to zero is never kept.
//!
//! An LRU mode replaces the heap with recency order over the same store and
//! ignores reference counts when admitting or evicting.

mod gsg;

pub use gsg::{Gsg, GsgEntry};

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::catalog::DataUnitKey;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("no eviction candidate: cache is empty")]
    NoCandidate,
    #[error("data unit {0} has no registered references")]
    Untracked(DataUnitKey),
    #[error(
        "reference count violation on {key}: (iqn {iqn}, rqn {rqn}) adjusted by ({delta_iqn}, {delta_rqn})"
    )]
    CountViolation {
        key: DataUnitKey,
        iqn: u32,
        rqn: u32,
        delta_iqn: i64,
        delta_rqn: i64,
    },
    #[error("cache unit {0} has an empty payload")]
    EmptyUnit(DataUnitKey),
}

pub type Result<T, E = CacheError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvictionPolicy {
    /// Evict the minimum `(iqn, rqn, insertion)` unit; drop unreferenced units.
    #[default]
    Wpc,
    /// Evict the least recently used unit; reference counts are ignored.
    Lru,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheUnit {
    pub key: DataUnitKey,
    pub payload: Arc<[u8]>,
}

impl CacheUnit {
    pub fn new(key: DataUnitKey, payload: impl Into<Arc<[u8]>>) -> Self {
        Self {
            key,
            payload: payload.into(),
        }
    }

    pub fn size(&self) -> u64 {
        self.payload.len() as u64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub lookups: u64,
    pub hits: u64,
}

impl CacheStats {
    pub fn hit_ratio(&self) -> f64 {
        hit_ratio(self)
    }
}

/// `hits / lookups`, defined as 0 when nothing was looked up.
pub fn hit_ratio(stats: &CacheStats) -> f64 {
    if stats.lookups == 0 {
        0.0
    } else {
        stats.hits as f64 / stats.lookups as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RefCounts {
    pub iqn: u32,
    pub rqn: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PutOutcome {
    /// Inserted; `evicted` lists the victims in eviction order (possibly
    /// including the new unit itself if it ranked lowest).
    Cached { evicted: Vec<DataUnitKey> },
    /// Already resident; priority refreshed.
    Updated,
    /// No remaining references; nothing stored.
    Dropped,
    /// The unit alone exceeds the capacity.
    OverCapacity,
}

#[derive(Debug, Clone)]
pub struct WindowCache {
    policy: EvictionPolicy,
    /// `None` is unlimited.
    capacity: Option<u64>,
    used: u64,
    store: HashMap<DataUnitKey, Arc<[u8]>>,
    gsg: Gsg,
    refs: HashMap<DataUnitKey, RefCounts>,
    recency: BTreeMap<u64, DataUnitKey>,
    last_use: HashMap<DataUnitKey, u64>,
    clock: u64,
    stats: CacheStats,
    registered: HashMap<DataUnitKey, u64>,
    released: HashMap<DataUnitKey, u64>,
}

impl WindowCache {
    pub fn new(policy: EvictionPolicy, capacity: Option<u64>) -> Self {
        Self {
            policy,
            capacity,
            used: 0,
            store: HashMap::new(),
            gsg: Gsg::new(),
            refs: HashMap::new(),
            recency: BTreeMap::new(),
            last_use: HashMap::new(),
            clock: 0,
            stats: CacheStats::default(),
            registered: HashMap::new(),
            released: HashMap::new(),
        }
    }

    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    pub fn capacity(&self) -> Option<u64> {
        self.capacity
    }

    pub fn used_bytes(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn contains(&self, key: DataUnitKey) -> bool {
        self.store.contains_key(&key)
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn gsg(&self) -> &Gsg {
        &self.gsg
    }

    pub fn counts(&self, key: DataUnitKey) -> Option<RefCounts> {
        self.refs.get(&key).copied()
    }

    /// Look a unit up, counting the lookup and, on a hit, the hit.
    pub fn lookup(&mut self, key: DataUnitKey) -> Option<Arc<[u8]>> {
        self.stats.lookups += 1;
        let found = self.store.get(&key).cloned();
        if found.is_some() {
            self.stats.hits += 1;
            if self.policy == EvictionPolicy::Lru {
                self.touch(key);
            }
        }
        found
    }

    /// Count `n` lookups answered from a unit that was just pushed up by a
    /// shared read, without consulting the store.
    pub fn record_shared_hits(&mut self, n: u64) {
        self.stats.lookups += n;
        self.stats.hits += n;
    }

    /// A query registered interest in `key`: `rqn += 1`.
    pub fn add_reference(&mut self, key: DataUnitKey) {
        self.refs.entry(key).or_default().rqn += 1;
        *self.registered.entry(key).or_default() += 1;
        if self.policy == EvictionPolicy::Wpc {
            if let Some(c) = self.refs.get(&key).copied() {
                self.gsg.update(key, c.iqn, c.rqn);
            }
        }
    }

    /// Adjust the counts of a referenced unit. When `rqn` reaches zero the
    /// reference record is retired and, under WPC, the unit leaves the cache.
    pub fn update_counts(
        &mut self,
        key: DataUnitKey,
        delta_iqn: i64,
        delta_rqn: i64,
    ) -> Result<RefCounts> {
        let current = *self.refs.get(&key).ok_or(CacheError::Untracked(key))?;
        let iqn = current.iqn as i64 + delta_iqn;
        let rqn = current.rqn as i64 + delta_rqn;
        if iqn < 0 || rqn < 0 || iqn > rqn {
            return Err(CacheError::CountViolation {
                key,
                iqn: current.iqn,
                rqn: current.rqn,
                delta_iqn,
                delta_rqn,
            });
        }
        let next = RefCounts {
            iqn: iqn as u32,
            rqn: rqn as u32,
        };
        if delta_rqn < 0 {
            *self.released.entry(key).or_default() += (-delta_rqn) as u64;
        }
        if next.rqn == 0 {
            self.refs.remove(&key);
            if self.policy == EvictionPolicy::Wpc {
                self.gsg.erase(key);
                self.remove_unit(key);
            }
        } else {
            self.refs.insert(key, next);
            if self.policy == EvictionPolicy::Wpc {
                self.gsg.update(key, next.iqn, next.rqn);
            }
        }
        Ok(next)
    }

    /// Offer a freshly read unit to the cache, evicting as needed.
    pub fn put(&mut self, unit: CacheUnit) -> Result<PutOutcome> {
        let key = unit.key;
        if unit.size() == 0 {
            return Err(CacheError::EmptyUnit(key));
        }
        let remaining = self.refs.get(&key).copied().unwrap_or_default();
        if self.policy == EvictionPolicy::Wpc && remaining.rqn == 0 {
            return Ok(PutOutcome::Dropped);
        }
        if self.capacity.is_some_and(|cap| unit.size() > cap) {
            return Ok(PutOutcome::OverCapacity);
        }
        if self.store.contains_key(&key) {
            match self.policy {
                EvictionPolicy::Wpc => {
                    self.gsg.update(key, remaining.iqn, remaining.rqn);
                }
                EvictionPolicy::Lru => self.touch(key),
            }
            return Ok(PutOutcome::Updated);
        }

        self.used += unit.size();
        self.store.insert(key, unit.payload);
        match self.policy {
            EvictionPolicy::Wpc => self.gsg.insert(key, remaining.iqn, remaining.rqn),
            EvictionPolicy::Lru => self.touch(key),
        }
        let mut evicted = Vec::new();
        while self.capacity.is_some_and(|cap| self.used > cap) {
            evicted.push(self.get_next_candidate()?);
        }
        Ok(PutOutcome::Cached { evicted })
    }

    /// Remove and return the lowest-priority resident unit.
    pub fn get_next_candidate(&mut self) -> Result<DataUnitKey> {
        let key = match self.policy {
            EvictionPolicy::Wpc => self.gsg.get_next().ok_or(CacheError::NoCandidate)?.key,
            EvictionPolicy::Lru => {
                let (_, key) = self.recency.pop_first().ok_or(CacheError::NoCandidate)?;
                self.last_use.remove(&key);
                key
            }
        };
        self.remove_unit(key);
        Ok(key)
    }

    /// Keys whose released `rqn` total differs from their registered count.
    /// Empty once every registered reference has been consumed.
    pub fn conservation_violations(&self) -> Vec<(DataUnitKey, u64, u64)> {
        let mut out: Vec<_> = self
            .registered
            .iter()
            .filter_map(|(k, &reg)| {
                let rel = self.released.get(k).copied().unwrap_or(0);
                (reg != rel).then_some((*k, reg, rel))
            })
            .collect();
        out.extend(
            self.released
                .iter()
                .filter(|(k, _)| !self.registered.contains_key(k))
                .map(|(k, &rel)| (*k, 0, rel)),
        );
        out.sort_unstable();
        out
    }

    /// Number of keys ever referenced.
    pub fn referenced_keys(&self) -> usize {
        self.registered.len()
    }

    /// Structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let sum: u64 = self.store.values().map(|p| p.len() as u64).sum();
        if sum != self.used {
            return Err(format!("used bytes {} != resident bytes {sum}", self.used));
        }
        if let Some(cap) = self.capacity {
            if self.used > cap {
                return Err(format!("used bytes {} exceed capacity {cap}", self.used));
            }
        }
        for (k, c) in &self.refs {
            if c.rqn < c.iqn || c.rqn == 0 {
                return Err(format!("{k} has counts iqn {} rqn {}", c.iqn, c.rqn));
            }
        }
        match self.policy {
            EvictionPolicy::Wpc => {
                if !self.gsg.is_consistent() || self.gsg.len() != self.store.len() {
                    return Err("gsg and store disagree".into());
                }
                for e in self.gsg.iter() {
                    let Some(c) = self.refs.get(&e.key) else {
                        return Err(format!("resident {} has no references", e.key));
                    };
                    if (c.iqn, c.rqn) != (e.iqn, e.rqn) {
                        return Err(format!("gsg counts for {} are stale", e.key));
                    }
                    if !self.store.contains_key(&e.key) {
                        return Err(format!("gsg entry {} not resident", e.key));
                    }
                }
            }
            EvictionPolicy::Lru => {
                if self.recency.len() != self.store.len() {
                    return Err("recency list and store disagree".into());
                }
            }
        }
        Ok(())
    }

    fn touch(&mut self, key: DataUnitKey) {
        if let Some(old) = self.last_use.insert(key, self.clock) {
            self.recency.remove(&old);
        }
        self.recency.insert(self.clock, key);
        self.clock += 1;
    }

    fn remove_unit(&mut self, key: DataUnitKey) {
        if let Some(p) = self.store.remove(&key) {
            self.used -= p.len() as u64;
        }
        if let Some(t) = self.last_use.remove(&key) {
            self.recency.remove(&t);
        }
    }
}
