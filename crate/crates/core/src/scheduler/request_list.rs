use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::catalog::{ChunkId, ColumnId};

pub type QueryId = u32;

/// A pending read of one chunk on behalf of one or more queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkRequest {
    pub chunk_id: ChunkId,
    /// Union of the requesting queries' columns.
    pub columns: BTreeSet<ColumnId>,
    pub queries: BTreeSet<QueryId>,
}

impl ChunkRequest {
    pub fn new(
        chunk_id: ChunkId,
        columns: impl IntoIterator<Item = ColumnId>,
        queries: impl IntoIterator<Item = QueryId>,
    ) -> Self {
        Self {
            chunk_id,
            columns: columns.into_iter().collect(),
            queries: queries.into_iter().collect(),
        }
    }

    fn merge(&mut self, other: ChunkRequest) {
        self.columns.extend(other.columns);
        self.queries.extend(other.queries);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Merged,
    Appended,
}

/// The shared request list: appended at the back, consumed from the front.
///
/// With merging on, a request for a chunk already queued is folded into the
/// existing entry in place, so the list holds at most one entry per chunk.
/// With merging off every request is appended as-is.
#[derive(Debug, Clone)]
pub struct RequestList {
    entries: VecDeque<ChunkRequest>,
    /// chunk id -> absolute sequence number of its entry.
    index: HashMap<ChunkId, u64>,
    /// Absolute sequence number of `entries[0]`.
    head: u64,
    merging: bool,
}

impl RequestList {
    pub fn new(merging: bool) -> Self {
        Self {
            entries: VecDeque::new(),
            index: HashMap::new(),
            head: 0,
            merging,
        }
    }

    pub fn merging(&self) -> bool {
        self.merging
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ChunkRequest> {
        self.entries.iter()
    }

    pub fn find(&self, chunk_id: ChunkId) -> Option<&ChunkRequest> {
        let seq = *self.index.get(&chunk_id)?;
        self.entries.get((seq - self.head) as usize)
    }

    pub fn insert_request(&mut self, chunk: ChunkRequest) -> InsertOutcome {
        if self.merging {
            if let Some(&seq) = self.index.get(&chunk.chunk_id) {
                self.entries[(seq - self.head) as usize].merge(chunk);
                return InsertOutcome::Merged;
            }
            self.index
                .insert(chunk.chunk_id, self.head + self.entries.len() as u64);
        }
        self.entries.push_back(chunk);
        InsertOutcome::Appended
    }

    pub fn pop_front(&mut self) -> Option<ChunkRequest> {
        let front = self.entries.pop_front()?;
        if self.merging {
            self.index.remove(&front.chunk_id);
        }
        self.head += 1;
        Some(front)
    }
}
