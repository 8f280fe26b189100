//! Multi-query columnar storage manager.
//!
//! Batch scan queries register per-query request windows; overlapping chunk
//! requests are merged into one shared read, and column units are cached
//! under a reference-aware eviction policy.
//!
//! - [`catalog`]: chunked column layout, table file format, zone maps.
//! - [`device`]: round-robin dispatch, request coalescing, simulated and file I/O.
//! - [`cache`]: the window-based cache and its eviction heap.
//! - [`scheduler`]: request windows, the shared request list, delivery.
//! - [`engine`]: query grammar, planning, aggregation and the full-scan oracle.

pub mod cache;
pub mod catalog;
pub mod device;
pub mod engine;
pub mod scheduler;
