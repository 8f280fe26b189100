//! Table scanner / chunk reader control plane.
//!
//! Every registered query owns a request window of at most `W` chunks that
//! have been admitted to the shared [`RequestList`] but not yet delivered.
//! The reader consumes the list from the front; columns already cached are
//! served directly, the rest are read from the device array. A completed read
//! is fanned out to every query waiting on that chunk, reference counts are
//! released, fresh units are offered to the cache, and each served query's
//! window slides forward by one chunk.
//!
//! All mutation of the list, registrations and cache happens on the
//! scheduler; the device side only answers read jobs.

mod request_list;

pub use request_list::{ChunkRequest, InsertOutcome, QueryId, RequestList};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::{mpsc, Arc};

use thiserror::Error;

use crate::cache::{CacheError, CacheStats, CacheUnit, EvictionPolicy, WindowCache};
use crate::catalog::{CatalogError, ChunkDirectory, ChunkId, ColumnId, DataUnitKey, Extent};
use crate::device::{DeviceArray, DeviceError, IoStats};
use crate::engine::QueryPlan;

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("query {0} is already registered")]
    DuplicateQuery(QueryId),
    #[error("invalid plan for query {query_id}: {reason}")]
    InvalidPlan { query_id: QueryId, reason: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("scheduler stalled with unfinished queries\n{0}")]
    Stall(String),
    #[error("reference conservation violated for {0} data units")]
    Conservation(usize),
    #[error("delivery sink failed: {0}")]
    Sink(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

pub type Result<T, E = SchedulerError> = std::result::Result<T, E>;

/// Scheduling policy of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    /// One chunk per window, no merging, recency eviction.
    Lru,
    /// One chunk per window, no merging, reference-aware eviction.
    Cs,
    /// Full windows, merged requests, reference-aware eviction.
    HighTh,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Lru, Policy::Cs, Policy::HighTh];

    pub fn eviction(self) -> EvictionPolicy {
        match self {
            Policy::Lru => EvictionPolicy::Lru,
            Policy::Cs | Policy::HighTh => EvictionPolicy::Wpc,
        }
    }

    pub fn merging(self) -> bool {
        self == Policy::HighTh
    }

    /// Effective window for a requested size.
    pub fn window(self, requested: usize) -> usize {
        match self {
            Policy::HighTh => requested.max(1),
            Policy::Lru | Policy::Cs => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::Lru => "lru",
            Policy::Cs => "cs",
            Policy::HighTh => "highth",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lru" => Ok(Policy::Lru),
            "cs" => Ok(Policy::Cs),
            "highth" => Ok(Policy::HighTh),
            other => Err(format!("unknown mode `{other}` (expected lru, cs or highth)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRegistration {
    pub query_id: QueryId,
    pub required_columns: BTreeSet<ColumnId>,
    pub chunk_order: Vec<ChunkId>,
    pub window_size: usize,
    /// Index into `chunk_order` of the next chunk to admit.
    pub cursor: usize,
    /// Admitted but not yet delivered.
    pub in_window: BTreeSet<ChunkId>,
    pub delivered: usize,
}

impl QueryRegistration {
    pub fn is_complete(&self) -> bool {
        self.delivered == self.chunk_order.len()
    }
}

/// A request taken off the list, split into cache-resident and to-be-read columns.
#[derive(Debug, Clone)]
pub struct FetchPlan {
    pub ticket: u64,
    pub request: ChunkRequest,
    pub resident: BTreeMap<ColumnId, Arc<[u8]>>,
    pub to_read: BTreeSet<ColumnId>,
}

impl FetchPlan {
    /// Combine with the bytes read for `to_read`.
    pub fn into_event(self, mut read: BTreeMap<ColumnId, Vec<u8>>) -> Result<DeliveryEvent> {
        let mut payloads = self.resident;
        for col in &self.to_read {
            let bytes = read.remove(col).ok_or_else(|| {
                SchedulerError::Protocol(format!(
                    "read of chunk {} is missing column {col}",
                    self.request.chunk_id
                ))
            })?;
            payloads.insert(*col, bytes.into());
        }
        Ok(DeliveryEvent {
            ticket: self.ticket,
            chunk_id: self.request.chunk_id,
            payloads,
            served_queries: self.request.queries,
            fresh: self.to_read,
        })
    }
}

/// A chunk assembled for delivery.
#[derive(Debug, Clone)]
pub struct DeliveryEvent {
    pub ticket: u64,
    pub chunk_id: ChunkId,
    pub payloads: BTreeMap<ColumnId, Arc<[u8]>>,
    pub served_queries: BTreeSet<QueryId>,
    /// Columns that came from the devices rather than the cache.
    pub fresh: BTreeSet<ColumnId>,
}

/// What one query receives from one chunk.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub query_id: QueryId,
    pub chunk_id: ChunkId,
    pub columns: BTreeMap<ColumnId, Arc<[u8]>>,
    pub completes_query: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SchedulerCounters {
    /// Requests taken off the list.
    pub popped: u64,
    /// Popped requests that needed at least one device read.
    pub fetched: u64,
    /// Popped requests answered entirely from the cache.
    pub cache_only: u64,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    policy: Policy,
    registrations: BTreeMap<QueryId, QueryRegistration>,
    rlist: RequestList,
    cache: WindowCache,
    in_flight: BTreeMap<u64, ChunkRequest>,
    next_ticket: u64,
    counters: SchedulerCounters,
}

impl Scheduler {
    pub fn new(policy: Policy, cache_capacity: Option<u64>) -> Self {
        Self {
            policy,
            registrations: BTreeMap::new(),
            rlist: RequestList::new(policy.merging()),
            cache: WindowCache::new(policy.eviction(), cache_capacity),
            in_flight: BTreeMap::new(),
            next_ticket: 0,
            counters: SchedulerCounters::default(),
        }
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn request_list(&self) -> &RequestList {
        &self.rlist
    }

    pub fn cache(&self) -> &WindowCache {
        &self.cache
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    pub fn counters(&self) -> SchedulerCounters {
        self.counters
    }

    pub fn registration(&self, query_id: QueryId) -> Option<&QueryRegistration> {
        self.registrations.get(&query_id)
    }

    pub fn registrations(&self) -> impl Iterator<Item = &QueryRegistration> {
        self.registrations.values()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn all_complete(&self) -> bool {
        self.registrations.values().all(|r| r.is_complete())
    }

    /// Register a query: reference every unit of its plan and admit the
    /// first `min(W, chunks)` chunks into the request list.
    pub fn register_query(
        &mut self,
        query_id: QueryId,
        plan: &QueryPlan,
    ) -> Result<&QueryRegistration> {
        if self.registrations.contains_key(&query_id) {
            return Err(SchedulerError::DuplicateQuery(query_id));
        }
        let invalid = |reason: &str| SchedulerError::InvalidPlan {
            query_id,
            reason: reason.to_string(),
        };
        if plan.window_size == 0 {
            return Err(invalid("window size must be at least 1"));
        }
        if !plan.pruned_chunks.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("chunk order must be strictly ascending"));
        }
        if plan.required_columns.is_empty() && !plan.pruned_chunks.is_empty() {
            return Err(invalid("no required columns"));
        }
        for &chunk_id in &plan.pruned_chunks {
            for &column_id in &plan.required_columns {
                self.cache.add_reference(DataUnitKey::new(chunk_id, column_id));
            }
        }
        let window_size = self.policy.window(plan.window_size);
        self.registrations.insert(
            query_id,
            QueryRegistration {
                query_id,
                required_columns: plan.required_columns.clone(),
                chunk_order: plan.pruned_chunks.clone(),
                window_size,
                cursor: 0,
                in_window: BTreeSet::new(),
                delivered: 0,
            },
        );
        for _ in 0..window_size.min(plan.pruned_chunks.len()) {
            self.admit_next(query_id)?;
        }
        Ok(&self.registrations[&query_id])
    }

    fn admit_next(&mut self, query_id: QueryId) -> Result<()> {
        let reg = self
            .registrations
            .get_mut(&query_id)
            .expect("registered query");
        let Some(&chunk_id) = reg.chunk_order.get(reg.cursor) else {
            return Ok(());
        };
        reg.cursor += 1;
        reg.in_window.insert(chunk_id);
        let columns = reg.required_columns.clone();
        for &column_id in &columns {
            self.cache
                .update_counts(DataUnitKey::new(chunk_id, column_id), 1, 0)?;
        }
        self.rlist
            .insert_request(ChunkRequest::new(chunk_id, columns, [query_id]));
        Ok(())
    }

    /// Take the front request. Columns found in the cache are served from it;
    /// the rest are left for the devices. `None` means the list is empty.
    pub fn next_request(&mut self) -> Option<FetchPlan> {
        let request = self.rlist.pop_front()?;
        let mut resident = BTreeMap::new();
        let mut to_read = BTreeSet::new();
        for &column_id in &request.columns {
            let key = DataUnitKey::new(request.chunk_id, column_id);
            let demand = request
                .queries
                .iter()
                .filter(|q| self.registrations[q].required_columns.contains(&column_id))
                .count() as u64;
            match self.cache.lookup(key) {
                Some(payload) => {
                    // Every waiting query reads the resident unit.
                    for _ in 1..demand {
                        self.cache.lookup(key);
                    }
                    resident.insert(column_id, payload);
                }
                None => {
                    // One read serves the remaining waiters.
                    self.cache.record_shared_hits(demand.saturating_sub(1));
                    to_read.insert(column_id);
                }
            }
        }
        self.counters.popped += 1;
        if to_read.is_empty() {
            self.counters.cache_only += 1;
        } else {
            self.counters.fetched += 1;
        }
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        self.in_flight.insert(ticket, request.clone());
        Some(FetchPlan {
            ticket,
            request,
            resident,
            to_read,
        })
    }

    /// Deliver a completed chunk to every waiting query, release reference
    /// counts, offer freshly read units to the cache and slide the windows.
    pub fn on_chunk_ready(&mut self, event: DeliveryEvent) -> Result<Vec<Delivery>> {
        let request = self.in_flight.remove(&event.ticket).ok_or_else(|| {
            SchedulerError::Protocol(format!(
                "completion for unknown request ticket {} (chunk {})",
                event.ticket, event.chunk_id
            ))
        })?;
        if request.chunk_id != event.chunk_id || request.queries != event.served_queries {
            return Err(SchedulerError::Protocol(format!(
                "completion for ticket {} does not match its request",
                event.ticket
            )));
        }
        if event.payloads.keys().copied().collect::<BTreeSet<_>>() != request.columns {
            return Err(SchedulerError::Protocol(format!(
                "chunk {} delivered with the wrong column set",
                event.chunk_id
            )));
        }

        let mut deliveries = Vec::with_capacity(request.queries.len());
        for &query_id in &request.queries {
            let reg = self.registrations.get_mut(&query_id).ok_or_else(|| {
                SchedulerError::Protocol(format!("chunk {} served unknown query {query_id}", event.chunk_id))
            })?;
            if !reg.in_window.remove(&event.chunk_id) {
                return Err(SchedulerError::Protocol(format!(
                    "query {query_id} received chunk {} outside its window",
                    event.chunk_id
                )));
            }
            reg.delivered += 1;
            let columns: BTreeMap<_, _> = reg
                .required_columns
                .iter()
                .map(|c| (*c, event.payloads[c].clone()))
                .collect();
            let completes_query = reg.is_complete();
            for &column_id in columns.keys() {
                self.cache
                    .update_counts(DataUnitKey::new(event.chunk_id, column_id), -1, -1)?;
            }
            deliveries.push(Delivery {
                query_id,
                chunk_id: event.chunk_id,
                columns,
                completes_query,
            });
        }

        for column_id in &event.fresh {
            let key = DataUnitKey::new(event.chunk_id, *column_id);
            self.cache
                .put(CacheUnit::new(key, event.payloads[column_id].clone()))?;
        }

        for &query_id in &request.queries {
            self.admit_next(query_id)?;
        }
        Ok(deliveries)
    }

    /// Merge uniqueness, window bounds and cache invariants.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.rlist.merging() {
            let mut seen = BTreeSet::new();
            for r in self.rlist.iter() {
                if !seen.insert(r.chunk_id) {
                    return Err(format!("chunk {} queued twice", r.chunk_id));
                }
            }
        }
        for reg in self.registrations.values() {
            if reg.in_window.len() > reg.window_size {
                return Err(format!(
                    "query {} holds {} chunks in a window of {}",
                    reg.query_id,
                    reg.in_window.len(),
                    reg.window_size
                ));
            }
        }
        self.cache.check_invariants()
    }

    /// Human-readable state for stall diagnostics.
    pub fn dump_state(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "policy {} | request list {} | in flight {}",
            self.policy,
            self.rlist.len(),
            self.in_flight.len()
        );
        for reg in self.registrations.values() {
            let _ = writeln!(
                out,
                "  query {}: delivered {}/{} cursor {} window {:?}",
                reg.query_id,
                reg.delivered,
                reg.chunk_order.len(),
                reg.cursor,
                reg.in_window
            );
        }
        out
    }

    fn release_all(&self) -> Result<()> {
        let violations = self.cache.conservation_violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(SchedulerError::Conservation(violations.len()))
        }
    }
}

/// Consumer of per-query deliveries, e.g. an aggregate evaluator.
pub trait DeliverySink {
    fn deliver(&mut self, delivery: &Delivery, rows: u64) -> std::result::Result<(), String>;
}

impl<F> DeliverySink for F
where
    F: FnMut(&Delivery, u64) -> std::result::Result<(), String>,
{
    fn deliver(&mut self, delivery: &Delivery, rows: u64) -> std::result::Result<(), String> {
        self(delivery, rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub policy: Policy,
    pub window: usize,
    /// Cache budget in bytes; `None` is unlimited.
    pub cache_capacity: Option<u64>,
    /// Simulated processing cost charged per tuple delivered to a query.
    pub cpu_cost_per_tuple: f64,
    /// Maximum reads in flight. 1 runs inline on the caller's thread; larger
    /// values hand reads to a reader stage over a FIFO channel.
    pub pipeline_depth: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policy: Policy::HighTh,
            window: 30,
            cache_capacity: None,
            cpu_cost_per_tuple: 0.0,
            pipeline_depth: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub query_id: QueryId,
    /// Position in completion order, starting at 0.
    pub order: usize,
    /// Cumulative simulated time when the query finished.
    pub sim_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub io: IoStats,
    pub cache: CacheStats,
    pub counters: SchedulerCounters,
    pub cpu_time: f64,
    /// `io.sim_time + cpu_time`.
    pub sim_time: f64,
    pub completions: Vec<Completion>,
    /// Data units whose registered references were all released.
    pub conserved_units: usize,
}

struct ReadJob {
    ticket: u64,
    units: Vec<(DataUnitKey, Vec<Extent>)>,
}

struct ReadDone {
    ticket: u64,
    result: std::result::Result<BTreeMap<DataUnitKey, Vec<u8>>, DeviceError>,
    io_time: f64,
}

trait ReadDriver {
    fn submit(&mut self, job: ReadJob) -> Result<()>;
    fn wait(&mut self) -> Result<ReadDone>;
}

struct InlineReader<'a> {
    devices: &'a mut DeviceArray,
    queue: VecDeque<ReadJob>,
}

impl ReadDriver for InlineReader<'_> {
    fn submit(&mut self, job: ReadJob) -> Result<()> {
        self.queue.push_back(job);
        Ok(())
    }

    fn wait(&mut self) -> Result<ReadDone> {
        let job = self
            .queue
            .pop_front()
            .ok_or_else(|| SchedulerError::Protocol("wait with no read in flight".into()))?;
        Ok(serve(self.devices, job))
    }
}

fn serve(devices: &mut DeviceArray, job: ReadJob) -> ReadDone {
    let units: Vec<(DataUnitKey, &[Extent])> =
        job.units.iter().map(|(k, e)| (*k, e.as_slice())).collect();
    let result = devices.read_units(&units);
    ReadDone {
        ticket: job.ticket,
        result,
        io_time: devices.stats().sim_time,
    }
}

struct StagedReader {
    jobs: mpsc::Sender<ReadJob>,
    done: mpsc::Receiver<ReadDone>,
}

impl ReadDriver for StagedReader {
    fn submit(&mut self, job: ReadJob) -> Result<()> {
        self.jobs
            .send(job)
            .map_err(|_| SchedulerError::Protocol("reader stage hung up".into()))
    }

    fn wait(&mut self) -> Result<ReadDone> {
        self.done
            .recv()
            .map_err(|_| SchedulerError::Protocol("reader stage hung up".into()))
    }
}

/// Run a batch of planned queries to quiescence under `config.policy`.
///
/// Registration happens up front in query-id order; afterwards the loop keeps
/// up to `pipeline_depth` reads in flight, and each completion is delivered,
/// cached and used to slide the windows before the next request is taken.
pub fn run_policy(
    directory: &ChunkDirectory,
    devices: &mut DeviceArray,
    plans: &[(QueryId, QueryPlan)],
    config: &RunConfig,
    sink: &mut dyn DeliverySink,
) -> Result<RunReport> {
    let mut scheduler = Scheduler::new(config.policy, config.cache_capacity);
    let mut ordered: Vec<&(QueryId, QueryPlan)> = plans.iter().collect();
    ordered.sort_by_key(|(id, _)| *id);
    for (query_id, plan) in ordered {
        let mut plan = plan.clone();
        plan.window_size = config.window;
        scheduler.register_query(*query_id, &plan)?;
    }

    let io_before = devices.stats().clone();
    let depth = config.pipeline_depth.max(1);
    let mut state = RunState {
        scheduler,
        cpu_time: 0.0,
        io_time: 0.0,
        io_base: io_before.sim_time,
        completions: Vec::new(),
        cpu_cost: config.cpu_cost_per_tuple,
    };
    // Queries with nothing to read finish at time zero.
    for reg in state.scheduler.registrations.values() {
        if reg.chunk_order.is_empty() {
            state.completions.push(Completion {
                query_id: reg.query_id,
                order: state.completions.len(),
                sim_time: 0.0,
            });
        }
    }

    if depth == 1 {
        let mut reader = InlineReader {
            devices,
            queue: VecDeque::new(),
        };
        state.drive(directory, &mut reader, 1, sink)?;
    } else {
        std::thread::scope(|scope| -> Result<()> {
            let (job_tx, job_rx) = mpsc::channel::<ReadJob>();
            let (done_tx, done_rx) = mpsc::channel::<ReadDone>();
            let devices = &mut *devices;
            scope.spawn(move || {
                for job in job_rx {
                    if done_tx.send(serve(devices, job)).is_err() {
                        break;
                    }
                }
            });
            let mut reader = StagedReader {
                jobs: job_tx,
                done: done_rx,
            };
            state.drive(directory, &mut reader, depth, sink)
        })?;
    }

    state.scheduler.release_all()?;
    let mut io = devices.stats().clone();
    subtract(&mut io, &io_before);
    let sim_time = io.sim_time + state.cpu_time;
    Ok(RunReport {
        io,
        cache: state.scheduler.cache_stats(),
        counters: state.scheduler.counters(),
        cpu_time: state.cpu_time,
        sim_time,
        completions: state.completions,
        conserved_units: state.scheduler.cache.referenced_keys(),
    })
}

fn subtract(total: &mut IoStats, base: &IoStats) {
    total.request_count -= base.request_count;
    total.bytes_read -= base.bytes_read;
    total.sim_time -= base.sim_time;
    for (d, b) in total.per_device.iter_mut().zip(&base.per_device) {
        d.request_count -= b.request_count;
        d.bytes_read -= b.bytes_read;
        d.busy_time -= b.busy_time;
    }
}

struct RunState {
    scheduler: Scheduler,
    cpu_time: f64,
    io_time: f64,
    io_base: f64,
    completions: Vec<Completion>,
    cpu_cost: f64,
}

impl RunState {
    fn drive(
        &mut self,
        directory: &ChunkDirectory,
        reader: &mut dyn ReadDriver,
        depth: usize,
        sink: &mut dyn DeliverySink,
    ) -> Result<()> {
        let mut pending: BTreeMap<u64, FetchPlan> = BTreeMap::new();
        loop {
            while pending.len() < depth {
                let Some(plan) = self.scheduler.next_request() else {
                    break;
                };
                if plan.to_read.is_empty() {
                    let event = plan.into_event(BTreeMap::new())?;
                    self.complete(directory, event, sink)?;
                    continue;
                }
                let mut units = Vec::with_capacity(plan.to_read.len());
                for &column_id in &plan.to_read {
                    let key = DataUnitKey::new(plan.request.chunk_id, column_id);
                    units.push((key, directory.lookup_extents(key)?.to_vec()));
                }
                reader.submit(ReadJob {
                    ticket: plan.ticket,
                    units,
                })?;
                pending.insert(plan.ticket, plan);
            }

            if pending.is_empty() {
                if self.scheduler.all_complete() {
                    return Ok(());
                }
                if self.scheduler.request_list().is_empty() {
                    return Err(SchedulerError::Stall(self.scheduler.dump_state()));
                }
                continue;
            }

            let done = reader.wait()?;
            let plan = pending.remove(&done.ticket).ok_or_else(|| {
                SchedulerError::Protocol(format!("unexpected read completion {}", done.ticket))
            })?;
            self.io_time = done.io_time - self.io_base;
            let read: BTreeMap<ColumnId, Vec<u8>> = done
                .result?
                .into_iter()
                .map(|(k, v)| (k.column_id, v))
                .collect();
            let event = plan.into_event(read)?;
            self.complete(directory, event, sink)?;
        }
    }

    fn complete(
        &mut self,
        directory: &ChunkDirectory,
        event: DeliveryEvent,
        sink: &mut dyn DeliverySink,
    ) -> Result<()> {
        let rows = directory.chunk_rows(event.chunk_id);
        for delivery in self.scheduler.on_chunk_ready(event)? {
            self.cpu_time += self.cpu_cost * rows as f64;
            sink.deliver(&delivery, rows).map_err(SchedulerError::Sink)?;
            if delivery.completes_query {
                self.completions.push(Completion {
                    query_id: delivery.query_id,
                    order: self.completions.len(),
                    sim_time: self.io_time + self.cpu_time,
                });
            }
        }
        #[cfg(debug_assertions)]
        self.scheduler
            .check_invariants()
            .map_err(SchedulerError::Protocol)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
