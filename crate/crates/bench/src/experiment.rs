//! Batch driver and the metrics document it emits.

use std::collections::BTreeMap;
use std::fs::File;
use std::time::Instant;

use htsm_core::catalog::{ColumnData, Table};
use htsm_core::device::{Backend, DeviceArray, Execution, IoStats, MIN_ALIGNMENT};
use htsm_core::engine::{execute_batch, oracle_scan, AggResult, Query};
use htsm_core::scheduler::RunConfig;
use serde::{Deserialize, Serialize};

use crate::config::{BenchConfig, DeviceKind};
use crate::gen::mix;
use crate::workload::{generate_workload, numeric_stats};
use crate::{io_err, BenchError, Result};

pub const METRICS_SCHEMA: u32 = 1;
pub const TABLE_NAME: &str = "lineitem";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableInfo {
    pub tuples: u64,
    pub chunks: u64,
    pub columns: usize,
    pub tuples_per_chunk: u64,
    pub page_bytes: u64,
    /// Stored unit bytes, excluding header and padding.
    pub unit_bytes: u64,
}

impl TableInfo {
    pub fn of(table: &Table) -> Self {
        let chunking = table.directory.chunking();
        Self {
            tuples: table.schema.tuple_count(),
            chunks: table.directory.chunk_count(),
            columns: table.schema.column_count(),
            tuples_per_chunk: chunking.tuples_per_chunk(),
            page_bytes: chunking.page_bytes(),
            unit_bytes: table.directory.total_bytes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: u32,
    pub text: String,
    /// Chunks left after zone-map pruning.
    pub chunks: usize,
    pub completion_order: usize,
    /// `null` for AVG over no rows.
    pub result: Option<f64>,
    /// Cumulative simulated time of the batch when this query finished.
    pub sim_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceMetrics {
    pub request_count: u64,
    pub bytes_read: u64,
    pub busy_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoMetrics {
    pub request_count: u64,
    pub bytes_read: u64,
    pub sim_time: f64,
    pub per_device: Vec<DeviceMetrics>,
}

impl From<&IoStats> for IoMetrics {
    fn from(s: &IoStats) -> Self {
        Self {
            request_count: s.request_count,
            bytes_read: s.bytes_read,
            sim_time: s.sim_time,
            per_device: s
                .per_device
                .iter()
                .map(|d| DeviceMetrics {
                    request_count: d.request_count,
                    bytes_read: d.bytes_read,
                    busy_time: d.busy_time,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMetrics {
    pub capacity_bytes: Option<u64>,
    pub lookups: u64,
    pub hits: u64,
    pub hit_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub batch: usize,
    pub queries: Vec<QueryMetrics>,
    pub io: IoMetrics,
    pub cache: CacheMetrics,
    pub requests_popped: u64,
    pub cache_only_requests: u64,
    pub cpu_time: f64,
    /// I/O plus CPU time of the batch.
    pub sim_time: f64,
    /// Measured only for the file backend.
    pub wall_time: Option<f64>,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub request_count: u64,
    pub bytes_read: u64,
    pub sim_time: f64,
    pub cpu_time: f64,
    pub lookups: u64,
    pub hits: u64,
    pub hit_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: u32,
    pub config: BenchConfig,
    pub table: TableInfo,
    pub batches: Vec<BatchMetrics>,
    pub totals: Totals,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn build_devices(config: &BenchConfig, table: &Table) -> Result<DeviceArray> {
    let file = File::open(&table.path).map_err(io_err(&table.path))?;
    let backend = match config.device.profile() {
        Some(profile) => Backend::Sim {
            profile,
            file: Some((file, table.file_len)),
        },
        None => Backend::File {
            file,
            alignment: MIN_ALIGNMENT,
        },
    };
    let execution = if config.parallel_devices {
        Execution::Parallel
    } else {
        Execution::Deterministic
    };
    Ok(DeviceArray::new(config.devices, backend)?
        .with_coalescing(config.coalescing)
        .with_execution(execution))
}

/// Seeded workload of batch `batch`.
pub fn batch_workload(config: &BenchConfig, table: &Table, batch: usize) -> Vec<Query> {
    generate_workload(
        mix(config.seed, 1_000 + batch as u64),
        config.queries_per_batch,
        TABLE_NAME,
        &numeric_stats(table),
        config.column_pool,
    )
}

/// Run `config.batches` batches against `table`, each with a cold cache.
/// With `oracle` set, every result is checked against a direct scan of the
/// in-memory columns and a mismatch is an error.
pub fn run_experiment(
    config: &BenchConfig,
    table: &Table,
    oracle: Option<&[ColumnData]>,
) -> Result<MetricsReport> {
    config.validate()?;
    let info = TableInfo::of(table);
    let run_config = RunConfig {
        policy: config.mode.policy(),
        window: config.window,
        cache_capacity: config.cache_capacity(info.unit_bytes),
        cpu_cost_per_tuple: config.cpu_cost_per_tuple,
        pipeline_depth: config.pipeline_depth,
    };
    let mut devices = build_devices(config, table)?;
    let mut batches = Vec::with_capacity(config.batches);
    for batch in 0..config.batches {
        let queries = batch_workload(config, table, batch);
        devices.reset_stats();
        let started = Instant::now();
        let out = execute_batch(table, &mut devices, &queries, &run_config)?;
        let wall = started.elapsed().as_secs_f64();

        if let Some(columns) = oracle {
            let n = info.tuples_per_chunk;
            for (i, (q, got)) in queries.iter().zip(&out.results).enumerate() {
                let want = oracle_scan(q, &table.schema, columns, n)?;
                if !got.bit_eq(&want) {
                    return Err(BenchError::OracleMismatch {
                        batch,
                        query_id: i as u32,
                        text: q.to_string(),
                        engine: got.value(),
                        oracle: want.value(),
                    });
                }
            }
        }

        let order: BTreeMap<u32, (usize, f64)> = out
            .report
            .completions
            .iter()
            .map(|c| (c.query_id, (c.order, c.sim_time)))
            .collect();
        let query_metrics = queries
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let (completion_order, sim_time) = order[&(i as u32)];
                QueryMetrics {
                    query_id: i as u32,
                    text: q.to_string(),
                    chunks: out.plans[i].pruned_chunks.len(),
                    completion_order,
                    result: match out.results[i] {
                        AggResult::Value(v) => Some(v),
                        AggResult::Empty => None,
                    },
                    sim_time,
                }
            })
            .collect();
        let report = &out.report;
        batches.push(BatchMetrics {
            batch,
            queries: query_metrics,
            io: IoMetrics::from(&report.io),
            cache: CacheMetrics {
                capacity_bytes: run_config.cache_capacity,
                lookups: report.cache.lookups,
                hits: report.cache.hits,
                hit_ratio: report.cache.hit_ratio(),
            },
            requests_popped: report.counters.popped,
            cache_only_requests: report.counters.cache_only,
            cpu_time: report.cpu_time,
            sim_time: report.sim_time,
            wall_time: (config.device == DeviceKind::File).then_some(wall),
            verified: oracle.is_some(),
        });
    }

    let mut totals = Totals {
        request_count: 0,
        bytes_read: 0,
        sim_time: 0.0,
        cpu_time: 0.0,
        lookups: 0,
        hits: 0,
        hit_ratio: 0.0,
    };
    for b in &batches {
        totals.request_count += b.io.request_count;
        totals.bytes_read += b.io.bytes_read;
        totals.sim_time += b.sim_time;
        totals.cpu_time += b.cpu_time;
        totals.lookups += b.cache.lookups;
        totals.hits += b.cache.hits;
    }
    totals.hit_ratio = htsm_core::cache::hit_ratio(&htsm_core::cache::CacheStats {
        lookups: totals.lookups,
        hits: totals.hits,
    });

    Ok(MetricsReport {
        schema: METRICS_SCHEMA,
        config: BenchConfig {
            scale: info.tuples,
            chunk_tuples: info.tuples_per_chunk,
            page_bytes: info.page_bytes,
            ..config.clone()
        },
        table: info,
        batches,
        totals,
    })
}

/// Every column of `table`, decoded through the catalog. Stands in for the
/// generator's copy when only the file is at hand.
pub fn load_columns(table: &Table) -> Result<Vec<ColumnData>> {
    use std::os::unix::fs::FileExt;
    let file = File::open(&table.path).map_err(io_err(&table.path))?;
    let mut out = Vec::with_capacity(table.schema.column_count());
    for (id, col) in table.schema.columns().iter().enumerate() {
        let mut bytes = Vec::new();
        for chunk in 0..table.directory.chunk_count() as u32 {
            let e = table
                .directory
                .entry(htsm_core::catalog::DataUnitKey::new(chunk, id as u16))?;
            let mut buf = vec![0u8; e.length as usize];
            file.read_exact_at(&mut buf, e.offset)
                .map_err(io_err(&table.path))?;
            bytes.extend_from_slice(&buf);
        }
        out.push(ColumnData::decode(col.ty, &bytes)?);
    }
    Ok(out)
}
