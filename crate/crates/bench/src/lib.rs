//! Benchmark harness: table and workload generators, the experiment driver,
//! parameter sweeps and report rendering.

pub mod config;
pub mod experiment;
pub mod gen;
pub mod report;
pub mod sweep;
pub mod workload;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{BenchConfig, DeviceKind, Mode};
pub use experiment::{run_experiment, MetricsReport};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Catalog(#[from] htsm_core::catalog::CatalogError),
    #[error(transparent)]
    Device(#[from] htsm_core::device::DeviceError),
    #[error(transparent)]
    Engine(#[from] htsm_core::engine::EngineError),
    #[error("batch {batch} query {query_id} (`{text}`): engine {engine:?} != oracle {oracle:?}")]
    OracleMismatch {
        batch: usize,
        query_id: u32,
        text: String,
        engine: Option<f64>,
        oracle: Option<f64>,
    },
    #[error("metrics file {path}: {detail}")]
    Metrics { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> BenchError {
    let path = path.into();
    move |source| BenchError::Io { path, source }
}
