use std::fmt;
use std::str::FromStr;

use htsm_core::catalog::ChunkingConfig;
use htsm_core::device::DeviceProfile;
use htsm_core::scheduler::Policy;
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Lru,
    Cs,
    Highth,
}

impl Mode {
    pub fn policy(self) -> Policy {
        match self {
            Mode::Lru => Policy::Lru,
            Mode::Cs => Policy::Cs,
            Mode::Highth => Policy::HighTh,
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<Policy>()? {
            Policy::Lru => Mode::Lru,
            Policy::Cs => Mode::Cs,
            Policy::HighTh => Mode::Highth,
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.policy().fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Hdd,
    Ssd,
    /// Real positional reads; times are wall-clock.
    File,
}

impl DeviceKind {
    pub fn profile(self) -> Option<DeviceProfile> {
        match self {
            DeviceKind::Hdd => Some(DeviceProfile::HDD),
            DeviceKind::Ssd => Some(DeviceProfile::SSD),
            DeviceKind::File => None,
        }
    }
}

impl FromStr for DeviceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hdd" => Ok(DeviceKind::Hdd),
            "ssd" => Ok(DeviceKind::Ssd),
            "file" => Ok(DeviceKind::File),
            other => Err(format!("unknown device `{other}` (expected hdd, ssd or file)")),
        }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeviceKind::Hdd => "hdd",
            DeviceKind::Ssd => "ssd",
            DeviceKind::File => "file",
        })
    }
}

/// One experiment. Missing JSON fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    /// Tuples in the generated table.
    pub scale: u64,
    pub batches: usize,
    pub queries_per_batch: usize,
    pub mode: Mode,
    pub window: usize,
    /// Cache budget as a fraction of the table's bytes; `null` is unlimited.
    pub cache_fraction: Option<f64>,
    pub device: DeviceKind,
    pub chunk_tuples: u64,
    pub page_bytes: u64,
    pub devices: usize,
    pub cpu_cost_per_tuple: f64,
    /// Numeric columns the workload draws from; 0 means all of them.
    pub column_pool: usize,
    pub pipeline_depth: usize,
    /// Serve the device queues of one read on worker threads.
    pub parallel_devices: bool,
    pub coalescing: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            scale: 100_000,
            batches: 3,
            queries_per_batch: 16,
            mode: Mode::Highth,
            window: 30,
            cache_fraction: Some(0.2),
            device: DeviceKind::Hdd,
            chunk_tuples: 4096,
            page_bytes: 4096,
            devices: 1,
            cpu_cost_per_tuple: 0.0,
            column_pool: 0,
            pipeline_depth: 1,
            parallel_devices: false,
            coalescing: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.batches == 0 || self.queries_per_batch == 0 {
            return bad("batches and queries_per_batch must be at least 1".into());
        }
        if self.window == 0 || self.devices == 0 || self.pipeline_depth == 0 {
            return bad("window, devices and pipeline_depth must be at least 1".into());
        }
        if let Some(f) = self.cache_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("cache_fraction {f} outside (0, 1]"));
            }
        }
        if !(self.cpu_cost_per_tuple >= 0.0 && self.cpu_cost_per_tuple.is_finite()) {
            return bad(format!("cpu_cost_per_tuple {} must be finite and >= 0", self.cpu_cost_per_tuple));
        }
        self.chunking()?;
        Ok(())
    }

    pub fn chunking(&self) -> Result<ChunkingConfig> {
        Ok(ChunkingConfig::new(self.chunk_tuples, self.page_bytes)?)
    }

    /// Cache budget in bytes for a table of `table_bytes`.
    pub fn cache_capacity(&self, table_bytes: u64) -> Option<u64> {
        self.cache_fraction
            .map(|f| ((table_bytes as f64 * f).ceil() as u64).max(1))
    }
}
