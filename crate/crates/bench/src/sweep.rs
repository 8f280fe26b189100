//! Cross-product parameter sweeps.
//!
//! A grid file looks like
//!
//! ```json
//! {
//!   "base": { "scale": 50000, "mode": "highth" },
//!   "axes": { "window": [1, 5, 10, 15, 30], "cache_fraction": [0.1, 0.2, 0.5, null] }
//! }
//! ```
//!
//! Axes are expanded in name order, the last axis varying fastest.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use htsm_core::catalog::{DataUnitKey, Extent, Table};
use htsm_core::device::{coalesce, dispatch, DeviceProfile};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::BenchConfig;
use crate::experiment::run_experiment;
use crate::gen::{generate_table, GeneratedTable};
use crate::{io_err, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub base: Map<String, Value>,
    #[serde(default)]
    pub axes: BTreeMap<String, Vec<Value>>,
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every combination of axis values laid over `base`.
    pub fn cells(&self) -> Vec<Map<String, Value>> {
        let mut cells = vec![self.base.clone()];
        for (name, values) in &self.axes {
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for cell in &cells {
                for v in values {
                    let mut c = cell.clone();
                    c.insert(name.clone(), v.clone());
                    next.push(c);
                }
            }
            cells = next;
        }
        cells
    }
}

/// One row of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub cell: usize,
    pub status: String,
    pub error: Option<String>,
    pub mode: Option<String>,
    pub window: Option<usize>,
    pub cache_fraction: Option<f64>,
    pub device: Option<String>,
    pub chunk_tuples: Option<u64>,
    pub page_bytes: Option<u64>,
    pub devices: Option<usize>,
    pub seed: Option<u64>,
    pub scale: Option<u64>,
    pub request_count: Option<u64>,
    pub bytes_read: Option<u64>,
    pub sim_time: Option<f64>,
    pub hit_ratio: Option<f64>,
    /// Simulated cost of one cold sequential pass over the whole table,
    /// standing in for a load-time (ETL) benchmark.
    pub etl_standin_full_scan_s: Option<f64>,
    pub metrics_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema: u32,
    pub axes: BTreeMap<String, Vec<Value>>,
    pub cells: Vec<CellRow>,
}

/// Simulated time to read every unit once, chunk by chunk.
pub fn full_scan_time(table: &Table, profile: &DeviceProfile, devices: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in 0..table.directory.chunk_count() as u32 {
        let mut extents: Vec<(DataUnitKey, Extent)> = Vec::new();
        for col in 0..table.schema.column_count() as u16 {
            let key = DataUnitKey::new(chunk, col);
            for e in table.directory.lookup_extents(key)? {
                extents.push((key, *e));
            }
        }
        for queue in dispatch(&extents, devices)? {
            for req in coalesce(queue)? {
                total += profile.request_time(req.length);
            }
        }
    }
    Ok(total)
}

fn table_key(c: &BenchConfig) -> (u64, u64, u64, u64) {
    (c.seed, c.scale, c.chunk_tuples, c.page_bytes)
}

/// Run every cell of `grid`, writing `cell-NNNN.json` per successful cell
/// plus `summary.csv` and `summary.json` into `out`. A failing cell is
/// recorded and the sweep moves on.
pub fn sweep(grid: &SweepGrid, out: &Path) -> Result<SweepSummary> {
    let tables_dir = out.join("tables");
    fs::create_dir_all(&tables_dir).map_err(io_err(&tables_dir))?;
    let mut tables: HashMap<(u64, u64, u64, u64), GeneratedTable> = HashMap::new();
    let mut rows = Vec::new();

    for (i, cell) in grid.cells().into_iter().enumerate() {
        let mut row = CellRow {
            cell: i,
            status: "ok".into(),
            error: None,
            mode: None,
            window: None,
            cache_fraction: None,
            device: None,
            chunk_tuples: None,
            page_bytes: None,
            devices: None,
            seed: None,
            scale: None,
            request_count: None,
            bytes_read: None,
            sim_time: None,
            hit_ratio: None,
            etl_standin_full_scan_s: None,
            metrics_file: None,
        };
        match run_cell(cell, i, out, &tables_dir, &mut tables, &mut row) {
            Ok(()) => {}
            Err(e) => {
                row.status = "failed".into();
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }

    let summary = SweepSummary {
        schema: crate::experiment::METRICS_SCHEMA,
        axes: grid.axes.clone(),
        cells: rows,
    };
    let csv_path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in &summary.cells {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    let json_path = out.join("summary.json");
    fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n")
        .map_err(io_err(&json_path))?;
    Ok(summary)
}

fn run_cell(
    cell: Map<String, Value>,
    index: usize,
    out: &Path,
    tables_dir: &Path,
    tables: &mut HashMap<(u64, u64, u64, u64), GeneratedTable>,
    row: &mut CellRow,
) -> Result<()> {
    let config: BenchConfig = serde_json::from_value(Value::Object(cell))?;
    row.mode = Some(config.mode.to_string());
    row.window = Some(config.window);
    row.cache_fraction = config.cache_fraction;
    row.device = Some(config.device.to_string());
    row.chunk_tuples = Some(config.chunk_tuples);
    row.page_bytes = Some(config.page_bytes);
    row.devices = Some(config.devices);
    row.seed = Some(config.seed);
    row.scale = Some(config.scale);
    config.validate()?;

    let key = table_key(&config);
    if !tables.contains_key(&key) {
        let path: PathBuf = tables_dir.join(format!(
            "lineitem-s{}-n{}-c{}-p{}.htsm",
            key.0, key.1, key.2, key.3
        ));
        tables.insert(key, generate_table(config.seed, config.scale, config.chunking()?, &path)?);
    }
    let generated = &tables[&key];
    let report = run_experiment(&config, &generated.table, Some(&generated.columns))?;

    row.request_count = Some(report.totals.request_count);
    row.bytes_read = Some(report.totals.bytes_read);
    row.sim_time = Some(report.totals.sim_time);
    row.hit_ratio = Some(report.totals.hit_ratio);
    if let Some(profile) = config.device.profile() {
        row.etl_standin_full_scan_s = Some(full_scan_time(&generated.table, &profile, config.devices)?);
    }
    let name = format!("cell-{index:04}.json");
    let path = out.join(&name);
    fs::write(&path, report.to_json()?).map_err(io_err(&path))?;
    row.metrics_file = Some(name);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_are_the_cross_product_in_name_order() {
        let grid: SweepGrid = serde_json::from_str(
            r#"{"base": {"scale": 10}, "axes": {"window": [1, 30], "cache_fraction": [0.1, null]}}"#,
        )
        .unwrap();
        let cells = grid.cells();
        assert_eq!(cells.len(), 4);
        let pairs: Vec<(Value, Value)> = cells
            .iter()
            .map(|c| (c["cache_fraction"].clone(), c["window"].clone()))
            .collect();
        assert_eq!(
            pairs,
            vec![
                (0.1.into(), 1.into()),
                (0.1.into(), 30.into()),
                (Value::Null, 1.into()),
                (Value::Null, 30.into()),
            ]
        );
        assert!(cells.iter().all(|c| c["scale"] == 10));
    }

    #[test]
    fn empty_axes_give_the_base_cell() {
        let grid = SweepGrid::default();
        assert_eq!(grid.cells().len(), 1);
        let _: BenchConfig = serde_json::from_value(Value::Object(grid.cells().remove(0))).unwrap();
    }
}
