//! Human-readable and plot-ready summaries of metrics files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::experiment::{MetricsReport, METRICS_SCHEMA};
use crate::{io_err, BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (expected text or csv)")),
        }
    }
}

/// A metrics file and the label it is reported under.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub label: String,
    pub report: MetricsReport,
}

/// Parse one metrics document, checking the schema version first.
pub fn parse_metrics(path: &Path, text: &str) -> Result<MetricsReport> {
    let fail = |detail: String| BenchError::Metrics {
        path: path.to_path_buf(),
        detail,
    };
    let value: Value = serde_json::from_str(text).map_err(|e| fail(format!("not JSON: {e}")))?;
    match value.get("schema") {
        None => return Err(fail("missing field `schema`".into())),
        Some(v) if v.as_u64() == Some(METRICS_SCHEMA as u64) => {}
        Some(v) => {
            return Err(fail(format!(
                "unsupported schema {v}, expected {METRICS_SCHEMA}"
            )))
        }
    }
    serde_json::from_value(value).map_err(|e| fail(format!("schema {METRICS_SCHEMA}: {e}")))
}

/// Load a single file or every `*.json` metrics file directly inside a
/// directory (sweep summaries are skipped).
pub fn load_runs(input: &Path) -> Result<Vec<LoadedRun>> {
    let mut paths: Vec<PathBuf> = if input.is_dir() {
        let mut v = Vec::new();
        for entry in fs::read_dir(input).map_err(io_err(input))? {
            let p = entry.map_err(io_err(input))?.path();
            let is_json = p.extension().is_some_and(|e| e == "json");
            let is_summary = p.file_name().is_some_and(|n| n == "summary.json");
            if p.is_file() && is_json && !is_summary {
                v.push(p);
            }
        }
        v
    } else {
        vec![input.to_path_buf()]
    };
    paths.sort();
    if paths.is_empty() {
        return Err(BenchError::Metrics {
            path: input.to_path_buf(),
            detail: "no metrics files found".into(),
        });
    }
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(io_err(&p))?;
            let report = parse_metrics(&p, &text)?;
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(LoadedRun { label, report })
        })
        .collect()
}

fn fraction(f: Option<f64>) -> String {
    f.map_or_else(|| "unlimited".to_string(), |f| format!("{f}"))
}

/// Percent fewer requests than `base`; positive when `run` issues fewer.
pub fn io_reduction_pct(base: u64, run: u64) -> f64 {
    if base == 0 {
        0.0
    } else {
        (base as f64 - run as f64) / base as f64 * 100.0
    }
}

/// Cumulative time after the i-th completed query, per batch.
fn cumulative(report: &MetricsReport) -> Vec<Vec<f64>> {
    report
        .batches
        .iter()
        .map(|b| {
            let mut q: Vec<_> = b.queries.iter().collect();
            q.sort_by_key(|q| q.completion_order);
            q.iter().map(|q| q.sim_time).collect()
        })
        .collect()
}

pub fn render_text(runs: &[LoadedRun]) -> String {
    let mut out = String::new();
    for run in runs {
        let r = &run.report;
        let c = &r.config;
        let _ = writeln!(out, "== {} ==", run.label);
        let _ = writeln!(
            out,
            "mode {}  window {}  cache {}  device {}  devices {}  batches {} x {} queries",
            c.mode,
            c.window,
            fraction(c.cache_fraction),
            c.device,
            c.devices,
            c.batches,
            c.queries_per_batch
        );
        let _ = writeln!(
            out,
            "table {} tuples, {} chunks, n={}, page={} B",
            r.table.tuples, r.table.chunks, r.table.tuples_per_chunk, r.table.page_bytes
        );
        let t = &r.totals;
        let _ = writeln!(
            out,
            "requests {}  bytes {}  sim time {:.6} s  hit ratio {:.4}",
            t.request_count, t.bytes_read, t.sim_time, t.hit_ratio
        );
        let curves = cumulative(r);
        let _ = write!(out, "cumulative time by finished query\n  {:>5}", "i");
        for b in 0..curves.len() {
            let _ = write!(out, " {:>12}", format!("batch {b}"));
        }
        out.push('\n');
        let longest = curves.iter().map(Vec::len).max().unwrap_or(0);
        for i in 0..longest {
            let _ = write!(out, "  {:>5}", i + 1);
            for curve in &curves {
                match curve.get(i) {
                    Some(v) => {
                        let _ = write!(out, " {v:>12.6}");
                    }
                    None => {
                        let _ = write!(out, " {:>12}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }

    // Requests against cache fraction, one series per (mode, window).
    let mut series: BTreeMap<(String, usize), Vec<(String, u64)>> = BTreeMap::new();
    for run in runs {
        let c = &run.report.config;
        series
            .entry((c.mode.to_string(), c.window))
            .or_default()
            .push((fraction(c.cache_fraction), run.report.totals.request_count));
    }
    let _ = writeln!(out, "requests by cache fraction");
    for ((mode, window), points) in &series {
        let cells: Vec<String> = points.iter().map(|(f, n)| format!("{f}: {n}")).collect();
        let _ = writeln!(out, "  {mode} W={window}  {}", cells.join("  "));
    }

    if runs.len() > 1 {
        let base = &runs[0];
        let _ = writeln!(out, "\ndeltas against {}", base.label);
        for run in &runs[1..] {
            let (a, b) = (&base.report.totals, &run.report.totals);
            let _ = writeln!(
                out,
                "  {}: requests {:+} ({:.1}% I/O reduction)  sim time {:+.6} s  hit ratio {:+.4}",
                run.label,
                b.request_count as i64 - a.request_count as i64,
                io_reduction_pct(a.request_count, b.request_count),
                b.sim_time - a.sim_time,
                b.hit_ratio - a.hit_ratio
            );
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    run: &'a str,
    mode: String,
    window: usize,
    cache_fraction: String,
    batch: usize,
    query_index: usize,
    cumulative_sim_time: f64,
    run_request_count: u64,
    run_bytes_read: u64,
    run_sim_time: f64,
    run_hit_ratio: f64,
    io_reduction_pct_vs_first: f64,
}

/// Long-format rows: one per finished query, with run totals repeated.
pub fn render_csv(runs: &[LoadedRun]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let base = runs.first().map_or(0, |r| r.report.totals.request_count);
    for run in runs {
        let r = &run.report;
        for (batch, curve) in cumulative(r).into_iter().enumerate() {
            for (i, t) in curve.into_iter().enumerate() {
                w.serialize(CsvRow {
                    run: &run.label,
                    mode: r.config.mode.to_string(),
                    window: r.config.window,
                    cache_fraction: fraction(r.config.cache_fraction),
                    batch,
                    query_index: i + 1,
                    cumulative_sim_time: t,
                    run_request_count: r.totals.request_count,
                    run_bytes_read: r.totals.bytes_read,
                    run_sim_time: r.totals.sim_time,
                    run_hit_ratio: r.totals.hit_ratio,
                    io_reduction_pct_vs_first: io_reduction_pct(base, r.totals.request_count),
                })?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn report(input: &Path, format: Format) -> Result<String> {
    let runs = load_runs(input)?;
    match format {
        Format::Text => Ok(render_text(&runs)),
        Format::Csv => render_csv(&runs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_arithmetic() {
        assert_eq!(io_reduction_pct(200, 50), 75.0);
        assert_eq!(io_reduction_pct(0, 5), 0.0);
        assert_eq!(io_reduction_pct(100, 120), -20.0);
    }

    #[test]
    fn schema_errors_name_the_problem() {
        let p = Path::new("m.json");
        let err = parse_metrics(p, r#"{"config": {}}"#).unwrap_err().to_string();
        assert!(err.contains("`schema`"), "{err}");
        let err = parse_metrics(p, r#"{"schema": 2}"#).unwrap_err().to_string();
        assert!(err.contains("unsupported schema 2"), "{err}");
        let err = parse_metrics(p, r#"{"schema": 1, "config": {}, "table": {}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("missing field `tuples`"), "{err}");
    }
}
