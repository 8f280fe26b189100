use std::fs;

use htsm_bench::config::{BenchConfig, Mode};
use htsm_bench::experiment::{batch_workload, run_experiment};
use htsm_bench::gen::generate_table;
use htsm_bench::report::{load_runs, parse_metrics, report, Format};
use htsm_bench::sweep::{sweep, SweepGrid};
use htsm_core::catalog::Table;
use serde_json::json;

fn small(rows: u64) -> BenchConfig {
    BenchConfig {
        scale: rows,
        batches: 1,
        ..BenchConfig::default()
    }
}

#[test]
fn empty_table_runs_to_empty_results() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(0);
    let g = generate_table(c.seed, 0, c.chunking().unwrap(), &dir.path().join("t.htsm")).unwrap();
    assert_eq!(g.table.directory.chunk_count(), 0);
    let reopened = Table::open(&g.table.path).unwrap();
    assert_eq!(reopened.schema.tuple_count(), 0);
    let r = run_experiment(&c, &g.table, Some(&g.columns)).unwrap();
    assert_eq!(r.totals.request_count, 0);
    assert_eq!(r.totals.bytes_read, 0);
}

#[test]
fn generation_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(10_000);
    let a = dir.path().join("a.htsm");
    let b = dir.path().join("b.htsm");
    generate_table(7, 10_000, c.chunking().unwrap(), &a).unwrap();
    generate_table(7, 10_000, c.chunking().unwrap(), &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let other = dir.path().join("c.htsm");
    generate_table(8, 10_000, c.chunking().unwrap(), &other).unwrap();
    assert_ne!(fs::read(&a).unwrap(), fs::read(&other).unwrap());
}

#[test]
fn large_batch_shares_at_least_as_well_as_lru() {
    let dir = tempfile::tempdir().unwrap();
    let c = BenchConfig {
        queries_per_batch: 64,
        ..small(40_960)
    };
    let g = generate_table(c.seed, c.scale, c.chunking().unwrap(), &dir.path().join("t.htsm")).unwrap();
    assert_eq!(batch_workload(&c, &g.table, 0).len(), 64);
    let count = |mode| {
        let cfg = BenchConfig { mode, ..c.clone() };
        run_experiment(&cfg, &g.table, Some(&g.columns)).unwrap().totals.request_count
    };
    let (lru, high) = (count(Mode::Lru), count(Mode::Highth));
    assert!(high <= lru, "highth {high} lru {lru}");
}

#[test]
fn page_doubling_halves_requests_without_coalescing() {
    let dir = tempfile::tempdir().unwrap();
    let mut counts = Vec::new();
    for page in [4096u64, 8192] {
        let c = BenchConfig {
            page_bytes: page,
            coalescing: false,
            cache_fraction: None,
            ..small(20_480)
        };
        let path = dir.path().join(format!("p{page}.htsm"));
        let g = generate_table(c.seed, c.scale, c.chunking().unwrap(), &path).unwrap();
        counts.push(run_experiment(&c, &g.table, None).unwrap().totals.request_count);
    }
    assert_eq!(counts[0], 2 * counts[1], "{counts:?}");
}

fn grid(dir: &std::path::Path, axes: serde_json::Value) -> SweepGrid {
    let path = dir.join("grid.json");
    fs::write(
        &path,
        serde_json::to_string(&json!({
            "base": {"scale": 20480, "batches": 1, "cache_fraction": 0.1},
            "axes": axes,
        }))
        .unwrap(),
    )
    .unwrap();
    SweepGrid::load(&path).unwrap()
}

#[test]
fn single_cell_sweep_matches_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let g = grid(dir.path(), json!({"mode": ["cs"]}));
    let out = dir.path().join("out");
    let summary = sweep(&g, &out).unwrap();
    assert_eq!(summary.cells.len(), 1);
    assert_eq!(summary.cells[0].status, "ok");
    let written = fs::read_to_string(out.join(summary.cells[0].metrics_file.as_ref().unwrap())).unwrap();

    let c = BenchConfig {
        mode: Mode::Cs,
        cache_fraction: Some(0.1),
        ..small(20_480)
    };
    let t = generate_table(c.seed, c.scale, c.chunking().unwrap(), &dir.path().join("t.htsm")).unwrap();
    let direct = run_experiment(&c, &t.table, None).unwrap();
    let parsed = parse_metrics(&out, &written).unwrap();
    assert_eq!(parsed.totals.request_count, direct.totals.request_count);
    assert_eq!(parsed.totals.bytes_read, direct.totals.bytes_read);
    assert_eq!(parsed.batches[0].queries.len(), direct.batches[0].queries.len());
    assert!(out.join("summary.csv").exists());
}

#[test]
fn window_sweep_is_non_increasing() {
    let dir = tempfile::tempdir().unwrap();
    let g = grid(dir.path(), json!({"window": [1, 5, 10, 15, 30]}));
    let summary = sweep(&g, &dir.path().join("out")).unwrap();
    let counts: Vec<u64> = summary.cells.iter().map(|c| c.request_count.unwrap()).collect();
    assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
}

#[test]
fn failing_cell_is_recorded_and_sweep_continues() {
    let dir = tempfile::tempdir().unwrap();
    let g = grid(dir.path(), json!({"window": [0, 5]}));
    let summary = sweep(&g, &dir.path().join("out")).unwrap();
    assert_eq!(summary.cells[0].status, "failed");
    assert!(summary.cells[0].error.is_some());
    assert_eq!(summary.cells[1].status, "ok");
}

#[test]
fn report_lists_deltas_and_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(20_480);
    let t = generate_table(c.seed, c.scale, c.chunking().unwrap(), &dir.path().join("t.htsm")).unwrap();
    let runs = dir.path().join("runs");
    fs::create_dir(&runs).unwrap();
    for (name, mode) in [("a-lru.json", Mode::Lru), ("b-highth.json", Mode::Highth)] {
        let cfg = BenchConfig { mode, ..c.clone() };
        fs::write(runs.join(name), run_experiment(&cfg, &t.table, None).unwrap().to_json().unwrap()).unwrap();
    }
    assert_eq!(load_runs(&runs).unwrap().len(), 2);
    let text = report(&runs, Format::Text).unwrap();
    assert!(text.contains("a-lru") && text.contains("b-highth"), "{text}");
    let csv = report(&runs, Format::Csv).unwrap();
    assert!(csv.lines().count() > 2);

    let good = fs::read_to_string(runs.join("a-lru.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
    v.as_object_mut().unwrap().remove("totals");
    let err = parse_metrics(&runs, &v.to_string()).unwrap_err().to_string();
    assert!(err.contains("totals"), "{err}");
    v.as_object_mut().unwrap().remove("schema");
    let err = parse_metrics(&runs, &v.to_string()).unwrap_err().to_string();
    assert!(err.contains("schema"), "{err}");
}
