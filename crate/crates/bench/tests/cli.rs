use std::process::Command;

fn htsm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_htsm")).args(args).output().unwrap()
}

#[test]
fn gen_run_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.htsm");
    let t = table.to_str().unwrap();
    let g = htsm(&["gen", "--scale", "8192", "--out", t]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    assert!(String::from_utf8_lossy(&g.stdout).contains("sha256"));

    let metrics = dir.path().join("m.json");
    let r = htsm(&[
        "run", "--table", t, "--mode", "cs", "--batches", "1", "--cache-frac", "unlimited",
        "--device", "file", "--verify", "--out", metrics.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("results verified"));

    let rep = htsm(&["report", "--in", metrics.to_str().unwrap(), "--format", "csv"]);
    assert!(rep.status.success());
    assert!(!rep.stdout.is_empty());
}

#[test]
fn bad_input_exits_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.htsm");
    let out = dir.path().join("m.json");
    let r = htsm(&["run", "--table", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!r.status.success());
    assert!(!r.stderr.is_empty());

    assert!(!htsm(&["run", "--mode", "fifo"]).status.success());
    assert!(!htsm(&["report", "--in", missing.to_str().unwrap()]).status.success());

    let grid = dir.path().join("grid.json");
    std::fs::write(&grid, r#"{"base": {"scale": 4096, "window": 0}, "axes": {}}"#).unwrap();
    let s = htsm(&["sweep", "--grid", grid.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!s.status.success());
}
