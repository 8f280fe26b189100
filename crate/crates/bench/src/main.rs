use std::fs;
use std::io::Read;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use htsm_bench::config::{BenchConfig, DeviceKind, Mode};
use htsm_bench::experiment::{load_columns, run_experiment};
use htsm_bench::gen::generate_table;
use htsm_bench::report::{report, Format};
use htsm_bench::sweep::{sweep, SweepGrid};
use htsm_core::catalog::{ChunkingConfig, Table};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "htsm", version, about = "Shared-scan columnar storage benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded lineitem-like table file.
    Gen {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        scale: u64,
        #[arg(long)]
        out: PathBuf,
        /// Tuples per chunk.
        #[arg(long, default_value_t = 4096)]
        chunk_tuples: u64,
        #[arg(long, default_value_t = 4096)]
        page_bytes: u64,
    },
    /// Run batches of generated queries against a table and write metrics.
    Run {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value = "highth")]
        mode: Mode,
        #[arg(long, default_value_t = 30)]
        window: usize,
        /// Fraction of table bytes, or `unlimited`.
        #[arg(long, default_value = "0.2")]
        cache_frac: String,
        #[arg(long, default_value = "hdd")]
        device: DeviceKind,
        #[arg(long, default_value_t = 3)]
        batches: usize,
        #[arg(long, default_value_t = 16)]
        queries: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        devices: usize,
        /// Simulated seconds charged per delivered tuple.
        #[arg(long, default_value_t = 0.0)]
        cpu_cost: f64,
        /// Numeric columns the workload draws from (0 = all).
        #[arg(long, default_value_t = 0)]
        column_pool: usize,
        /// Reads in flight; above 1 a reader thread serves them.
        #[arg(long, default_value_t = 1)]
        pipeline_depth: usize,
        /// Serve each device's queue on its own thread.
        #[arg(long)]
        parallel_devices: bool,
        #[arg(long)]
        no_coalescing: bool,
        /// Check every result against a direct scan of the table columns.
        #[arg(long)]
        verify: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the cross product of a grid file.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize metrics files.
    Report {
        /// A metrics file or a directory of them.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "text")]
        format: Format,
    },
}

fn parse_fraction(s: &str) -> anyhow::Result<Option<f64>> {
    if s.eq_ignore_ascii_case("unlimited") {
        return Ok(None);
    }
    let f: f64 = s.parse().with_context(|| format!("bad cache fraction `{s}`"))?;
    Ok(Some(f))
}

fn sha256_file(path: &PathBuf) -> anyhow::Result<String> {
    let mut file = fs::File::open(path).with_context(|| path.display().to_string())?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Gen {
            seed,
            scale,
            out,
            chunk_tuples,
            page_bytes,
        } => {
            let chunking = ChunkingConfig::new(chunk_tuples, page_bytes)?;
            let g = generate_table(seed, scale, chunking, &out)?;
            println!(
                "wrote {} ({} tuples, {} chunks, {} bytes) sha256 {}",
                out.display(),
                scale,
                g.table.directory.chunk_count(),
                g.table.file_len,
                sha256_file(&out)?
            );
        }
        Command::Run {
            table,
            mode,
            window,
            cache_frac,
            device,
            batches,
            queries,
            seed,
            devices,
            cpu_cost,
            column_pool,
            pipeline_depth,
            parallel_devices,
            no_coalescing,
            verify,
            out,
        } => {
            let t = Table::open(&table)?;
            let chunking = t.directory.chunking();
            let config = BenchConfig {
                seed,
                scale: t.schema.tuple_count(),
                batches,
                queries_per_batch: queries,
                mode,
                window,
                cache_fraction: parse_fraction(&cache_frac)?,
                device,
                chunk_tuples: chunking.tuples_per_chunk(),
                page_bytes: chunking.page_bytes(),
                devices,
                cpu_cost_per_tuple: cpu_cost,
                column_pool,
                pipeline_depth,
                parallel_devices,
                coalescing: !no_coalescing,
            };
            let columns = if verify { Some(load_columns(&t)?) } else { None };
            let report = run_experiment(&config, &t, columns.as_deref())?;
            fs::write(&out, report.to_json()?).with_context(|| out.display().to_string())?;
            println!(
                "{} W={} cache={}: {} requests, {} bytes, sim time {:.6} s, hit ratio {:.4}{}",
                config.mode,
                config.window,
                cache_frac,
                report.totals.request_count,
                report.totals.bytes_read,
                report.totals.sim_time,
                report.totals.hit_ratio,
                if verify { ", results verified" } else { "" }
            );
        }
        Command::Sweep { grid, out } => {
            let g = SweepGrid::load(&grid)?;
            let summary = sweep(&g, &out)?;
            let failed = summary.cells.iter().filter(|c| c.status != "ok").count();
            println!(
                "{} cells, {} failed; summary in {}",
                summary.cells.len(),
                failed,
                out.join("summary.csv").display()
            );
            if failed == summary.cells.len() {
                bail!("every sweep cell failed");
            }
        }
        Command::Report { input, format } => {
            print!("{}", report(&input, format)?);
        }
    }
    Ok(())
}
