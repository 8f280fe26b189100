//! Seeded lineitem-like table generator.

use std::path::Path;

use htsm_core::catalog::{
    str16, write_table, ChunkingConfig, ColumnData, ColumnDef, ColumnType, Table, TableSchema,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Result;

/// Days since 1970-01-01 of 1992-01-02, the earliest ship date.
const FIRST_SHIPDATE: i32 = 8_036;
/// Span of ship dates in days (about seven years).
const SHIPDATE_SPAN: u64 = 2_526;

const SHIPMODES: [&str; 7] = ["AIR", "FOB", "MAIL", "RAIL", "REG AIR", "SHIP", "TRUCK"];
const INSTRUCTIONS: [&str; 4] = ["COLLECT COD", "DELIVER IN PERSON", "NONE", "TAKE BACK RETURN"];

pub const COLUMNS: [(&str, ColumnType); 16] = [
    ("orderkey", ColumnType::Int64),
    ("partkey", ColumnType::Int64),
    ("suppkey", ColumnType::Int64),
    ("linenumber", ColumnType::Int64),
    ("quantity", ColumnType::Int64),
    ("extendedprice", ColumnType::Float64),
    ("discount", ColumnType::Float64),
    ("tax", ColumnType::Float64),
    ("shipdate", ColumnType::Date32),
    ("commitdate", ColumnType::Date32),
    ("shipinstruct", ColumnType::Str16),
    ("shipmode", ColumnType::Str16),
    ("supplycost", ColumnType::Float64),
    ("retailprice", ColumnType::Float64),
    ("netweight", ColumnType::Float64),
    ("shippriority", ColumnType::Int64),
];

pub fn lineitem_schema(tuple_count: u64) -> TableSchema {
    TableSchema::new(
        COLUMNS
            .iter()
            .map(|(name, ty)| ColumnDef::new(*name, *ty))
            .collect(),
        tuple_count,
    )
    .expect("static schema is valid")
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream seed for one column (or any other sub-stream) of a run.
pub fn mix(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

fn cents(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> f64 {
    rng.random_range(lo..=hi) as f64 / 100.0
}

/// Ship date trend for `row`: rises with the row index so that date filters
/// prune chunks, with up to four months of noise added by the caller.
fn date_base(row: usize, rows: usize) -> i32 {
    FIRST_SHIPDATE + (row as u64 * SHIPDATE_SPAN / rows.max(1) as u64) as i32
}

/// Values of column `c` for `rows` tuples.
pub fn generate_column(seed: u64, c: usize, rows: usize) -> ColumnData {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, c as u64));
    let r = &mut rng;
    match COLUMNS[c].0 {
        "orderkey" => ColumnData::Int64((0..rows as i64).map(|i| i / 4 + 1).collect()),
        "partkey" => ColumnData::Int64((0..rows).map(|_| r.random_range(1..=200_000)).collect()),
        "suppkey" => ColumnData::Int64((0..rows).map(|_| r.random_range(1..=10_000)).collect()),
        "linenumber" => ColumnData::Int64((0..rows).map(|_| r.random_range(1..=7)).collect()),
        "quantity" => ColumnData::Int64((0..rows).map(|_| r.random_range(1..=50)).collect()),
        "extendedprice" => {
            ColumnData::Float64((0..rows).map(|_| cents(r, 90_000, 10_494_950)).collect())
        }
        "discount" => ColumnData::Float64((0..rows).map(|_| cents(r, 0, 10)).collect()),
        "tax" => ColumnData::Float64((0..rows).map(|_| cents(r, 0, 8)).collect()),
        "shipdate" => ColumnData::Date32(
            (0..rows)
                .map(|i| date_base(i, rows) + r.random_range(0..=121))
                .collect(),
        ),
        "commitdate" => ColumnData::Date32(
            (0..rows)
                .map(|i| date_base(i, rows) + r.random_range(30..=90))
                .collect(),
        ),
        "shipinstruct" => ColumnData::Str16(
            (0..rows)
                .map(|_| str16(INSTRUCTIONS[r.random_range(0..INSTRUCTIONS.len())]))
                .collect(),
        ),
        "shipmode" => ColumnData::Str16(
            (0..rows)
                .map(|_| str16(SHIPMODES[r.random_range(0..SHIPMODES.len())]))
                .collect(),
        ),
        "supplycost" => ColumnData::Float64((0..rows).map(|_| cents(r, 100, 100_000)).collect()),
        "retailprice" => ColumnData::Float64((0..rows).map(|_| cents(r, 90_000, 209_900)).collect()),
        "netweight" => ColumnData::Float64((0..rows).map(|_| cents(r, 10, 500_000)).collect()),
        "shippriority" => ColumnData::Int64(vec![0; rows]),
        other => unreachable!("no generator for column {other}"),
    }
}

pub fn generate_columns(seed: u64, rows: usize) -> Vec<ColumnData> {
    (0..COLUMNS.len())
        .map(|c| generate_column(seed, c, rows))
        .collect()
}

/// A written table together with the in-memory copy it was written from.
#[derive(Debug, Clone)]
pub struct GeneratedTable {
    pub table: Table,
    pub columns: Vec<ColumnData>,
}

pub fn generate_table(
    seed: u64,
    scale: u64,
    chunking: ChunkingConfig,
    path: &Path,
) -> Result<GeneratedTable> {
    let schema = lineitem_schema(scale);
    let columns = generate_columns(seed, scale as usize);
    write_table(&schema, chunking, &columns, path)?;
    let table = Table::open(path)?;
    Ok(GeneratedTable { table, columns })
}
