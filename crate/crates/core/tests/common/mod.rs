#![allow(dead_code)]

use std::path::Path;

use htsm_core::catalog::{
    str16, write_table, ChunkingConfig, ColumnData, ColumnDef, ColumnType, Table, TableSchema,
};
use htsm_core::device::{Backend, DeviceArray, DeviceProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small seeded lineitem-like table: sorted key, prices, rates, a
/// row-correlated date and a text column.
pub fn fixture(seed: u64, rows: usize) -> (TableSchema, Vec<ColumnData>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = TableSchema::new(
        vec![
            ColumnDef::new("orderkey", ColumnType::Int64),
            ColumnDef::new("quantity", ColumnType::Int64),
            ColumnDef::new("extendedprice", ColumnType::Float64),
            ColumnDef::new("discount", ColumnType::Float64),
            ColumnDef::new("tax", ColumnType::Float64),
            ColumnDef::new("shipdate", ColumnType::Date32),
            ColumnDef::new("shipmode", ColumnType::Str16),
        ],
        rows as u64,
    )
    .unwrap();
    let modes = ["AIR", "MAIL", "RAIL", "SHIP", "TRUCK"];
    let data = vec![
        ColumnData::Int64((0..rows as i64).map(|i| i / 4 + 1).collect()),
        ColumnData::Int64((0..rows).map(|_| rng.random_range(1..=50)).collect()),
        ColumnData::Float64(
            (0..rows)
                .map(|_| rng.random_range(90_000..=10_494_950) as f64 / 100.0)
                .collect(),
        ),
        ColumnData::Float64((0..rows).map(|_| rng.random_range(0..=10) as f64 / 100.0).collect()),
        ColumnData::Float64((0..rows).map(|_| rng.random_range(0..=8) as f64 / 100.0).collect()),
        ColumnData::Date32(
            (0..rows)
                .map(|i| 8_036 + (i * 2_500 / rows.max(1)) as i32 + rng.random_range(0..30))
                .collect(),
        ),
        ColumnData::Str16((0..rows).map(|_| str16(modes[rng.random_range(0..5)])).collect()),
    ];
    (schema, data)
}

pub fn write_fixture(
    dir: &Path,
    seed: u64,
    rows: usize,
    tuples_per_chunk: u64,
) -> (Table, Vec<ColumnData>) {
    let (schema, data) = fixture(seed, rows);
    let path = dir.join(format!("fixture-{seed}-{rows}.htsm"));
    write_table(
        &schema,
        ChunkingConfig::new(tuples_per_chunk, 4096).unwrap(),
        &data,
        &path,
    )
    .unwrap();
    (Table::open(&path).unwrap(), data)
}

/// Simulated devices that serve the real table bytes.
pub fn sim_array(table: &Table, devices: usize, profile: DeviceProfile) -> DeviceArray {
    let file = std::fs::File::open(&table.path).unwrap();
    DeviceArray::new(
        devices,
        Backend::Sim {
            profile,
            file: Some((file, table.file_len)),
        },
    )
    .unwrap()
}
