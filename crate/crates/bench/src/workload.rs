//! Random batches of the benchmark query family.

use htsm_core::catalog::{CmpOp, Predicate, Table};
use htsm_core::engine::{Agg, AggExpr, Query};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Value range of one numeric column, from the zone maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

pub fn numeric_stats(table: &Table) -> Vec<ColumnStats> {
    table
        .schema
        .columns()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.ty.is_numeric())
        .filter_map(|(id, c)| {
            let (min, max) = table.directory.column_range(id as u16)?;
            Some(ColumnStats {
                name: c.name.clone(),
                min,
                max,
            })
        })
        .collect()
}

/// Draw a filter constant around the middle of the range, clipped to it.
pub fn draw_alpha(rng: &mut ChaCha8Rng, stats: &ColumnStats) -> f64 {
    let mid = (stats.min + stats.max) / 2.0;
    let sd = (stats.max - stats.min) / 6.0;
    if sd <= 0.0 {
        return stats.min;
    }
    let normal = Normal::new(mid, sd).expect("finite positive deviation");
    normal.sample(rng).clamp(stats.min, stats.max)
}

/// `count` queries over a random subset of `pool` numeric columns. A small
/// pool makes queries share columns; `pool = 0` uses every numeric column.
pub fn generate_workload(
    seed: u64,
    count: usize,
    table_name: &str,
    stats: &[ColumnStats],
    pool: usize,
) -> Vec<Query> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if stats.is_empty() {
        return Vec::new();
    }
    let mut candidates: Vec<&ColumnStats> = stats.iter().collect();
    candidates.shuffle(&mut rng);
    let take = if pool == 0 { candidates.len() } else { pool.min(candidates.len()) };
    candidates.truncate(take);

    let has = |name: &str| candidates.iter().any(|c| c.name == name);
    let product = has("extendedprice") && has("discount") && has("tax");

    (0..count)
        .map(|_| {
            let agg = if rng.random_bool(0.5) { Agg::Sum } else { Agg::Avg };
            let expr = if product && rng.random_bool(0.2) {
                AggExpr::DiscountedPrice {
                    price: "extendedprice".into(),
                    discount: "discount".into(),
                    tax: "tax".into(),
                }
            } else {
                AggExpr::Column(candidates[rng.random_range(0..candidates.len())].name.clone())
            };
            let column = candidates[rng.random_range(0..candidates.len())];
            let op = if rng.random_bool(0.5) { CmpOp::Ge } else { CmpOp::Lt };
            let threshold = draw_alpha(&mut rng, column);
            Query {
                agg,
                expr,
                table: table_name.to_string(),
                filter: Some(Predicate {
                    column: column.name.clone(),
                    op,
                    threshold,
                }),
            }
        })
        .collect()
}
