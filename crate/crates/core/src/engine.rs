//! Minimal aggregate query layer.
//!
//! Accepted grammar (keywords case-insensitive):
//!
//! ```text
//! SELECT <SUM|AVG>(<expr>) FROM <table> [WHERE <col> <op> <literal>]
//! expr := <col> | <col> * (1 - <col>) * (1 + <col>)
//! op   := >= | <
//! ```
//!
//! Sums are accumulated in `f64` in a fixed order: rows ascending inside a
//! chunk give a per-chunk partial, and partials are added in ascending chunk
//! id. The engine and [`oracle_scan`] follow the same order, so their results
//! compare bit-for-bit regardless of the order chunks were delivered in.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::catalog::{
    CatalogError, ChunkId, CmpOp, ColumnData, ColumnId, ColumnType, Predicate, Table, TableSchema,
};
use crate::device::DeviceArray;
use crate::scheduler::{self, Delivery, DeliverySink, QueryId, RunConfig, RunReport, SchedulerError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` is not numeric")]
    NonNumeric(String),
    #[error("chunk {chunk_id} payload is missing column {column_id}")]
    MissingColumn { chunk_id: ChunkId, column_id: ColumnId },
    #[error("chunk {chunk_id} column {column_id} payload has {actual} bytes, expected {expected}")]
    PayloadSize {
        chunk_id: ChunkId,
        column_id: ColumnId,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Agg {
    Sum,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AggExpr {
    Column(String),
    /// `price * (1 - discount) * (1 + tax)`
    DiscountedPrice {
        price: String,
        discount: String,
        tax: String,
    },
}

impl AggExpr {
    pub fn columns(&self) -> Vec<&str> {
        match self {
            AggExpr::Column(c) => vec![c],
            AggExpr::DiscountedPrice {
                price,
                discount,
                tax,
            } => vec![price, discount, tax],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub agg: Agg,
    pub expr: AggExpr,
    pub table: String,
    pub filter: Option<Predicate>,
}

impl Query {
    /// Column names in the order they appear in the query text, deduplicated.
    pub fn referenced_columns(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        let filter = self.filter.as_ref().map(|f| f.column.as_str());
        for c in self.expr.columns().into_iter().chain(filter) {
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let agg = match self.agg {
            Agg::Sum => "SUM",
            Agg::Avg => "AVG",
        };
        let expr = match &self.expr {
            AggExpr::Column(c) => c.clone(),
            AggExpr::DiscountedPrice {
                price,
                discount,
                tax,
            } => format!("{price} * (1 - {discount}) * (1 + {tax})"),
        };
        write!(f, "SELECT {agg}({expr}) FROM {}", self.table)?;
        if let Some(p) = &self.filter {
            // `{:?}` prints the shortest representation that parses back exactly.
            write!(f, " WHERE {} {} {:?}", p.column, p.op.symbol(), p.threshold)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Sym(&'static str),
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_digit()
                    || chars[i] == '.'
                    || chars[i] == 'e'
                    || chars[i] == 'E'
                    || ((chars[i] == '-' || chars[i] == '+')
                        && matches!(chars[i - 1], 'e' | 'E')))
            {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| EngineError::Parse(format!("bad number `{s}`")))?;
            out.push(Token::Number(v));
        } else {
            let sym = match (c, chars.get(i + 1)) {
                ('>', Some('=')) => ">=",
                ('<', _) => "<",
                ('>', _) => ">",
                ('(', _) => "(",
                (')', _) => ")",
                ('*', _) => "*",
                ('-', _) => "-",
                ('+', _) => "+",
                _ => return Err(EngineError::Parse(format!("unexpected character `{c}`"))),
            };
            i += sym.len();
            out.push(Token::Sym(sym));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        match self.next() {
            Some(Token::Ident(s)) if s.eq_ignore_ascii_case(kw) => Ok(()),
            other => Err(EngineError::Parse(format!("expected {kw}, found {other:?}"))),
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.next() {
            Some(Token::Ident(s)) => Ok(s),
            other => Err(EngineError::Parse(format!(
                "expected identifier, found {other:?}"
            ))),
        }
    }

    fn sym(&mut self, sym: &str) -> Result<()> {
        match self.next() {
            Some(Token::Sym(s)) if s == sym => Ok(()),
            other => Err(EngineError::Parse(format!("expected `{sym}`, found {other:?}"))),
        }
    }

    fn one(&mut self) -> Result<()> {
        match self.next() {
            Some(Token::Number(v)) if v == 1.0 => Ok(()),
            other => Err(EngineError::Parse(format!("expected `1`, found {other:?}"))),
        }
    }

    fn literal(&mut self) -> Result<f64> {
        let negative = if self.peek() == Some(&Token::Sym("-")) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.next() {
            Some(Token::Number(v)) => Ok(if negative { -v } else { v }),
            other => Err(EngineError::Parse(format!("expected number, found {other:?}"))),
        }
    }

    fn expr(&mut self) -> Result<AggExpr> {
        let first = self.ident()?;
        if self.peek() != Some(&Token::Sym("*")) {
            return Ok(AggExpr::Column(first));
        }
        self.sym("*")?;
        self.sym("(")?;
        self.one()?;
        self.sym("-")?;
        let discount = self.ident()?;
        self.sym(")")?;
        self.sym("*")?;
        self.sym("(")?;
        self.one()?;
        self.sym("+")?;
        let tax = self.ident()?;
        self.sym(")")?;
        Ok(AggExpr::DiscountedPrice {
            price: first,
            discount,
            tax,
        })
    }
}

impl FromStr for Query {
    type Err = EngineError;

    fn from_str(text: &str) -> Result<Self> {
        let mut p = Parser {
            tokens: tokenize(text)?,
            pos: 0,
        };
        p.keyword("SELECT")?;
        let agg = match p.ident()?.to_ascii_uppercase().as_str() {
            "SUM" => Agg::Sum,
            "AVG" => Agg::Avg,
            other => return Err(EngineError::Parse(format!("unsupported aggregate `{other}`"))),
        };
        p.sym("(")?;
        let expr = p.expr()?;
        p.sym(")")?;
        p.keyword("FROM")?;
        let table = p.ident()?;
        let filter = if p.peek().is_some() {
            p.keyword("WHERE")?;
            let column = p.ident()?;
            let op = match p.next() {
                Some(Token::Sym(">=")) => CmpOp::Ge,
                Some(Token::Sym("<")) => CmpOp::Lt,
                other => {
                    return Err(EngineError::Parse(format!(
                        "unsupported comparison {other:?} (expected >= or <)"
                    )))
                }
            };
            let threshold = p.literal()?;
            Some(Predicate {
                column,
                op,
                threshold,
            })
        } else {
            None
        };
        if let Some(t) = p.peek() {
            return Err(EngineError::Parse(format!("trailing input at {t:?}")));
        }
        Ok(Query {
            agg,
            expr,
            table,
            filter,
        })
    }
}

/// Columns to read, chunks to visit and the request window of one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPlan {
    pub required_columns: BTreeSet<ColumnId>,
    pub pruned_chunks: Vec<ChunkId>,
    pub window_size: usize,
}

/// Resolve the query's columns and prune chunks with the zone maps.
pub fn plan(query: &Query, table: &Table, window_size: usize) -> Result<QueryPlan> {
    let bound = BoundQuery::bind(query, &table.schema)?;
    let pruned_chunks = table
        .directory
        .prune_chunks(&table.schema, query.filter.as_ref())?;
    Ok(QueryPlan {
        required_columns: bound.required_columns(),
        pruned_chunks,
        window_size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BoundExpr {
    Column(ColumnId, ColumnType),
    DiscountedPrice([(ColumnId, ColumnType); 3]),
}

/// A query with column names resolved against a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundQuery {
    agg: Agg,
    expr: BoundExpr,
    filter: Option<(ColumnId, ColumnType, CmpOp, f64)>,
}

impl BoundQuery {
    pub fn bind(query: &Query, schema: &TableSchema) -> Result<Self> {
        let resolve = |name: &str| -> Result<(ColumnId, ColumnType)> {
            let id = schema
                .column_id(name)
                .ok_or_else(|| EngineError::UnknownColumn(name.to_string()))?;
            let ty = schema.columns()[id as usize].ty;
            if !ty.is_numeric() {
                return Err(EngineError::NonNumeric(name.to_string()));
            }
            Ok((id, ty))
        };
        let expr = match &query.expr {
            AggExpr::Column(c) => {
                let (id, ty) = resolve(c)?;
                BoundExpr::Column(id, ty)
            }
            AggExpr::DiscountedPrice {
                price,
                discount,
                tax,
            } => BoundExpr::DiscountedPrice([resolve(price)?, resolve(discount)?, resolve(tax)?]),
        };
        let filter = match &query.filter {
            Some(p) => {
                let (id, ty) = resolve(&p.column)?;
                Some((id, ty, p.op, p.threshold))
            }
            None => None,
        };
        Ok(Self {
            agg: query.agg,
            expr,
            filter,
        })
    }

    pub fn agg(&self) -> Agg {
        self.agg
    }

    pub fn required_columns(&self) -> BTreeSet<ColumnId> {
        let mut cols = BTreeSet::new();
        match self.expr {
            BoundExpr::Column(id, _) => {
                cols.insert(id);
            }
            BoundExpr::DiscountedPrice(parts) => cols.extend(parts.iter().map(|p| p.0)),
        }
        if let Some((id, ..)) = self.filter {
            cols.insert(id);
        }
        cols
    }
}

#[inline]
fn numeric_at(ty: ColumnType, bytes: &[u8], row: usize) -> f64 {
    match ty {
        ColumnType::Int64 => {
            i64::from_le_bytes(bytes[row * 8..row * 8 + 8].try_into().unwrap()) as f64
        }
        ColumnType::Float64 => f64::from_le_bytes(bytes[row * 8..row * 8 + 8].try_into().unwrap()),
        ColumnType::Date32 => {
            i32::from_le_bytes(bytes[row * 4..row * 4 + 4].try_into().unwrap()) as f64
        }
        ColumnType::Str16 => unreachable!("bound queries reference numeric columns only"),
    }
}

/// Running aggregate: sum of matching values and their count.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AggState {
    pub sum: f64,
    pub count: u64,
}

impl AggState {
    /// Add a chunk partial. Chunks without matches leave the state untouched.
    pub fn absorb(&mut self, partial: AggState) {
        if partial.count > 0 {
            self.sum += partial.sum;
            self.count += partial.count;
        }
    }
}

/// Aggregate of one chunk's rows, summed from zero in row order.
pub fn chunk_partial(
    query: &BoundQuery,
    chunk_id: ChunkId,
    rows: usize,
    payloads: &BTreeMap<ColumnId, Arc<[u8]>>,
) -> Result<AggState> {
    let column = |(id, ty): (ColumnId, ColumnType)| -> Result<&[u8]> {
        let bytes = payloads.get(&id).ok_or(EngineError::MissingColumn {
            chunk_id,
            column_id: id,
        })?;
        let expected = rows * ty.width();
        if bytes.len() != expected {
            return Err(EngineError::PayloadSize {
                chunk_id,
                column_id: id,
                expected,
                actual: bytes.len(),
            });
        }
        Ok(bytes)
    };
    let filter = match query.filter {
        Some((id, ty, op, threshold)) => Some((column((id, ty))?, ty, op, threshold)),
        None => None,
    };
    let mut state = AggState::default();
    match query.expr {
        BoundExpr::Column(id, ty) => {
            let values = column((id, ty))?;
            for row in 0..rows {
                if let Some((fb, fty, op, threshold)) = filter {
                    if !op.eval(numeric_at(fty, fb, row), threshold) {
                        continue;
                    }
                }
                state.sum += numeric_at(ty, values, row);
                state.count += 1;
            }
        }
        BoundExpr::DiscountedPrice([p, d, t]) => {
            let (pb, db, tb) = (column(p)?, column(d)?, column(t)?);
            for row in 0..rows {
                if let Some((fb, fty, op, threshold)) = filter {
                    if !op.eval(numeric_at(fty, fb, row), threshold) {
                        continue;
                    }
                }
                let price = numeric_at(p.1, pb, row);
                let discount = numeric_at(d.1, db, row);
                let tax = numeric_at(t.1, tb, row);
                state.sum += price * (1.0 - discount) * (1.0 + tax);
                state.count += 1;
            }
        }
    }
    Ok(state)
}

/// Fold one chunk into `state`. Callers must present chunks in ascending id.
pub fn fold_chunk(
    state: AggState,
    query: &BoundQuery,
    chunk_id: ChunkId,
    rows: usize,
    payloads: &BTreeMap<ColumnId, Arc<[u8]>>,
) -> Result<AggState> {
    let mut state = state;
    state.absorb(chunk_partial(query, chunk_id, rows, payloads)?);
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggResult {
    Value(f64),
    /// AVG over zero rows.
    Empty,
}

impl AggResult {
    pub fn value(&self) -> Option<f64> {
        match self {
            AggResult::Value(v) => Some(*v),
            AggResult::Empty => None,
        }
    }

    /// Exact equality, treating the bit pattern as the identity.
    pub fn bit_eq(&self, other: &AggResult) -> bool {
        match (self, other) {
            (AggResult::Value(a), AggResult::Value(b)) => a.to_bits() == b.to_bits(),
            (AggResult::Empty, AggResult::Empty) => true,
            _ => false,
        }
    }
}

pub fn finalize(state: AggState, agg: Agg) -> AggResult {
    match agg {
        Agg::Sum => AggResult::Value(if state.count == 0 { 0.0 } else { state.sum }),
        Agg::Avg if state.count == 0 => AggResult::Empty,
        Agg::Avg => AggResult::Value(state.sum / state.count as f64),
    }
}

/// Reference result computed straight from in-memory columns, bypassing the
/// catalog, scheduler and cache. `tuples_per_chunk` fixes the summation
/// grouping so the result is comparable bit-for-bit.
pub fn oracle_scan(
    query: &Query,
    schema: &TableSchema,
    data: &[ColumnData],
    tuples_per_chunk: u64,
) -> Result<AggResult> {
    let bound = BoundQuery::bind(query, schema)?;
    let col = |id: ColumnId| &data[id as usize];
    let rows = data.first().map_or(0, |c| c.len());
    let n = tuples_per_chunk.max(1) as usize;
    let mut total = AggState::default();
    let mut start = 0;
    while start < rows {
        let end = (start + n).min(rows);
        let mut part = AggState::default();
        for row in start..end {
            if let Some((id, _, op, threshold)) = bound.filter {
                let v = col(id).numeric(row).expect("numeric");
                if !op.eval(v, threshold) {
                    continue;
                }
            }
            let value = match bound.expr {
                BoundExpr::Column(id, _) => col(id).numeric(row).expect("numeric"),
                BoundExpr::DiscountedPrice([p, d, t]) => {
                    let price = col(p.0).numeric(row).expect("numeric");
                    let discount = col(d.0).numeric(row).expect("numeric");
                    let tax = col(t.0).numeric(row).expect("numeric");
                    price * (1.0 - discount) * (1.0 + tax)
                }
            };
            part.sum += value;
            part.count += 1;
        }
        if part.count > 0 {
            total.sum += part.sum;
            total.count += part.count;
        }
        start = end;
    }
    Ok(finalize(total, bound.agg))
}

/// Per-query evaluation state fed by deliveries in any chunk order.
#[derive(Debug, Clone)]
pub struct QueryExecution {
    bound: BoundQuery,
    partials: BTreeMap<ChunkId, AggState>,
}

impl QueryExecution {
    pub fn new(bound: BoundQuery) -> Self {
        Self {
            bound,
            partials: BTreeMap::new(),
        }
    }

    pub fn accept(
        &mut self,
        chunk_id: ChunkId,
        rows: usize,
        payloads: &BTreeMap<ColumnId, Arc<[u8]>>,
    ) -> Result<()> {
        let partial = chunk_partial(&self.bound, chunk_id, rows, payloads)?;
        self.partials.insert(chunk_id, partial);
        Ok(())
    }

    pub fn chunks_seen(&self) -> usize {
        self.partials.len()
    }

    pub fn result(&self) -> AggResult {
        let state = self
            .partials
            .values()
            .fold(AggState::default(), |mut acc, p| {
                acc.absorb(*p);
                acc
            });
        finalize(state, self.bound.agg)
    }
}

struct BatchSink {
    executions: BTreeMap<QueryId, QueryExecution>,
    duplicates: Vec<(QueryId, ChunkId)>,
}

impl DeliverySink for BatchSink {
    fn deliver(&mut self, d: &Delivery, rows: u64) -> std::result::Result<(), String> {
        let exec = self
            .executions
            .get_mut(&d.query_id)
            .ok_or_else(|| format!("delivery for unknown query {}", d.query_id))?;
        if exec.partials.contains_key(&d.chunk_id) {
            self.duplicates.push((d.query_id, d.chunk_id));
        }
        exec.accept(d.chunk_id, rows as usize, &d.columns)
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// One result per input query, in input order.
    pub results: Vec<AggResult>,
    pub plans: Vec<QueryPlan>,
    pub report: RunReport,
}

/// Plan and run a batch of queries through the shared scheduler. Query ids
/// are the input positions.
pub fn execute_batch(
    table: &Table,
    devices: &mut DeviceArray,
    queries: &[Query],
    config: &RunConfig,
) -> Result<BatchOutcome> {
    let mut plans = Vec::with_capacity(queries.len());
    let mut executions = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        let bound = BoundQuery::bind(q, &table.schema)?;
        plans.push((i as QueryId, plan(q, table, config.window)?));
        executions.insert(i as QueryId, QueryExecution::new(bound));
    }
    let mut sink = BatchSink {
        executions,
        duplicates: Vec::new(),
    };
    let report = scheduler::run_policy(&table.directory, devices, &plans, config, &mut sink)?;
    if let Some((q, c)) = sink.duplicates.first() {
        return Err(SchedulerError::Protocol(format!("query {q} received chunk {c} twice")).into());
    }
    for (id, p) in &plans {
        let seen = sink.executions[id].chunks_seen();
        if seen != p.pruned_chunks.len() {
            return Err(SchedulerError::Protocol(format!(
                "query {id} received {seen} of {} chunks",
                p.pruned_chunks.len()
            ))
            .into());
        }
    }
    Ok(BatchOutcome {
        results: sink.executions.values().map(|e| e.result()).collect(),
        plans: plans.into_iter().map(|(_, p)| p).collect(),
        report,
    })
}
