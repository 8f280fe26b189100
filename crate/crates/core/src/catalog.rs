//! Chunked, column-partitioned table layout.
//!
//! A table of `N` tuples is cut into `ceil(N / n)` chunks of `n` consecutive
//! tuples. Inside each chunk the data is split by column, and every column
//! segment starts on a `page_bytes` boundary of the table file. The cache and
//! directory granularity is one column of one chunk, addressed by
//! [`DataUnitKey`].
//!
//! File layout (little-endian):
//!
//! ```text
//! "HTSM" | version u32 | column_count u16
//! | per column: type_tag u8, name_len u8, name bytes
//! | tuple_count u64 | tuples_per_chunk u64 | page_bytes u64
//! | directory_entry_count u32
//! | per entry: chunk_id u32, column_id u16, offset u64, length u64, min [u8; 16], max [u8; 16]
//! | payload: column segments, each starting at a multiple of page_bytes
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"HTSM";
pub const FORMAT_VERSION: u32 = 1;
pub const MAX_COLUMNS: usize = 256;
pub const MIN_PAGE_BYTES: u64 = 1 << 12;
pub const MAX_PAGE_BYTES: u64 = 1 << 26;
/// Width of the encoded min/max slots in a directory entry.
pub const BOUND_BYTES: usize = 16;
const DIRECTORY_ENTRY_BYTES: u64 = 4 + 2 + 8 + 8 + 16 + 16;

pub type ChunkId = u32;
pub type ColumnId = u16;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("column {column}: expected {expected} values, stream holds {actual}")]
    ShortStream {
        column: String,
        expected: u64,
        actual: u64,
    },
    #[error("column {column}: schema type is {expected}, stream type is {actual}")]
    TypeMismatch {
        column: String,
        expected: ColumnType,
        actual: ColumnType,
    },
    #[error("column {column}: NaN values cannot be stored")]
    NanValue { column: String },
    #[error("data unit {0} not found in directory")]
    NotFound(DataUnitKey),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` is not numeric")]
    NonNumericColumn(String),
    #[error("malformed table file: {0}")]
    Format(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T, E = CatalogError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ColumnType {
    Int64,
    Float64,
    Date32,
    Str16,
}

impl ColumnType {
    pub fn tag(self) -> u8 {
        match self {
            ColumnType::Int64 => 0,
            ColumnType::Float64 => 1,
            ColumnType::Date32 => 2,
            ColumnType::Str16 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ColumnType::Int64),
            1 => Some(ColumnType::Float64),
            2 => Some(ColumnType::Date32),
            3 => Some(ColumnType::Str16),
            _ => None,
        }
    }

    /// Bytes per stored value.
    pub fn width(self) -> usize {
        match self {
            ColumnType::Int64 | ColumnType::Float64 => 8,
            ColumnType::Date32 => 4,
            ColumnType::Str16 => 16,
        }
    }

    pub fn is_numeric(self) -> bool {
        !matches!(self, ColumnType::Str16)
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::Int64 => "int64",
            ColumnType::Float64 => "float64",
            ColumnType::Date32 => "date32",
            ColumnType::Str16 => "str16",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Self {
            name: name.into(),
            ty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSchema {
    columns: Vec<ColumnDef>,
    tuple_count: u64,
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnDef>, tuple_count: u64) -> Result<Self> {
        if columns.is_empty() || columns.len() > MAX_COLUMNS {
            return Err(CatalogError::InvalidSchema(format!(
                "column count {} outside 1..={MAX_COLUMNS}",
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for col in &columns {
            if col.name.is_empty() || col.name.len() > u8::MAX as usize {
                return Err(CatalogError::InvalidSchema(format!(
                    "column name `{}` must be 1..=255 bytes",
                    col.name
                )));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(CatalogError::InvalidSchema(format!(
                    "duplicate column name `{}`",
                    col.name
                )));
            }
        }
        Ok(Self {
            columns,
            tuple_count,
        })
    }

    pub fn columns(&self) -> &[ColumnDef] {
        &self.columns
    }

    pub fn column(&self, id: ColumnId) -> Option<&ColumnDef> {
        self.columns.get(id as usize)
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn tuple_count(&self) -> u64 {
        self.tuple_count
    }

    pub fn column_id(&self, name: &str) -> Option<ColumnId> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .map(|i| i as ColumnId)
    }

    /// Same column set with a different row count.
    pub fn with_tuple_count(&self, tuple_count: u64) -> Self {
        Self {
            columns: self.columns.clone(),
            tuple_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkingConfig {
    tuples_per_chunk: u64,
    page_bytes: u64,
}

impl ChunkingConfig {
    pub fn new(tuples_per_chunk: u64, page_bytes: u64) -> Result<Self> {
        if tuples_per_chunk == 0 {
            return Err(CatalogError::InvalidConfig(
                "tuples_per_chunk must be at least 1".into(),
            ));
        }
        if !page_bytes.is_power_of_two() || !(MIN_PAGE_BYTES..=MAX_PAGE_BYTES).contains(&page_bytes)
        {
            return Err(CatalogError::InvalidConfig(format!(
                "page_bytes {page_bytes} must be a power of two in [2^12, 2^26]"
            )));
        }
        Ok(Self {
            tuples_per_chunk,
            page_bytes,
        })
    }

    pub fn tuples_per_chunk(&self) -> u64 {
        self.tuples_per_chunk
    }

    pub fn page_bytes(&self) -> u64 {
        self.page_bytes
    }
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            tuples_per_chunk: 65_536,
            page_bytes: 1 << 22,
        }
    }
}

/// Number of chunks covering `tuple_count` rows at `tuples_per_chunk` rows each.
pub fn chunk_count(tuple_count: u64, tuples_per_chunk: u64) -> Result<u64> {
    if tuples_per_chunk == 0 {
        return Err(CatalogError::InvalidConfig(
            "tuples_per_chunk must be at least 1".into(),
        ));
    }
    Ok(tuple_count.div_ceil(tuples_per_chunk))
}

/// One column of one chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DataUnitKey {
    pub chunk_id: ChunkId,
    pub column_id: ColumnId,
}

impl DataUnitKey {
    pub fn new(chunk_id: ChunkId, column_id: ColumnId) -> Self {
        Self {
            chunk_id,
            column_id,
        }
    }
}

impl fmt::Display for DataUnitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.chunk_id, self.column_id)
    }
}

/// A byte range of the table file. `device_id` is filled in by dispatch; the
/// directory hands extents out with device 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Extent {
    pub device_id: u32,
    pub offset: u64,
    pub length: u64,
}

impl Extent {
    pub fn end(&self) -> u64 {
        self.offset + self.length
    }
}

/// A single stored value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int64(i64),
    Float64(f64),
    Date32(i32),
    Str16([u8; 16]),
}

impl Value {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Value::Int64(_) => ColumnType::Int64,
            Value::Float64(_) => ColumnType::Float64,
            Value::Date32(_) => ColumnType::Date32,
            Value::Str16(_) => ColumnType::Str16,
        }
    }

    /// Numeric view used by predicates and aggregates.
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Int64(v) => Some(v as f64),
            Value::Float64(v) => Some(v),
            Value::Date32(v) => Some(v as f64),
            Value::Str16(_) => None,
        }
    }

    /// Type-encoded, zero-padded 16-byte bound slot.
    pub fn encode_bound(&self) -> [u8; BOUND_BYTES] {
        let mut out = [0u8; BOUND_BYTES];
        match self {
            Value::Int64(v) => out[..8].copy_from_slice(&v.to_le_bytes()),
            Value::Float64(v) => out[..8].copy_from_slice(&v.to_le_bytes()),
            Value::Date32(v) => out[..4].copy_from_slice(&v.to_le_bytes()),
            Value::Str16(v) => out = *v,
        }
        out
    }

    pub fn decode_bound(ty: ColumnType, raw: &[u8; BOUND_BYTES]) -> Self {
        match ty {
            ColumnType::Int64 => Value::Int64(i64::from_le_bytes(raw[..8].try_into().unwrap())),
            ColumnType::Float64 => {
                Value::Float64(f64::from_le_bytes(raw[..8].try_into().unwrap()))
            }
            ColumnType::Date32 => Value::Date32(i32::from_le_bytes(raw[..4].try_into().unwrap())),
            ColumnType::Str16 => Value::Str16(*raw),
        }
    }
}

/// Encode a string into a fixed 16-byte, zero-padded value. Longer input is truncated.
pub fn str16(s: &str) -> [u8; 16] {
    let mut out = [0u8; 16];
    let n = s.len().min(16);
    out[..n].copy_from_slice(&s.as_bytes()[..n]);
    out
}

/// Min/max bounds of one data unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneMap {
    pub min: Value,
    pub max: Value,
}

impl ZoneMap {
    /// Does any value in `[min, max]` satisfy `predicate`?
    pub fn may_match(&self, op: CmpOp, threshold: f64) -> bool {
        let (Some(min), Some(max)) = (self.min.as_f64(), self.max.as_f64()) else {
            return true;
        };
        match op {
            CmpOp::Ge => max >= threshold,
            CmpOp::Lt => min < threshold,
        }
    }
}

/// In-memory values of one column, in row order.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Int64(Vec<i64>),
    Float64(Vec<f64>),
    Date32(Vec<i32>),
    Str16(Vec<[u8; 16]>),
}

impl ColumnData {
    pub fn column_type(&self) -> ColumnType {
        match self {
            ColumnData::Int64(_) => ColumnType::Int64,
            ColumnData::Float64(_) => ColumnType::Float64,
            ColumnData::Date32(_) => ColumnType::Date32,
            ColumnData::Str16(_) => ColumnType::Str16,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Int64(v) => v.len(),
            ColumnData::Float64(v) => v.len(),
            ColumnData::Date32(v) => v.len(),
            ColumnData::Str16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, row: usize) -> Value {
        match self {
            ColumnData::Int64(v) => Value::Int64(v[row]),
            ColumnData::Float64(v) => Value::Float64(v[row]),
            ColumnData::Date32(v) => Value::Date32(v[row]),
            ColumnData::Str16(v) => Value::Str16(v[row]),
        }
    }

    /// Numeric value at `row`; `None` for string columns.
    pub fn numeric(&self, row: usize) -> Option<f64> {
        match self {
            ColumnData::Int64(v) => Some(v[row] as f64),
            ColumnData::Float64(v) => Some(v[row]),
            ColumnData::Date32(v) => Some(v[row] as f64),
            ColumnData::Str16(_) => None,
        }
    }

    /// Little-endian encoding of rows `start..end`, as stored in a column segment.
    pub fn encode_range(&self, start: usize, end: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity((end - start) * self.column_type().width());
        match self {
            ColumnData::Int64(v) => v[start..end]
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ColumnData::Float64(v) => v[start..end]
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ColumnData::Date32(v) => v[start..end]
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ColumnData::Str16(v) => v[start..end].iter().for_each(|x| out.extend_from_slice(x)),
        }
        out
    }

    /// Decode a column segment back into values.
    pub fn decode(ty: ColumnType, bytes: &[u8]) -> Result<Self> {
        let width = ty.width();
        if bytes.len() % width != 0 {
            return Err(CatalogError::Format(format!(
                "segment of {} bytes is not a multiple of the {ty} width {width}",
                bytes.len()
            )));
        }
        let chunks = bytes.chunks_exact(width);
        Ok(match ty {
            ColumnType::Int64 => ColumnData::Int64(
                chunks
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ColumnType::Float64 => ColumnData::Float64(
                chunks
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ColumnType::Date32 => ColumnData::Date32(
                chunks
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ColumnType::Str16 => {
                ColumnData::Str16(chunks.map(|c| c.try_into().unwrap()).collect())
            }
        })
    }

    fn zone(&self, start: usize, end: usize) -> ZoneMap {
        debug_assert!(start < end);
        match self {
            ColumnData::Int64(v) => {
                let s = &v[start..end];
                ZoneMap {
                    min: Value::Int64(*s.iter().min().unwrap()),
                    max: Value::Int64(*s.iter().max().unwrap()),
                }
            }
            ColumnData::Float64(v) => {
                let s = &v[start..end];
                let min = s.iter().copied().fold(f64::INFINITY, f64::min);
                let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                ZoneMap {
                    min: Value::Float64(min),
                    max: Value::Float64(max),
                }
            }
            ColumnData::Date32(v) => {
                let s = &v[start..end];
                ZoneMap {
                    min: Value::Date32(*s.iter().min().unwrap()),
                    max: Value::Date32(*s.iter().max().unwrap()),
                }
            }
            ColumnData::Str16(v) => {
                let s = &v[start..end];
                ZoneMap {
                    min: Value::Str16(*s.iter().min().unwrap()),
                    max: Value::Str16(*s.iter().max().unwrap()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    /// `value >= threshold`
    Ge,
    /// `value < threshold`
    Lt,
}

impl CmpOp {
    pub fn eval(self, value: f64, threshold: f64) -> bool {
        match self {
            CmpOp::Ge => value >= threshold,
            CmpOp::Lt => value < threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
        }
    }
}

/// Single-column range predicate used for chunk pruning and row filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub column: String,
    pub op: CmpOp,
    pub threshold: f64,
}

/// Directory record for one data unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEntry {
    /// Start of the column segment; page aligned.
    pub offset: u64,
    /// Stored (uncompressed) bytes of the unit.
    pub length: u64,
    pub zone: ZoneMap,
    /// Page-sized pieces of the segment in ascending offset order.
    pub extents: Vec<Extent>,
}

/// Maps every data unit of a table to its byte extents and zone map.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkDirectory {
    chunking: ChunkingConfig,
    tuple_count: u64,
    column_count: usize,
    entries: BTreeMap<DataUnitKey, UnitEntry>,
}

impl ChunkDirectory {
    pub fn chunking(&self) -> ChunkingConfig {
        self.chunking
    }

    pub fn chunk_count(&self) -> u64 {
        self.tuple_count.div_ceil(self.chunking.tuples_per_chunk)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&DataUnitKey, &UnitEntry)> {
        self.entries.iter()
    }

    pub fn entry(&self, key: DataUnitKey) -> Result<&UnitEntry> {
        self.entries.get(&key).ok_or(CatalogError::NotFound(key))
    }

    pub fn lookup_extents(&self, key: DataUnitKey) -> Result<&[Extent]> {
        self.entry(key).map(|e| e.extents.as_slice())
    }

    pub fn unit_bytes(&self, key: DataUnitKey) -> Result<u64> {
        self.entry(key).map(|e| e.length)
    }

    /// Rows stored in `chunk_id`.
    pub fn chunk_rows(&self, chunk_id: ChunkId) -> u64 {
        let n = self.chunking.tuples_per_chunk;
        let start = chunk_id as u64 * n;
        self.tuple_count.saturating_sub(start).min(n)
    }

    /// Sum of all stored unit bytes.
    pub fn total_bytes(&self) -> u64 {
        self.entries.values().map(|e| e.length).sum()
    }

    /// Ascending ids of chunks whose zone map on the filter column intersects
    /// the predicate. Without a filter every chunk qualifies.
    pub fn prune_chunks(
        &self,
        schema: &TableSchema,
        filter: Option<&Predicate>,
    ) -> Result<Vec<ChunkId>> {
        let all = 0..self.chunk_count() as ChunkId;
        let Some(pred) = filter else {
            return Ok(all.collect());
        };
        let column_id = schema
            .column_id(&pred.column)
            .ok_or_else(|| CatalogError::UnknownColumn(pred.column.clone()))?;
        if !schema.columns[column_id as usize].ty.is_numeric() {
            return Err(CatalogError::NonNumericColumn(pred.column.clone()));
        }
        let mut kept = Vec::new();
        for chunk_id in all {
            let zone = &self.entry(DataUnitKey::new(chunk_id, column_id))?.zone;
            if zone.may_match(pred.op, pred.threshold) {
                kept.push(chunk_id);
            }
        }
        Ok(kept)
    }

    /// Global (min, max) of a numeric column over all chunks.
    pub fn column_range(&self, column_id: ColumnId) -> Option<(f64, f64)> {
        self.entries
            .iter()
            .filter(|(k, _)| k.column_id == column_id)
            .filter_map(|(_, e)| Some((e.zone.min.as_f64()?, e.zone.max.as_f64()?)))
            .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }
}

fn round_up(value: u64, align: u64) -> u64 {
    value.div_ceil(align) * align
}

fn page_extents(offset: u64, length: u64, page_bytes: u64) -> Vec<Extent> {
    let mut out = Vec::with_capacity(length.div_ceil(page_bytes) as usize);
    let mut pos = 0;
    while pos < length {
        let len = (length - pos).min(page_bytes);
        out.push(Extent {
            device_id: 0,
            offset: offset + pos,
            length: len,
        });
        pos += len;
    }
    out
}

fn header_len(schema: &TableSchema, entries: u64) -> u64 {
    let cols: u64 = schema
        .columns
        .iter()
        .map(|c| 2 + c.name.len() as u64)
        .sum();
    4 + 4 + 2 + cols + 8 + 8 + 8 + 4 + entries * DIRECTORY_ENTRY_BYTES
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CatalogError + '_ {
    move |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn validate_streams(schema: &TableSchema, data: &[ColumnData]) -> Result<()> {
    if data.len() != schema.column_count() {
        return Err(CatalogError::InvalidSchema(format!(
            "schema has {} columns but {} data streams were given",
            schema.column_count(),
            data.len()
        )));
    }
    for (def, col) in schema.columns.iter().zip(data) {
        if col.column_type() != def.ty {
            return Err(CatalogError::TypeMismatch {
                column: def.name.clone(),
                expected: def.ty,
                actual: col.column_type(),
            });
        }
        if col.len() as u64 != schema.tuple_count {
            return Err(CatalogError::ShortStream {
                column: def.name.clone(),
                expected: schema.tuple_count,
                actual: col.len() as u64,
            });
        }
        if let ColumnData::Float64(v) = col {
            if v.iter().any(|x| x.is_nan()) {
                return Err(CatalogError::NanValue {
                    column: def.name.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Lay out `data` in chunked column segments, write the table file at `path`
/// and return its directory.
pub fn write_table(
    schema: &TableSchema,
    config: ChunkingConfig,
    data: &[ColumnData],
    path: &Path,
) -> Result<ChunkDirectory> {
    validate_streams(schema, data)?;
    let n = config.tuples_per_chunk;
    let page = config.page_bytes;
    let chunks = chunk_count(schema.tuple_count, n)?;
    let entry_count = chunks * schema.column_count() as u64;
    let header = header_len(schema, entry_count);

    let mut entries = BTreeMap::new();
    let mut cursor = round_up(header, page);
    for chunk_id in 0..chunks {
        let start = (chunk_id * n) as usize;
        let end = ((chunk_id + 1) * n).min(schema.tuple_count) as usize;
        for (column_id, (def, col)) in schema.columns.iter().zip(data).enumerate() {
            let length = ((end - start) * def.ty.width()) as u64;
            entries.insert(
                DataUnitKey::new(chunk_id as ChunkId, column_id as ColumnId),
                UnitEntry {
                    offset: cursor,
                    length,
                    zone: col.zone(start, end),
                    extents: page_extents(cursor, length, page),
                },
            );
            cursor = round_up(cursor + length, page);
        }
    }

    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut head = Vec::with_capacity(header as usize);
    head.extend_from_slice(MAGIC);
    head.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    head.extend_from_slice(&(schema.column_count() as u16).to_le_bytes());
    for col in &schema.columns {
        head.push(col.ty.tag());
        head.push(col.name.len() as u8);
        head.extend_from_slice(col.name.as_bytes());
    }
    head.extend_from_slice(&schema.tuple_count.to_le_bytes());
    head.extend_from_slice(&n.to_le_bytes());
    head.extend_from_slice(&page.to_le_bytes());
    head.extend_from_slice(&(entry_count as u32).to_le_bytes());
    for (key, e) in &entries {
        head.extend_from_slice(&key.chunk_id.to_le_bytes());
        head.extend_from_slice(&key.column_id.to_le_bytes());
        head.extend_from_slice(&e.offset.to_le_bytes());
        head.extend_from_slice(&e.length.to_le_bytes());
        head.extend_from_slice(&e.zone.min.encode_bound());
        head.extend_from_slice(&e.zone.max.encode_bound());
    }
    debug_assert_eq!(head.len() as u64, header);
    w.write_all(&head).map_err(io_err(path))?;

    // Padding between segments is left as a file hole; it reads back as zeros.
    let mut end_of_data = header;
    for (key, e) in &entries {
        let start = (key.chunk_id as u64 * n) as usize;
        let end = start + (e.length as usize / schema.columns[key.column_id as usize].ty.width());
        w.seek(SeekFrom::Start(e.offset)).map_err(io_err(path))?;
        w.write_all(&data[key.column_id as usize].encode_range(start, end))
            .map_err(io_err(path))?;
        end_of_data = e.offset + e.length;
    }
    let file = w.into_inner().map_err(|e| CatalogError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    file.set_len(end_of_data).map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))?;

    Ok(ChunkDirectory {
        chunking: config,
        tuple_count: schema.tuple_count,
        column_count: schema.column_count(),
        entries,
    })
}

/// An opened table file: schema, chunking and directory.
#[derive(Debug, Clone)]
pub struct Table {
    pub schema: TableSchema,
    pub directory: ChunkDirectory,
    pub path: PathBuf,
    pub file_len: u64,
}

impl Table {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = File::open(path).map_err(io_err(path))?;
        let file_len = file.metadata().map_err(io_err(path))?.len();
        let mut r = HeaderReader {
            inner: io::BufReader::new(&mut file),
            path,
        };

        let mut magic = [0u8; 4];
        r.exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CatalogError::Format(format!("bad magic {magic:?}")));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CatalogError::Format(format!("unsupported version {version}")));
        }
        let column_count = r.u16()? as usize;
        let mut columns = Vec::with_capacity(column_count);
        for _ in 0..column_count {
            let tag = r.u8()?;
            let ty = ColumnType::from_tag(tag)
                .ok_or_else(|| CatalogError::Format(format!("unknown type tag {tag}")))?;
            let len = r.u8()? as usize;
            let mut name = vec![0u8; len];
            r.exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CatalogError::Format("column name is not UTF-8".into()))?;
            columns.push(ColumnDef { name, ty });
        }
        let tuple_count = r.u64()?;
        let schema = TableSchema::new(columns, tuple_count)?;
        let chunking = ChunkingConfig::new(r.u64()?, r.u64()?)?;
        let page = chunking.page_bytes;
        let entry_count = r.u32()? as u64;
        let chunks = chunk_count(tuple_count, chunking.tuples_per_chunk)?;
        if entry_count != chunks * column_count as u64 {
            return Err(CatalogError::Format(format!(
                "directory holds {entry_count} entries, expected {}",
                chunks * column_count as u64
            )));
        }

        let mut entries = BTreeMap::new();
        for _ in 0..entry_count {
            let key = DataUnitKey::new(r.u32()?, r.u16()?);
            let offset = r.u64()?;
            let length = r.u64()?;
            let mut min = [0u8; BOUND_BYTES];
            let mut max = [0u8; BOUND_BYTES];
            r.exact(&mut min)?;
            r.exact(&mut max)?;
            let def = schema.column(key.column_id).ok_or_else(|| {
                CatalogError::Format(format!("entry {key} names a missing column"))
            })?;
            if key.chunk_id as u64 >= chunks {
                return Err(CatalogError::Format(format!("entry {key} beyond chunk count")));
            }
            let rows = tuple_count
                .saturating_sub(key.chunk_id as u64 * chunking.tuples_per_chunk)
                .min(chunking.tuples_per_chunk);
            if length != rows * def.ty.width() as u64 {
                return Err(CatalogError::Format(format!(
                    "entry {key} has length {length}, expected {}",
                    rows * def.ty.width() as u64
                )));
            }
            if offset % page != 0 || offset + length > file_len {
                return Err(CatalogError::Format(format!(
                    "entry {key} extent [{offset}, +{length}) is unaligned or past end of file"
                )));
            }
            let zone = ZoneMap {
                min: Value::decode_bound(def.ty, &min),
                max: Value::decode_bound(def.ty, &max),
            };
            let entry = UnitEntry {
                offset,
                length,
                zone,
                extents: page_extents(offset, length, page),
            };
            if entries.insert(key, entry).is_some() {
                return Err(CatalogError::Format(format!("duplicate directory entry {key}")));
            }
        }

        let directory = ChunkDirectory {
            chunking,
            tuple_count,
            column_count,
            entries,
        };
        check_disjoint(&directory)?;
        Ok(Self {
            schema,
            directory,
            path: path.to_path_buf(),
            file_len,
        })
    }

    pub fn chunking(&self) -> ChunkingConfig {
        self.directory.chunking
    }
}

fn check_disjoint(dir: &ChunkDirectory) -> Result<()> {
    let mut spans: Vec<(u64, u64, DataUnitKey)> = dir
        .entries
        .iter()
        .map(|(k, e)| (e.offset, e.offset + e.length, *k))
        .collect();
    spans.sort_unstable();
    for pair in spans.windows(2) {
        if pair[0].1 > pair[1].0 {
            return Err(CatalogError::Format(format!(
                "units {} and {} overlap",
                pair[0].2, pair[1].2
            )));
        }
    }
    Ok(())
}

struct HeaderReader<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> HeaderReader<'_, R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                CatalogError::Format("truncated header".into())
            } else {
                CatalogError::Io {
                    path: self.path.to_path_buf(),
                    source: e,
                }
            }
        })
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b)?;
        Ok(b[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_col_schema(n: u64) -> TableSchema {
        TableSchema::new(
            vec![
                ColumnDef::new("a", ColumnType::Int64),
                ColumnDef::new("b", ColumnType::Float64),
            ],
            n,
        )
        .unwrap()
    }

    fn two_col_data(n: usize) -> Vec<ColumnData> {
        vec![
            ColumnData::Int64((0..n as i64).collect()),
            ColumnData::Float64((0..n).map(|i| i as f64 * 0.5).collect()),
        ]
    }

    fn read_range(path: &Path, offset: u64, len: u64) -> Vec<u8> {
        let bytes = std::fs::read(path).unwrap();
        bytes[offset as usize..(offset + len) as usize].to_vec()
    }

    #[test]
    fn chunk_count_examples() {
        assert_eq!(chunk_count(6_000_000, 1_048_576).unwrap(), 6);
        assert_eq!(chunk_count(10, 3).unwrap(), 4);
        assert_eq!(chunk_count(0, 7).unwrap(), 0);
        assert!(matches!(
            chunk_count(10, 0),
            Err(CatalogError::InvalidConfig(_))
        ));
    }

    #[test]
    fn chunking_config_bounds() {
        assert!(ChunkingConfig::new(1, 4096).is_ok());
        assert!(ChunkingConfig::new(1, 1 << 26).is_ok());
        assert!(ChunkingConfig::new(1, 2048).is_err());
        assert!(ChunkingConfig::new(1, 1 << 27).is_err());
        assert!(ChunkingConfig::new(1, 5000).is_err());
        assert!(ChunkingConfig::new(0, 4096).is_err());
        let d = ChunkingConfig::default();
        assert_eq!((d.tuples_per_chunk(), d.page_bytes()), (65_536, 1 << 22));
    }

    #[test]
    fn schema_rejects_duplicates_and_empty() {
        assert!(TableSchema::new(vec![], 0).is_err());
        let dup = vec![
            ColumnDef::new("x", ColumnType::Int64),
            ColumnDef::new("x", ColumnType::Float64),
        ];
        assert!(TableSchema::new(dup, 0).is_err());
        let many = (0..257)
            .map(|i| ColumnDef::new(format!("c{i}"), ColumnType::Int64))
            .collect();
        assert!(TableSchema::new(many, 0).is_err());
    }

    #[test]
    fn ten_tuples_three_per_chunk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.htsm");
        let d = write_table(
            &two_col_schema(10),
            ChunkingConfig::new(3, 4096).unwrap(),
            &two_col_data(10),
            &path,
        )
        .unwrap();
        assert_eq!(d.len(), 8);
        assert_eq!(d.chunk_count(), 4);
        assert_eq!(d.chunk_rows(3), 1);
        let rows: u64 = (0..4).map(|c| d.chunk_rows(c)).sum();
        assert_eq!(rows, 10);

        let missing = DataUnitKey::new(4, 0);
        assert!(matches!(
            d.lookup_extents(missing),
            Err(CatalogError::NotFound(k)) if k == missing
        ));
    }

    #[test]
    fn segments_follow_schema_order_and_page_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.htsm");
        // 1000 rows per chunk of int64: 8000 bytes, two pages per segment.
        let d = write_table(
            &two_col_schema(2500),
            ChunkingConfig::new(1000, 4096).unwrap(),
            &two_col_data(2500),
            &path,
        )
        .unwrap();
        let a = d.entry(DataUnitKey::new(1, 0)).unwrap();
        let b = d.entry(DataUnitKey::new(1, 1)).unwrap();
        assert!(a.offset < b.offset);
        assert_eq!(a.offset % 4096, 0);
        assert_eq!(b.offset % 4096, 0);
        assert_eq!(a.extents.len(), 2);
        assert_eq!(a.extents[0].length + a.extents[1].length, 8000);
        assert_eq!(a.extents[1].offset, a.extents[0].end());
    }

    #[test]
    fn open_round_trips_directory_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.htsm");
        let data = two_col_data(2500);
        let written = write_table(
            &two_col_schema(2500),
            ChunkingConfig::new(1000, 4096).unwrap(),
            &data,
            &path,
        )
        .unwrap();
        let table = Table::open(&path).unwrap();
        assert_eq!(table.directory, written);
        assert_eq!(table.schema, two_col_schema(2500));
        for (key, e) in table.directory.entries() {
            let bytes = read_range(&path, e.offset, e.length);
            let start = key.chunk_id as usize * 1000;
            let end = (start + 1000).min(2500);
            assert_eq!(bytes, data[key.column_id as usize].encode_range(start, end));
        }
    }

    #[test]
    fn empty_table_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.htsm");
        let d = write_table(
            &two_col_schema(0),
            ChunkingConfig::new(3, 4096).unwrap(),
            &two_col_data(0),
            &path,
        )
        .unwrap();
        assert!(d.is_empty());
        assert_eq!(d.prune_chunks(&two_col_schema(0), None).unwrap(), vec![]);
        let t = Table::open(&path).unwrap();
        assert_eq!(t.schema.tuple_count(), 0);
    }

    #[test]
    fn write_rejects_bad_streams() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.htsm");
        let cfg = ChunkingConfig::new(3, 4096).unwrap();
        let short = vec![
            ColumnData::Int64(vec![1, 2]),
            ColumnData::Float64(vec![1.0, 2.0, 3.0]),
        ];
        assert!(matches!(
            write_table(&two_col_schema(3), cfg, &short, &path),
            Err(CatalogError::ShortStream { .. })
        ));
        let wrong = vec![
            ColumnData::Float64(vec![1.0, 2.0, 3.0]),
            ColumnData::Float64(vec![1.0, 2.0, 3.0]),
        ];
        assert!(matches!(
            write_table(&two_col_schema(3), cfg, &wrong, &path),
            Err(CatalogError::TypeMismatch { .. })
        ));
        let unwritable = dir.path().join("no/such/dir/t.htsm");
        assert!(matches!(
            write_table(&two_col_schema(3), cfg, &two_col_data(3), &unwritable),
            Err(CatalogError::Io { .. })
        ));
    }

    #[test]
    fn open_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.htsm");
        write_table(
            &two_col_schema(10),
            ChunkingConfig::new(3, 4096).unwrap(),
            &two_col_data(10),
            &path,
        )
        .unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad.htsm");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(Table::open(&bad), Err(CatalogError::Format(_))));
        std::fs::write(&bad, &std::fs::read(&path).unwrap()[..20]).unwrap();
        assert!(matches!(Table::open(&bad), Err(CatalogError::Format(_))));
    }

    #[test]
    fn string_zone_maps_are_lexicographic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.htsm");
        let schema = TableSchema::new(vec![ColumnDef::new("mode", ColumnType::Str16)], 3).unwrap();
        let data = vec![ColumnData::Str16(vec![str16("TRUCK"), str16("AIR"), str16("RAIL")])];
        let d = write_table(&schema, ChunkingConfig::new(3, 4096).unwrap(), &data, &path).unwrap();
        let z = d.entry(DataUnitKey::new(0, 0)).unwrap().zone;
        assert_eq!(z.min, Value::Str16(str16("AIR")));
        assert_eq!(z.max, Value::Str16(str16("TRUCK")));
        let pred = Predicate {
            column: "mode".into(),
            op: CmpOp::Ge,
            threshold: 1.0,
        };
        assert!(matches!(
            d.prune_chunks(&schema, Some(&pred)),
            Err(CatalogError::NonNumericColumn(_))
        ));
    }

    #[test]
    fn prune_unknown_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.htsm");
        let d = write_table(
            &two_col_schema(10),
            ChunkingConfig::new(3, 4096).unwrap(),
            &two_col_data(10),
            &path,
        )
        .unwrap();
        let pred = Predicate {
            column: "zzz".into(),
            op: CmpOp::Lt,
            threshold: 0.0,
        };
        assert!(matches!(
            d.prune_chunks(&two_col_schema(10), Some(&pred)),
            Err(CatalogError::UnknownColumn(_))
        ));
        let below = Predicate {
            column: "a".into(),
            op: CmpOp::Ge,
            threshold: -100.0,
        };
        assert_eq!(
            d.prune_chunks(&two_col_schema(10), Some(&below)).unwrap(),
            vec![0, 1, 2, 3]
        );
    }
}
