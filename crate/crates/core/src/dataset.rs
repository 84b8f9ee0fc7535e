//! Loading and cleaning of tract-keyed source tables.
//!
//! Each source (socioeconomic, education, health) is a CSV export keyed by an
//! 11-digit census tract code. Tables are loaded with only the declared
//! columns, null spellings are normalized to a single empty marker, and the
//! tables are inner-joined on the tract key. Rows that cannot be used are
//! dropped whole and counted by reason, so that
//! `source_rows == kept + sum(discard_reasons)` always holds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// Canonical marker for a missing cell after [`normalize_nulls`].
pub const EMPTY: &str = "";

/// Null spellings found in census and CDC exports.
pub const DEFAULT_NULL_TOKENS: [&str; 8] = ["", "NA", "N/A", "NAN", "-", "(X)", "NULL", "."];

pub const REASON_UNMATCHED: &str = "unmatched_key";
pub const REASON_NULL: &str = "null_value";
pub const REASON_UNPARSEABLE: &str = "unparseable_numeric";
pub const REASON_RANGE: &str = "range_violation";
pub const REASON_INVALID_KEY: &str = "invalid_key";
pub const REASON_RAGGED: &str = "ragged_row";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed CSV in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("table `{table}`: declared column `{column}` is not in the header")]
    MissingColumn { table: String, column: String },
    #[error("table `{table}`: columns `{first}` and `{second}` both standardize to `{name}`")]
    NameCollision {
        table: String,
        first: String,
        second: String,
        name: String,
    },
    #[error("`{0}` is not a valid column name (expected [a-z][a-z0-9_]*)")]
    InvalidName(String),
    #[error("column name {0:?} is empty after standardization")]
    EmptyName(String),
    #[error("table `{table}` declares {count} key columns, expected exactly one")]
    KeyCount { table: String, count: usize },
    #[error("table `{table}`: duplicate tract key {key}")]
    DuplicateKey { table: String, key: String },
    #[error("column `{0}` is declared by more than one table")]
    DuplicateColumn(String),
    #[error("table `{table}` header does not match its column specs")]
    SpecMismatch { table: String },
    #[error("expected one spec list per table ({tables} tables, {specs} spec lists)")]
    SpecCount { tables: usize, specs: usize },
    #[error("no tables to join")]
    NoTables,
    #[error("no rows survived cleaning")]
    NoRowsSurvived,
    #[error("invalid tract key {0:?}")]
    InvalidKey(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{name}` has a non-finite value at row {row}")]
    NonFinite { name: String, row: usize },
    #[error("column `{name}` has {got} values, expected {expected}")]
    ColumnLength {
        name: String,
        expected: usize,
        got: usize,
    },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// 11-digit census tract code: state (2) + county (3) + tract (6).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TractKey(String);

impl TractKey {
    /// Parses a tract code. Surrounding whitespace is ignored and a 10-digit
    /// code (a leading zero lost by a spreadsheet round-trip) is zero-padded.
    pub fn parse(raw: &str) -> Result<Self> {
        let s = raw.trim();
        if !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(DatasetError::InvalidKey(raw.to_string()));
        }
        match s.len() {
            11 => Ok(Self(s.to_string())),
            10 => Ok(Self(format!("0{s}"))),
            _ => Err(DatasetError::InvalidKey(raw.to_string())),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Two-digit state FIPS prefix.
    pub fn state(&self) -> &str {
        &self.0[..2]
    }

    /// Five-digit state + county prefix.
    pub fn county(&self) -> &str {
        &self.0[..5]
    }
}

impl fmt::Display for TractKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for TractKey {
    type Error = DatasetError;
    fn try_from(value: String) -> Result<Self> {
        Self::parse(&value)
    }
}

impl From<TractKey> for String {
    fn from(k: TractKey) -> String {
        k.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Key,
    Feature,
    Target,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    /// Percentage on the 0..=100 scale; a trailing `%` is accepted.
    Percent,
    /// Non-negative money amount; `$` and thousands separators are accepted.
    Currency,
    /// Non-negative count.
    Count,
    /// Numeric code with no range constraint.
    #[default]
    CategoricalCode,
}

impl ColumnKind {
    fn parse_cell(self, cell: &str) -> Option<f64> {
        let s = cell.trim();
        let s = match self {
            ColumnKind::Percent => s.strip_suffix('%').unwrap_or(s).trim_end(),
            _ => s,
        };
        let v: f64 = if self == ColumnKind::Currency {
            let s = s.strip_prefix('$').unwrap_or(s);
            s.replace(',', "").parse().ok()?
        } else {
            s.parse().ok()?
        };
        v.is_finite().then_some(v)
    }

    fn in_range(self, v: f64) -> bool {
        match self {
            ColumnKind::Percent => (0.0..=100.0).contains(&v),
            ColumnKind::Currency | ColumnKind::Count => v >= 0.0,
            ColumnKind::CategoricalCode => true,
        }
    }
}

/// Declares one column to import from a source table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ColumnSpecDoc")]
pub struct ColumnSpec {
    #[serde(rename = "source")]
    pub source_name: String,
    #[serde(rename = "name")]
    pub standard_name: String,
    pub role: ColumnRole,
    pub kind: ColumnKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnSpecDoc {
    source: String,
    #[serde(default)]
    name: Option<String>,
    role: ColumnRole,
    #[serde(default)]
    kind: ColumnKind,
}

impl TryFrom<ColumnSpecDoc> for ColumnSpec {
    type Error = DatasetError;
    fn try_from(d: ColumnSpecDoc) -> Result<Self> {
        ColumnSpec::new(&d.source, d.name.as_deref(), d.role, d.kind)
    }
}

impl ColumnSpec {
    /// Builds a spec; without an explicit name the source name is standardized.
    pub fn new(source: &str, name: Option<&str>, role: ColumnRole, kind: ColumnKind) -> Result<Self> {
        let standard_name = match name {
            Some(n) => {
                if !is_standard_name(n) {
                    return Err(DatasetError::InvalidName(n.to_string()));
                }
                n.to_string()
            }
            None => standardize_name(source)?,
        };
        Ok(Self {
            source_name: source.to_string(),
            standard_name,
            role,
            kind,
        })
    }

    pub fn key(source: &str) -> Result<Self> {
        Self::new(source, None, ColumnRole::Key, ColumnKind::CategoricalCode)
    }

    pub fn feature(source: &str, kind: ColumnKind) -> Result<Self> {
        Self::new(source, None, ColumnRole::Feature, kind)
    }

    pub fn target(source: &str, kind: ColumnKind) -> Result<Self> {
        Self::new(source, None, ColumnRole::Target, kind)
    }
}

/// `[a-z][a-z0-9_]*`
pub fn is_standard_name(s: &str) -> bool {
    let mut bytes = s.bytes();
    matches!(bytes.next(), Some(b'a'..=b'z'))
        && bytes.all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Converts a raw column header to lowercase snake_case.
///
/// camelCase boundaries become `_`, runs of non-alphanumeric characters
/// collapse to a single `_`, leading and trailing separators are dropped and
/// a name starting with a digit gets a `c_` prefix. The function is
/// idempotent.
pub fn standardize_name(source: &str) -> Result<String> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = String::with_capacity(source.len() + 4);
    let mut pending_sep = false;
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_ascii_alphanumeric() {
            pending_sep = true;
            continue;
        }
        if c.is_ascii_uppercase() && i > 0 {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
            if prev.is_ascii_lowercase()
                || prev.is_ascii_digit()
                || (prev.is_ascii_uppercase() && next_lower)
            {
                pending_sep = true;
            }
        }
        if pending_sep && !out.is_empty() {
            out.push('_');
        }
        pending_sep = false;
        out.push(c.to_ascii_lowercase());
    }
    if out.is_empty() {
        return Err(DatasetError::EmptyName(source.to_string()));
    }
    if out.as_bytes()[0].is_ascii_digit() {
        out.insert_str(0, "c_");
    }
    Ok(out)
}

/// A source table restricted to its declared columns.
///
/// `rows` hold raw cells in `header` order. A source row whose field count
/// differs from the file header is kept as an empty row and rejected later
/// by [`join_and_clean`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub name: String,
    pub header: Vec<String>,
    pub source_header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub source_rows: usize,
}

impl RawTable {
    pub fn is_ragged(&self, row: usize) -> bool {
        self.rows[row].len() != self.header.len()
    }
}

fn validate_specs(table: &str, specs: &[ColumnSpec]) -> Result<()> {
    let keys = specs.iter().filter(|s| s.role == ColumnRole::Key).count();
    if keys != 1 {
        return Err(DatasetError::KeyCount {
            table: table.to_string(),
            count: keys,
        });
    }
    let mut seen: HashMap<&str, &str> = HashMap::new();
    for s in specs {
        if !is_standard_name(&s.standard_name) {
            return Err(DatasetError::InvalidName(s.standard_name.clone()));
        }
        if let Some(first) = seen.insert(&s.standard_name, &s.source_name) {
            return Err(DatasetError::NameCollision {
                table: table.to_string(),
                first: first.to_string(),
                second: s.source_name.clone(),
                name: s.standard_name.clone(),
            });
        }
    }
    Ok(())
}

/// Loads the declared columns of a CSV file, preserving row order.
pub fn load_table(path: &Path, name: &str, specs: &[ColumnSpec]) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_table(file, name, specs).map_err(|e| match e {
        DatasetError::Csv { source, .. } => DatasetError::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// [`load_table`] over any reader.
pub fn read_table<R: std::io::Read>(reader: R, name: &str, specs: &[ColumnSpec]) -> Result<RawTable> {
    validate_specs(name, specs)?;
    let csv_err = |source| DatasetError::Csv {
        path: PathBuf::from(name),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let file_header: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut indices = Vec::with_capacity(specs.len());
    for s in specs {
        let idx = file_header
            .iter()
            .position(|h| h == s.source_name.trim())
            .ok_or_else(|| DatasetError::MissingColumn {
                table: name.to_string(),
                column: s.source_name.clone(),
            })?;
        indices.push(idx);
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        if record.len() != file_header.len() {
            rows.push(Vec::new());
            continue;
        }
        rows.push(indices.iter().map(|&i| record[i].to_string()).collect());
    }
    Ok(RawTable {
        name: name.to_string(),
        header: specs.iter().map(|s| s.standard_name.clone()).collect(),
        source_header: specs.iter().map(|s| s.source_name.clone()).collect(),
        source_rows: rows.len(),
        rows,
    })
}

/// Case-insensitive, whitespace-trimmed set of null spellings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NullTokens(BTreeSet<String>);

impl NullTokens {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self(
            tokens
                .into_iter()
                .map(|t| t.as_ref().trim().to_uppercase())
                .collect(),
        )
    }

    pub fn is_null(&self, cell: &str) -> bool {
        let t = cell.trim();
        t.is_empty() || self.0.contains(&t.to_uppercase())
    }
}

impl Default for NullTokens {
    fn default() -> Self {
        Self::new(DEFAULT_NULL_TOKENS)
    }
}

/// Replaces every null spelling with [`EMPTY`]; other cells are untouched.
pub fn normalize_nulls(mut table: RawTable, tokens: &NullTokens) -> RawTable {
    for cell in table.rows.iter_mut().flatten() {
        if tokens.is_null(cell) {
            cell.clear();
        }
    }
    table
}

/// Outcome accounting for one join run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub source_rows: usize,
    pub kept: usize,
    pub discard_reasons: BTreeMap<String, usize>,
    pub table_rows: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CleaningReport {
    pub fn discarded(&self) -> usize {
        self.discard_reasons.values().sum()
    }

    fn discard(&mut self, reason: &str) {
        *self.discard_reasons.entry(reason.to_string()).or_default() += 1;
    }

    /// Records a warning when more rows were discarded than expected.
    pub fn check_discard_budget(&mut self, expected_max: usize) {
        let d = self.discarded();
        if d > expected_max {
            self.warnings.push(format!(
                "discarded {d} rows, more than the expected maximum of {expected_max}"
            ));
        }
    }
}

/// Joined, fully numeric tract table.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanDataset {
    pub key_name: String,
    pub keys: Vec<TractKey>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    /// One row per key: features first, then targets.
    pub values: Matrix,
    pub report: CleaningReport,
}

impl CleanDataset {
    /// Assembles a dataset from named columns, enforcing the invariants that
    /// [`join_and_clean`] guarantees.
    pub fn from_columns(
        keys: Vec<TractKey>,
        features: Vec<(String, Vec<f64>)>,
        targets: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        let n = keys.len();
        let mut seen = BTreeSet::new();
        if let Some(dup) = keys.iter().find(|k| !seen.insert(*k)) {
            return Err(DatasetError::DuplicateKey {
                table: "dataset".into(),
                key: dup.to_string(),
            });
        }
        let mut names = BTreeSet::new();
        for (name, col) in features.iter().chain(&targets) {
            if !names.insert(name.as_str()) {
                return Err(DatasetError::DuplicateColumn(name.clone()));
            }
            if col.len() != n {
                return Err(DatasetError::ColumnLength {
                    name: name.clone(),
                    expected: n,
                    got: col.len(),
                });
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite {
                    name: name.clone(),
                    row,
                });
            }
        }
        let cols: Vec<&Vec<f64>> = features.iter().chain(&targets).map(|(_, c)| c).collect();
        let mut data = Vec::with_capacity(n * cols.len());
        for r in 0..n {
            data.extend(cols.iter().map(|c| c[r]));
        }
        Ok(Self {
            key_name: "tract".into(),
            report: CleaningReport {
                source_rows: n,
                kept: n,
                ..Default::default()
            },
            keys,
            values: Matrix::from_vec(n, cols.len(), data).expect("shape checked"),
            feature_names: features.into_iter().map(|(n, _)| n).collect(),
            target_names: targets.into_iter().map(|(n, _)| n).collect(),
        })
    }

    pub fn nrows(&self) -> usize {
        self.keys.len()
    }

    pub fn column_names(&self) -> impl Iterator<Item = &String> {
        self.feature_names.iter().chain(&self.target_names)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.column_names()
            .position(|n| n == name)
            .ok_or_else(|| DatasetError::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.values.column(self.column_index(name)?))
    }

    /// Matrix of the named columns, in the given order.
    pub fn matrix(&self, names: &[String]) -> Result<Matrix> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.values.select_columns(&idx))
    }

    /// Cleaned CSV: key column first, then features, then targets.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.key_name.as_str()];
        header.extend(self.column_names().map(String::as_str));
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for (key, row) in self.keys.iter().zip(self.values.rows()) {
            record.clear();
            record.push(key.to_string());
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }
}

struct SelectedColumn<'a> {
    table: usize,
    col: usize,
    spec: &'a ColumnSpec,
}

/// Inner-joins the tables on the tract key and drops unusable rows.
///
/// Ragged rows and rows whose key is not a valid tract code are discarded per
/// table. Keys missing from any table count as `unmatched_key`. For joined
/// rows, the first failing check among null cell, unparseable number and
/// out-of-range value decides the discard reason.
pub fn join_and_clean(tables: &[RawTable], specs: &[Vec<ColumnSpec>]) -> Result<CleanDataset> {
    if tables.is_empty() {
        return Err(DatasetError::NoTables);
    }
    if tables.len() != specs.len() {
        return Err(DatasetError::SpecCount {
            tables: tables.len(),
            specs: specs.len(),
        });
    }
    let mut report = CleaningReport::default();
    let mut key_cols = Vec::with_capacity(tables.len());
    let mut selected: Vec<SelectedColumn> = Vec::new();
    let mut names = BTreeSet::new();
    for (t, (table, table_specs)) in tables.iter().zip(specs).enumerate() {
        validate_specs(&table.name, table_specs)?;
        let header_matches = table.header.len() == table_specs.len()
            && table.header.iter().zip(table_specs).all(|(h, s)| *h == s.standard_name);
        if !header_matches {
            return Err(DatasetError::SpecMismatch {
                table: table.name.clone(),
            });
        }
        for (c, s) in table_specs.iter().enumerate() {
            match s.role {
                ColumnRole::Key => key_cols.push(c),
                ColumnRole::Feature | ColumnRole::Target => {
                    if !names.insert(s.standard_name.as_str()) {
                        return Err(DatasetError::DuplicateColumn(s.standard_name.clone()));
                    }
                    selected.push(SelectedColumn {
                        table: t,
                        col: c,
                        spec: s,
                    });
                }
                ColumnRole::Ignored => {}
            }
        }
        *report.table_rows.entry(table.name.clone()).or_default() += table.source_rows;
    }
    // Features first, then targets, each in table/spec order.
    selected.sort_by_key(|s| (s.spec.role == ColumnRole::Target, s.table, s.col));

    let mut index: Vec<BTreeMap<TractKey, usize>> = Vec::with_capacity(tables.len());
    let mut extra_rows = 0usize;
    for (table, &kc) in tables.iter().zip(&key_cols) {
        let mut map = BTreeMap::new();
        for (r, row) in table.rows.iter().enumerate() {
            if table.is_ragged(r) {
                report.discard(REASON_RAGGED);
                extra_rows += 1;
                continue;
            }
            let Ok(key) = TractKey::parse(&row[kc]) else {
                report.discard(REASON_INVALID_KEY);
                extra_rows += 1;
                continue;
            };
            if map.insert(key.clone(), r).is_some() {
                return Err(DatasetError::DuplicateKey {
                    table: table.name.clone(),
                    key: key.to_string(),
                });
            }
        }
        index.push(map);
    }

    let all_keys: BTreeSet<&TractKey> = index.iter().flat_map(|m| m.keys()).collect();
    report.source_rows = all_keys.len() + extra_rows;

    let mut keys = Vec::new();
    let mut data = Vec::new();
    let mut row_buf = Vec::with_capacity(selected.len());
    'rows: for key in all_keys {
        let Some(positions) = index.iter().map(|m| m.get(key).copied()).collect::<Option<Vec<_>>>()
        else {
            report.discard(REASON_UNMATCHED);
            continue;
        };
        let cell = |s: &SelectedColumn| tables[s.table].rows[positions[s.table]][s.col].as_str();
        if selected.iter().any(|s| cell(s).trim().is_empty()) {
            report.discard(REASON_NULL);
            continue;
        }
        row_buf.clear();
        for s in &selected {
            match s.spec.kind.parse_cell(cell(s)) {
                Some(v) => row_buf.push(v),
                None => {
                    report.discard(REASON_UNPARSEABLE);
                    continue 'rows;
                }
            }
        }
        if selected.iter().zip(&row_buf).any(|(s, &v)| !s.spec.kind.in_range(v)) {
            report.discard(REASON_RANGE);
            continue;
        }
        keys.push(key.clone());
        data.extend_from_slice(&row_buf);
    }
    if keys.is_empty() {
        return Err(DatasetError::NoRowsSurvived);
    }
    report.kept = keys.len();
    let (features, targets): (Vec<_>, Vec<_>) = selected
        .iter()
        .partition(|s| s.spec.role == ColumnRole::Feature);
    let key_spec = &specs[0][key_cols[0]];
    Ok(CleanDataset {
        key_name: key_spec.standard_name.clone(),
        values: Matrix::from_vec(keys.len(), selected.len(), data).expect("row width fixed"),
        keys,
        feature_names: features.iter().map(|s| s.spec.standard_name.clone()).collect(),
        target_names: targets.iter().map(|s| s.spec.standard_name.clone()).collect(),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(name: &str, csv: &str, specs: &[ColumnSpec]) -> RawTable {
        normalize_nulls(read_table(csv.as_bytes(), name, specs).unwrap(), &NullTokens::default())
    }

    fn key(i: u32) -> String {
        format!("170310{i:05}")
    }

    #[test]
    fn tract_key_rules() {
        assert_eq!(TractKey::parse("17031010100").unwrap().as_str(), "17031010100");
        assert_eq!(TractKey::parse(" 1001020100 ").unwrap().as_str(), "01001020100");
        assert_eq!(TractKey::parse("17031010100").unwrap().state(), "17");
        assert!(TractKey::parse("1703101010").is_ok());
        assert!(TractKey::parse("170310101").is_err());
        assert!(TractKey::parse("1703101010A").is_err());
        assert!(TractKey::parse("170310101000").is_err());
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize_name("ACCESS2_CrudePrev").unwrap(), "access2_crude_prev");
        assert_eq!(standardize_name("already_snake").unwrap(), "already_snake");
        assert_eq!(standardize_name("% Bad Physical Health").unwrap(), "bad_physical_health");
        assert_eq!(standardize_name("2017 Median Income").unwrap(), "c_2017_median_income");
        assert_eq!(standardize_name("HTTPServer--Load").unwrap(), "http_server_load");
        assert!(matches!(standardize_name(""), Err(DatasetError::EmptyName(_))));
        assert!(matches!(standardize_name("%%"), Err(DatasetError::EmptyName(_))));
    }

    proptest! {
        #[test]
        fn standardize_is_idempotent_and_valid(s in "\\PC{0,24}") {
            if let Ok(once) = standardize_name(&s) {
                prop_assert!(is_standard_name(&once), "{once}");
                prop_assert_eq!(standardize_name(&once).unwrap(), once);
            }
        }

        #[test]
        fn normalize_nulls_is_idempotent(cells in proptest::collection::vec("[ nNaA/.\\-()X0-9]{0,5}", 1..12)) {
            let t = RawTable {
                name: "t".into(),
                header: vec!["c".into()],
                source_header: vec!["c".into()],
                rows: cells.iter().map(|c| vec![c.clone()]).collect(),
                source_rows: cells.len(),
            };
            let tokens = NullTokens::default();
            let once = normalize_nulls(t, &tokens);
            let twice = normalize_nulls(once.clone(), &tokens);
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn null_normalization() {
        let tokens = NullTokens::default();
        let specs = vec![ColumnSpec::key("GEOID").unwrap(), ColumnSpec::feature("v", ColumnKind::Count).unwrap()];
        let csv = format!("GEOID,v\n{},N/A\n{},42.0\n{},  na \n{},(x)\n", key(1), key(2), key(3), key(4));
        let t = normalize_nulls(read_table(csv.as_bytes(), "t", &specs).unwrap(), &tokens);
        let col: Vec<&str> = t.rows.iter().map(|r| r[1].as_str()).collect();
        assert_eq!(col, vec![EMPTY, "42.0", EMPTY, EMPTY]);
    }

    #[test]
    fn load_selects_declared_columns() {
        let specs = vec![
            ColumnSpec::key("GEOID").unwrap(),
            ColumnSpec::feature("Median Income", ColumnKind::Currency).unwrap(),
        ];
        let csv = format!("GEOID,Noise,Median Income\n{},x,1\n{},y,2\n{},z,3\n", key(1), key(2), key(3));
        let t = read_table(csv.as_bytes(), "socio", &specs).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.source_rows, 3);
        assert_eq!(t.header, vec!["geoid", "median_income"]);
        assert_eq!(t.rows[2], vec![key(3), "3".to_string()]);
    }

    #[test]
    fn load_errors() {
        let specs = vec![
            ColumnSpec::key("GEOID").unwrap(),
            ColumnSpec::feature("income_xyz", ColumnKind::Currency).unwrap(),
        ];
        let err = read_table("GEOID,income\n".as_bytes(), "socio", &specs).unwrap_err();
        assert!(err.to_string().contains("income_xyz"), "{err}");

        let specs = vec![
            ColumnSpec::key("GEOID").unwrap(),
            ColumnSpec::feature("Median Income", ColumnKind::Currency).unwrap(),
            ColumnSpec::feature("median_income", ColumnKind::Currency).unwrap(),
        ];
        let err = read_table("GEOID,Median Income,median_income\n".as_bytes(), "socio", &specs).unwrap_err();
        assert!(matches!(err, DatasetError::NameCollision { .. }), "{err}");

        let specs = vec![ColumnSpec::feature("a", ColumnKind::Count).unwrap()];
        let err = read_table("a\n1\n".as_bytes(), "t", &specs).unwrap_err();
        assert!(matches!(err, DatasetError::KeyCount { count: 0, .. }));

        assert!(ColumnSpec::new("x", Some("Bad Name"), ColumnRole::Feature, ColumnKind::Count).is_err());
    }

    #[test]
    fn inner_join_counts_unmatched() {
        let s1 = vec![ColumnSpec::key("GEOID").unwrap(), ColumnSpec::feature("a", ColumnKind::Count).unwrap()];
        let s2 = vec![ColumnSpec::key("TractFIPS").unwrap(), ColumnSpec::target("b", ColumnKind::Percent).unwrap()];
        let (a, b, c, d) = (key(1), key(2), key(3), key(4));
        let t1 = table("one", &format!("GEOID,a\n{a},1\n{b},2\n{c},3\n"), &s1);
        let t2 = table("two", &format!("TractFIPS,b\n{b},20\n{c},30\n{d},40\n"), &s2);
        let ds = join_and_clean(&[t1.clone(), t2.clone()], &[s1.clone(), s2.clone()]).unwrap();
        assert_eq!(ds.nrows(), 2);
        assert_eq!(ds.report.discard_reasons[REASON_UNMATCHED], 2);
        assert_eq!(ds.report.source_rows, 4);
        assert_eq!(ds.values.as_slice(), &[2.0, 20.0, 3.0, 30.0]);
        assert_eq!(ds.key_name, "geoid");

        // table order changes column order only
        let rev = join_and_clean(&[t2, t1], &[s2, s1]).unwrap();
        assert_eq!(rev.keys, ds.keys);
        assert_eq!(rev.column("a").unwrap(), ds.column("a").unwrap());
        assert_eq!(rev.column("b").unwrap(), ds.column("b").unwrap());
        assert_eq!(rev.report.discard_reasons, ds.report.discard_reasons);
    }

    #[test]
    fn rows_dropped_by_reason() {
        let specs = vec![
            ColumnSpec::key("GEOID").unwrap(),
            ColumnSpec::feature("pct", ColumnKind::Percent).unwrap(),
            ColumnSpec::feature("income", ColumnKind::Currency).unwrap(),
            ColumnSpec::target("y", ColumnKind::Percent).unwrap(),
        ];
        let csv = format!(
            "GEOID,pct,income,y\n{},10%,\"$45,000\",5\n{},NA,1,5\n{},135,1,5\n{},abc,1,5\nbad,1,1,1\n{},1,1\n{},1,-666666666,2\n",
            key(1), key(2), key(3), key(4), key(5), key(6)
        );
        let t = table("t", &csv, &specs);
        let ds = join_and_clean(&[t], &[specs]).unwrap();
        let r = &ds.report;
        assert_eq!(ds.nrows(), 1);
        assert_eq!(ds.values.row(0), &[10.0, 45000.0, 5.0]);
        assert_eq!(r.discard_reasons[REASON_NULL], 1);
        assert_eq!(r.discard_reasons[REASON_RANGE], 2);
        assert_eq!(r.discard_reasons[REASON_UNPARSEABLE], 1);
        assert_eq!(r.discard_reasons[REASON_INVALID_KEY], 1);
        assert_eq!(r.discard_reasons[REASON_RAGGED], 1);
        assert_eq!(r.source_rows, 7);
        assert_eq!(r.source_rows, r.kept + r.discarded());
    }

    #[test]
    fn join_errors() {
        let specs = vec![ColumnSpec::key("GEOID").unwrap(), ColumnSpec::feature("a", ColumnKind::Count).unwrap()];
        let t = table("t", &format!("GEOID,a\n{},1\n{},2\n", key(1), key(1)), &specs);
        assert!(matches!(
            join_and_clean(&[t], std::slice::from_ref(&specs)),
            Err(DatasetError::DuplicateKey { .. })
        ));
        let t = table("t", &format!("GEOID,a\n{},\n", key(1)), &specs);
        assert!(matches!(
            join_and_clean(&[t], std::slice::from_ref(&specs)),
            Err(DatasetError::NoRowsSurvived)
        ));
        assert!(matches!(join_and_clean(&[], &[]), Err(DatasetError::NoTables)));
        let t = table("t", &format!("GEOID,a\n{},1\n", key(1)), &specs);
        assert!(matches!(
            join_and_clean(&[t.clone(), t], &[specs.clone(), specs]),
            Err(DatasetError::DuplicateColumn(_))
        ));
    }

    #[test]
    fn csv_output_is_deterministic() {
        let specs = vec![ColumnSpec::key("GEOID").unwrap(), ColumnSpec::target("y", ColumnKind::Percent).unwrap()];
        let csv = format!("GEOID,y\n{},0.1\n{},33.333333333333336\n", key(2), key(1));
        let ds = join_and_clean(&[table("t", &csv, &specs)], std::slice::from_ref(&specs)).unwrap();
        let out = String::from_utf8(ds.to_csv_bytes()).unwrap();
        assert_eq!(out, format!("geoid,y\n{},33.333333333333336\n{},0.1\n", key(1), key(2)));
        let again = join_and_clean(&[table("t", &csv, &specs)], &[specs]).unwrap();
        assert_eq!(again.to_csv_bytes(), ds.to_csv_bytes());
    }

    #[test]
    fn from_columns_validates() {
        let k = |i| TractKey::parse(&key(i)).unwrap();
        assert!(CleanDataset::from_columns(vec![k(1), k(1)], vec![("a".into(), vec![1.0, 2.0])], vec![]).is_err());
        assert!(CleanDataset::from_columns(vec![k(1)], vec![("a".into(), vec![f64::NAN])], vec![]).is_err());
        assert!(CleanDataset::from_columns(
            vec![k(1)],
            vec![("a".into(), vec![1.0])],
            vec![("a".into(), vec![1.0])]
        )
        .is_err());
        let ds = CleanDataset::from_columns(
            vec![k(1), k(2)],
            vec![("a".into(), vec![1.0, 2.0])],
            vec![("y".into(), vec![3.0, 4.0])],
        )
        .unwrap();
        assert_eq!(ds.column("y").unwrap(), vec![3.0, 4.0]);
        assert!(ds.column("zz").is_err());
    }
}
