//! Schema manifests and columnar ingestion of CSV tables.
//!
//! A manifest declares every table, its primary key, foreign keys, optional
//! event-time column and the kind of each column. [`load_database`] reads
//! one `<table>.csv` per table and resolves every foreign key to a row index
//! of its target table.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FkViolation, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub target_table: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub primary_key: String,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_column: Option<String>,
    pub columns: Vec<ColumnSpec>,
}

impl TableSpec {
    /// Columns that carry entity attributes: everything except the primary
    /// key, foreign keys and the timestamp column.
    pub fn feature_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(move |c| {
            c.name != self.primary_key
                && self.timestamp_column.as_deref() != Some(c.name.as_str())
                && !self.foreign_keys.iter().any(|fk| fk.column == c.name)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationalSchema {
    pub tables: Vec<TableSpec>,
}

impl RelationalSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: RelationalSchema =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.tables.is_empty() {
            return Err(Error::Schema("empty schema".into()));
        }
        let mut names = HashSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Schema(format!("duplicate table {:?}", t.name)));
            }
        }
        for t in &self.tables {
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate column {:?} in table {:?}",
                        c.name, t.name
                    )));
                }
            }
            if !cols.contains(t.primary_key.as_str()) {
                return Err(Error::Schema(format!(
                    "primary key column {:?} missing from table {:?}",
                    t.primary_key, t.name
                )));
            }
            for fk in &t.foreign_keys {
                if !cols.contains(fk.column.as_str()) {
                    return Err(Error::Schema(format!(
                        "foreign key column {:?} missing from table {:?}",
                        fk.column, t.name
                    )));
                }
                if !names.contains(fk.target_table.as_str()) {
                    return Err(Error::Schema(format!(
                        "foreign key {}.{} targets unknown table {:?}",
                        t.name, fk.column, fk.target_table
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    /// Number of primary/foreign key links, one per foreign key column.
    pub fn relation_count(&self) -> usize {
        self.tables.iter().map(|t| t.foreign_keys.len()).sum()
    }
}

pub fn load_schema(path: &Path) -> Result<RelationalSchema> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RelationalSchema::from_json(&text)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Numeric { values: Vec<f64>, missing: Vec<bool> },
    /// Codes index `dictionary`; code 0 is reserved for missing or unseen.
    Categorical { codes: Vec<u32>, dictionary: Vec<String> },
    Text { values: Vec<Option<String>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: ColumnValues,
}

impl Column {
    pub fn kind(&self) -> ColumnKind {
        match self.values {
            ColumnValues::Numeric { .. } => ColumnKind::Numeric,
            ColumnValues::Categorical { .. } => ColumnKind::Categorical,
            ColumnValues::Text { .. } => ColumnKind::Text,
        }
    }
}

/// A foreign key column resolved to target row indices, -1 for null.
#[derive(Debug, Clone, PartialEq)]
pub struct FkColumn {
    pub column: String,
    pub target: usize,
    pub rows: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableData {
    pub name: String,
    pub num_rows: usize,
    pub primary_keys: Vec<String>,
    pub pk_index: HashMap<String, usize>,
    pub foreign_keys: Vec<FkColumn>,
    /// Event time in seconds; `None` for tables without a timestamp column.
    pub timestamps: Option<Vec<Option<i64>>>,
    /// Feature columns in manifest order.
    pub columns: Vec<Column>,
}

impl TableData {
    pub fn timestamp(&self, row: usize) -> Option<i64> {
        self.timestamps.as_ref().and_then(|ts| ts[row])
    }

    pub fn row_of(&self, key: &str) -> Option<usize> {
        self.pk_index.get(key).copied()
    }
}

/// Immutable columnar contents of all tables, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Database {
    pub tables: Vec<TableData>,
}

/// Untyped table contents: a header and string rows. Empty string = missing.
#[derive(Debug, Clone, Default)]
pub struct StringTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl StringTable {
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let header = rdr
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            rows.push(rec.iter().map(str::to_owned).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(&self.header).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}

/// Parses integer seconds or an ISO-8601 date / date-time (UTC if no
/// offset is given).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
}

pub fn load_database(schema: &RelationalSchema, dir: &Path) -> Result<Database> {
    let raw = schema
        .tables
        .iter()
        .map(|t| StringTable::read_csv(&dir.join(format!("{}.csv", t.name))))
        .collect::<Result<Vec<_>>>()?;
    Database::from_string_tables(schema, &raw)
}

struct PendingFk<'s> {
    spec: &'s ForeignKey,
    target: usize,
    raw: Vec<String>,
}

impl Database {
    /// Builds and validates a database from untyped tables given in
    /// manifest order.
    pub fn from_string_tables(schema: &RelationalSchema, raw: &[StringTable]) -> Result<Self> {
        schema.validate()?;
        assert_eq!(raw.len(), schema.tables.len(), "one string table per schema table");
        let mut tables = Vec::with_capacity(raw.len());
        let mut pending = Vec::with_capacity(raw.len());
        for (spec, st) in schema.tables.iter().zip(raw) {
            let col = |name: &str| -> Result<usize> {
                st.header.iter().position(|h| h == name).ok_or_else(|| {
                    Error::Schema(format!("column {name:?} missing from {}.csv", spec.name))
                })
            };
            for (i, r) in st.rows.iter().enumerate() {
                if r.len() != st.header.len() {
                    return Err(Error::Parse(format!(
                        "{}.csv row {i}: {} fields, header has {}",
                        spec.name,
                        r.len(),
                        st.header.len()
                    )));
                }
            }
            let pk_col = col(&spec.primary_key)?;
            let mut primary_keys = Vec::with_capacity(st.rows.len());
            let mut pk_index = HashMap::with_capacity(st.rows.len());
            for (i, r) in st.rows.iter().enumerate() {
                let key = r[pk_col].clone();
                if key.is_empty() {
                    return Err(Error::Parse(format!(
                        "{}.csv row {i}: empty primary key",
                        spec.name
                    )));
                }
                if pk_index.insert(key.clone(), i).is_some() {
                    return Err(Error::DuplicateKey {
                        table: spec.name.clone(),
                        key,
                    });
                }
                primary_keys.push(key);
            }
            let timestamps = match &spec.timestamp_column {
                Some(c) => {
                    let ci = col(c)?;
                    Some(st.rows.iter().map(|r| parse_timestamp(&r[ci])).collect())
                }
                None => None,
            };
            let mut fks = Vec::new();
            for fk in &spec.foreign_keys {
                let ci = col(&fk.column)?;
                fks.push(PendingFk {
                    spec: fk,
                    target: schema.table_index(&fk.target_table).expect("validated"),
                    raw: st.rows.iter().map(|r| r[ci].clone()).collect(),
                });
            }
            let mut columns = Vec::new();
            for c in spec.feature_columns() {
                let ci = col(&c.name)?;
                let cells = st.rows.iter().map(|r| r[ci].as_str());
                columns.push(Column {
                    name: c.name.clone(),
                    values: parse_column(c.kind, cells),
                });
            }
            tables.push(TableData {
                name: spec.name.clone(),
                num_rows: st.rows.len(),
                primary_keys,
                pk_index,
                foreign_keys: Vec::new(),
                timestamps,
                columns,
            });
            pending.push(fks);
        }

        let mut violations = Vec::new();
        let mut resolved = Vec::with_capacity(pending.len());
        for (ti, fks) in pending.into_iter().enumerate() {
            let mut out = Vec::with_capacity(fks.len());
            for fk in fks {
                let target = &tables[fk.target];
                let rows = fk
                    .raw
                    .iter()
                    .enumerate()
                    .map(|(row, v)| {
                        if v.is_empty() {
                            return -1;
                        }
                        match target.row_of(v) {
                            Some(r) => r as i64,
                            None => {
                                violations.push(FkViolation {
                                    table: tables[ti].name.clone(),
                                    row,
                                    column: fk.spec.column.clone(),
                                    value: v.clone(),
                                });
                                -1
                            }
                        }
                    })
                    .collect();
                out.push(FkColumn {
                    column: fk.spec.column.clone(),
                    target: fk.target,
                    rows,
                });
            }
            resolved.push(out);
        }
        if !violations.is_empty() {
            return Err(Error::Integrity(violations));
        }
        for (t, fks) in tables.iter_mut().zip(resolved) {
            t.foreign_keys = fks;
        }
        Ok(Database { tables })
    }

    /// Writes the database back as untyped tables (manifest order); numbers
    /// use shortest round-trip formatting, timestamps integer seconds.
    pub fn to_string_tables(&self, schema: &RelationalSchema) -> Vec<StringTable> {
        schema
            .tables
            .iter()
            .zip(&self.tables)
            .map(|(spec, t)| {
                let header: Vec<String> = spec.columns.iter().map(|c| c.name.clone()).collect();
                let mut header = header;
                if let Some(ts) = &spec.timestamp_column {
                    if !header.contains(ts) {
                        header.push(ts.clone());
                    }
                }
                let rows = (0..t.num_rows)
                    .map(|row| {
                        header
                            .iter()
                            .map(|h| self.cell(spec, t, h, row))
                            .collect()
                    })
                    .collect();
                StringTable { header, rows }
            })
            .collect()
    }

    fn cell(&self, spec: &TableSpec, t: &TableData, name: &str, row: usize) -> String {
        if name == spec.primary_key {
            return t.primary_keys[row].clone();
        }
        if spec.timestamp_column.as_deref() == Some(name) {
            return t.timestamp(row).map(|v| v.to_string()).unwrap_or_default();
        }
        if let Some(fk) = t.foreign_keys.iter().find(|f| f.column == name) {
            let r = fk.rows[row];
            return if r < 0 {
                String::new()
            } else {
                self.tables[fk.target].primary_keys[r as usize].clone()
            };
        }
        let col = t.columns.iter().find(|c| c.name == name).expect("declared column");
        match &col.values {
            ColumnValues::Numeric { values, missing } => {
                if missing[row] {
                    String::new()
                } else {
                    format!("{}", values[row])
                }
            }
            ColumnValues::Categorical { codes, dictionary } => dictionary[codes[row] as usize].clone(),
            ColumnValues::Text { values } => values[row].clone().unwrap_or_default(),
        }
    }

    pub fn write_csv_dir(&self, schema: &RelationalSchema, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (spec, st) in schema.tables.iter().zip(self.to_string_tables(schema)) {
            st.write_csv(&dir.join(format!("{}.csv", spec.name)))?;
        }
        Ok(())
    }

    pub fn total_rows(&self) -> usize {
        self.tables.iter().map(|t| t.num_rows).sum()
    }
}

fn parse_column<'a>(kind: ColumnKind, cells: impl Iterator<Item = &'a str>) -> ColumnValues {
    match kind {
        ColumnKind::Numeric => {
            let (values, missing) = cells
                .map(|s| match s.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => (v, false),
                    _ => (0.0, true),
                })
                .unzip();
            ColumnValues::Numeric { values, missing }
        }
        ColumnKind::Categorical => {
            let mut dictionary = vec![String::new()];
            let mut lookup: HashMap<String, u32> = HashMap::new();
            let codes = cells
                .map(|s| {
                    if s.is_empty() {
                        return 0;
                    }
                    *lookup.entry(s.to_owned()).or_insert_with(|| {
                        dictionary.push(s.to_owned());
                        (dictionary.len() - 1) as u32
                    })
                })
                .collect();
            ColumnValues::Categorical { codes, dictionary }
        }
        ColumnKind::Text => ColumnValues::Text {
            values: cells
                .map(|s| (!s.is_empty()).then(|| s.to_owned()))
                .collect(),
        },
    }
}

/// Population mean and standard deviation of a numeric column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericStats {
    pub mean: f64,
    pub std: f64,
}

impl Default for NumericStats {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

/// Normalization statistics, indexed `[table][feature column]`; `None` for
/// non-numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub tables: Vec<Vec<Option<NumericStats>>>,
}

impl ColumnStats {
    pub fn get(&self, table: usize, column: usize) -> NumericStats {
        self.tables[table][column].unwrap_or_default()
    }
}

/// Statistics of numeric columns over rows whose timestamp is `<= cutoff`
/// or absent. Rows after the cutoff never contribute.
pub fn column_statistics(db: &Database, cutoff: i64) -> ColumnStats {
    let tables = db
        .tables
        .iter()
        .map(|t| {
            let visible: Vec<usize> = (0..t.num_rows)
                .filter(|&r| t.timestamp(r).is_none_or(|ts| ts <= cutoff))
                .collect();
            t.columns
                .iter()
                .map(|c| match &c.values {
                    ColumnValues::Numeric { values, missing } => {
                        let xs: Vec<f64> = visible
                            .iter()
                            .filter(|&&r| !missing[r])
                            .map(|&r| values[r])
                            .collect();
                        Some(numeric_stats(&xs))
                    }
                    _ => None,
                })
                .collect()
        })
        .collect();
    ColumnStats { tables }
}

fn numeric_stats(xs: &[f64]) -> NumericStats {
    if xs.is_empty() {
        return NumericStats::default();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    NumericStats {
        mean,
        std: if std < 1e-12 { 1.0 } else { std },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(header: &[&str], rows: &[&[&str]]) -> StringTable {
        StringTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: rows
                .iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    fn ecommerce_schema() -> RelationalSchema {
        RelationalSchema::from_json(
            r#"{"tables":[
              {"name":"customers","primary_key":"id","columns":[
                 {"name":"id","kind":"categorical"},{"name":"age","kind":"numeric"}]},
              {"name":"products","primary_key":"id","columns":[
                 {"name":"id","kind":"categorical"},{"name":"title","kind":"text"}]},
              {"name":"transactions","primary_key":"id","timestamp_column":"ts",
               "foreign_keys":[{"column":"customer_id","target_table":"customers"},
                               {"column":"product_id","target_table":"products"}],
               "columns":[{"name":"id","kind":"categorical"},
                          {"name":"customer_id","kind":"categorical"},
                          {"name":"product_id","kind":"categorical"},
                          {"name":"amount","kind":"numeric"},
                          {"name":"channel","kind":"categorical"}]}]}"#,
        )
        .unwrap()
    }

    fn ecommerce_tables(tx_customer: &str) -> Vec<StringTable> {
        vec![
            table(&["id", "age"], &[&["1", "30"], &["2", "x"], &["3", "50"]]),
            table(&["id", "title"], &[&["p1", "Red Shoe"], &["p2", ""]]),
            table(
                &["id", "customer_id", "product_id", "amount", "channel", "ts"],
                &[
                    &["t1", tx_customer, "p1", "2", "web", "100"],
                    &["t2", "1", "", "4", "store", "2024-01-02"],
                    &["t3", "3", "p2", "", "web", ""],
                ],
            ),
        ]
    }

    #[test]
    fn three_table_manifest_counts() {
        let s = ecommerce_schema();
        assert_eq!(s.tables.len(), 3);
        assert_eq!(s.relation_count(), 2);
    }

    #[test]
    fn dangling_target_is_named() {
        let text = ecommerce_schema()
            .to_json()
            .replace("\"target_table\": \"products\"", "\"target_table\": \"prodcuts\"");
        match RelationalSchema::from_json(&text) {
            Err(Error::Schema(msg)) => assert!(msg.contains("prodcuts"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn empty_schema_is_rejected() {
        match RelationalSchema::from_json(r#"{"tables":[]}"#) {
            Err(Error::Schema(msg)) => assert_eq!(msg, "empty schema"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_primary_key_column_is_rejected() {
        let r = RelationalSchema::from_json(
            r#"{"tables":[{"name":"a","primary_key":"id","columns":[{"name":"x","kind":"numeric"}]}]}"#,
        );
        assert!(matches!(r, Err(Error::Schema(_))));
    }

    #[test]
    fn malformed_manifest_is_a_parse_error() {
        assert!(matches!(
            RelationalSchema::from_json("{\"tables\": [ {"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn foreign_keys_resolve_to_row_indices() {
        let db = Database::from_string_tables(&ecommerce_schema(), &ecommerce_tables("2")).unwrap();
        let tx = &db.tables[2];
        assert_eq!(tx.foreign_keys[0].rows, vec![1, 0, 2]);
        assert_eq!(tx.foreign_keys[1].rows, vec![0, -1, 1]);
        assert_eq!(tx.timestamp(0), Some(100));
        assert_eq!(tx.timestamp(1), Some(1_704_153_600));
        assert_eq!(tx.timestamp(2), None);
        // id columns are keys, not features
        assert_eq!(tx.columns.len(), 2);
        match &tx.columns[1].values {
            ColumnValues::Categorical { codes, dictionary } => {
                assert_eq!(codes, &vec![1, 2, 1]);
                assert_eq!(dictionary, &vec!["".to_string(), "web".into(), "store".into()]);
            }
            other => panic!("{other:?}"),
        }
        match &db.tables[0].columns[0].values {
            ColumnValues::Numeric { missing, .. } => assert_eq!(missing, &vec![false, true, false]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unresolved_foreign_key_reports_row_and_value() {
        match Database::from_string_tables(&ecommerce_schema(), &ecommerce_tables("99")) {
            Err(Error::Integrity(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].row, 0);
                assert_eq!(v[0].value, "99");
                assert_eq!(v[0].column, "customer_id");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_primary_key_is_rejected() {
        let mut raw = ecommerce_tables("1");
        raw[1].rows.push(vec!["p7".into(), "a".into()]);
        raw[1].rows.push(vec!["p7".into(), "b".into()]);
        assert!(matches!(
            Database::from_string_tables(&ecommerce_schema(), &raw),
            Err(Error::DuplicateKey { ref key, .. }) if key == "p7"
        ));
    }

    #[test]
    fn statistics_follow_cutoff_and_floor_rules() {
        let s = RelationalSchema::from_json(
            r#"{"tables":[{"name":"e","primary_key":"id","timestamp_column":"ts","columns":[
                {"name":"id","kind":"categorical"},{"name":"x","kind":"numeric"},
                {"name":"c","kind":"numeric"}]}]}"#,
        )
        .unwrap();
        let raw = vec![table(
            &["id", "x", "c", "ts"],
            &[&["a", "2", "5", "1"], &["b", "4", "5", "2"], &["z", "1000", "5", "9"]],
        )];
        let db = Database::from_string_tables(&s, &raw).unwrap();
        let st = column_statistics(&db, 2);
        assert_eq!(st.get(0, 0), NumericStats { mean: 3.0, std: 1.0 });
        assert_eq!(st.get(0, 1), NumericStats { mean: 5.0, std: 1.0 });
        let empty = column_statistics(&db, 0);
        assert_eq!(empty.get(0, 0), NumericStats { mean: 0.0, std: 1.0 });
    }

    #[test]
    fn csv_round_trip_preserves_columns() {
        let schema = ecommerce_schema();
        let db = Database::from_string_tables(&schema, &ecommerce_tables("2")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        db.write_csv_dir(&schema, dir.path()).unwrap();
        let again = load_database(&schema, dir.path()).unwrap();
        assert_eq!(db, again);
    }

    #[test]
    fn timestamps_parse_in_several_forms() {
        assert_eq!(parse_timestamp("86400"), Some(86_400));
        assert_eq!(parse_timestamp("1970-01-02"), Some(86_400));
        assert_eq!(parse_timestamp("1970-01-02T00:00:01Z"), Some(86_401));
        assert_eq!(parse_timestamp("1970-01-02 00:00:02"), Some(86_402));
        assert_eq!(parse_timestamp("soon"), None);
        assert_eq!(parse_timestamp(""), None);
    }
}
