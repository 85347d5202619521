//! In-memory tables: cell values, column typing, identifier sanitization, and
//! the markdown form used in prompts.

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("header {index} ({original:?}) sanitizes to an empty identifier")]
    EmptyIdentifier { index: usize, original: String },
    #[error("row {row} has {got} cells, expected {expected}")]
    RowWidth { row: usize, got: usize, expected: usize },
    #[error("invalid column name {name:?}: {reason}")]
    ColumnName { name: String, reason: &'static str },
    #[error("duplicate column name {name:?}")]
    DuplicateColumn { name: String },
}

/// A single table cell. Reals are always finite; non-finite values are never
/// constructed by ingestion or execution.
#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Text(String),
    Int(i64),
    Real(f64),
    Null,
}

impl CellValue {
    /// Ingests a raw string: trimmed, and empty-after-trim becomes Null.
    pub fn from_raw(raw: &str) -> CellValue {
        let t = raw.trim();
        if t.is_empty() {
            CellValue::Null
        } else {
            CellValue::Text(t.to_string())
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, CellValue::Null)
    }

    /// The textual form used in markdown rendering and JSONL output. Null
    /// renders as the empty string.
    pub fn render(&self) -> String {
        match self {
            CellValue::Text(s) => s.clone(),
            CellValue::Int(i) => i.to_string(),
            CellValue::Real(f) => format!("{f}"),
            CellValue::Null => String::new(),
        }
    }
}

fn parse_int(s: &str) -> Option<i64> {
    s.parse::<i64>().ok()
}

fn parse_real(s: &str) -> Option<f64> {
    let lowered = s.trim_start_matches(['+', '-']).to_ascii_lowercase();
    if matches!(lowered.as_str(), "inf" | "infinity" | "nan") {
        return None;
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnType {
    Integer,
    Real,
    Text,
}

impl ColumnType {
    /// Declared type in the execution engine's CREATE TABLE.
    pub fn sql_decl(self) -> &'static str {
        match self {
            ColumnType::Integer => "INTEGER",
            ColumnType::Real => "REAL",
            ColumnType::Text => "TEXT",
        }
    }

    /// Dtype name shown to the model in the SQL-writing prompt.
    pub fn dtype_str(self) -> &'static str {
        match self {
            ColumnType::Integer => "int64",
            ColumnType::Real => "float64",
            ColumnType::Text => "object",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

/// A rectangular table with sanitized column names. `provenance` maps a
/// sanitized name back to the original header for the names that changed.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub caption: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<CellValue>>,
    pub provenance: BTreeMap<String, String>,
}

fn valid_column_name(name: &str) -> Result<(), TableError> {
    let mut chars = name.chars();
    let bad = |reason| TableError::ColumnName { name: name.to_string(), reason };
    match chars.next() {
        None => return Err(bad("empty")),
        Some(c) if c.is_ascii_lowercase() || c == '_' => {}
        Some(_) => return Err(bad("must start with a lowercase letter or underscore")),
    }
    if !chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') {
        return Err(bad("allowed characters are [a-z0-9_]"));
    }
    Ok(())
}

/// Sanitizes raw headers into unique SQL-safe identifiers. Returns the
/// sanitized names and the provenance map (sanitized -> original, for names
/// that changed).
pub fn sanitize_identifiers(
    raw: &[String],
) -> Result<(Vec<String>, BTreeMap<String, String>), TableError> {
    let mut names: Vec<String> = Vec::with_capacity(raw.len());
    let mut taken: BTreeSet<String> = BTreeSet::new();
    let mut provenance = BTreeMap::new();
    for (index, original) in raw.iter().enumerate() {
        let mut name: String = original
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .filter(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '_')
            .collect();
        if name.is_empty() {
            return Err(TableError::EmptyIdentifier { index, original: original.clone() });
        }
        if name.chars().next().unwrap().is_ascii_digit() {
            name.insert(0, '_');
        }
        if taken.contains(&name) {
            let mut n = 2usize;
            while taken.contains(&format!("{name}_{n}")) {
                n += 1;
            }
            name = format!("{name}_{n}");
        }
        taken.insert(name.clone());
        if &name != original {
            provenance.insert(name.clone(), original.clone());
        }
        names.push(name);
    }
    Ok((names, provenance))
}

/// Re-derives every column's type from its cell contents and converts the
/// cells to match. A column is integer iff every non-null cell parses as a
/// signed whole number; real iff every non-null cell parses as a finite
/// decimal and at least one is non-integer; text otherwise (all-null columns
/// are text). Idempotent, and independent of row order.
pub fn infer_column_types(table: &Table) -> Table {
    let mut out = table.clone();
    for (j, col) in out.columns.iter_mut().enumerate() {
        let mut all_int = true;
        let mut all_real = true;
        let mut any_value = false;
        for row in &table.rows {
            let cell = &row[j];
            if cell.is_null() {
                continue;
            }
            any_value = true;
            let s = cell.render();
            if parse_int(&s).is_none() {
                all_int = false;
                if parse_real(&s).is_none() {
                    all_real = false;
                    break;
                }
            }
        }
        col.ty = if !any_value || !all_real {
            ColumnType::Text
        } else if all_int {
            ColumnType::Integer
        } else {
            ColumnType::Real
        };
        for row in out.rows.iter_mut() {
            let cell = &mut row[j];
            if cell.is_null() {
                continue;
            }
            let s = cell.render();
            *cell = match col.ty {
                ColumnType::Integer => CellValue::Int(parse_int(&s).unwrap()),
                ColumnType::Real => CellValue::Real(parse_real(&s).unwrap()),
                ColumnType::Text => CellValue::Text(s),
            };
        }
    }
    out
}

impl Table {
    /// Builds a typed table from raw headers and string cells: headers are
    /// sanitized, cells trimmed (empty becomes null), column types inferred.
    pub fn from_strings(
        caption: &str,
        raw_headers: &[String],
        raw_rows: &[Vec<String>],
    ) -> Result<Table, TableError> {
        let (names, provenance) = sanitize_identifiers(raw_headers)?;
        let mut rows = Vec::with_capacity(raw_rows.len());
        for (i, raw_row) in raw_rows.iter().enumerate() {
            if raw_row.len() != names.len() {
                return Err(TableError::RowWidth {
                    row: i,
                    got: raw_row.len(),
                    expected: names.len(),
                });
            }
            rows.push(raw_row.iter().map(|c| CellValue::from_raw(c)).collect());
        }
        let table = Table {
            caption: caption.to_string(),
            columns: names
                .into_iter()
                .map(|name| Column { name, ty: ColumnType::Text })
                .collect(),
            rows,
            provenance,
        };
        Ok(infer_column_types(&table))
    }

    /// Checks the structural invariants: unique sane column names and
    /// rectangular rows.
    pub fn validate(&self) -> Result<(), TableError> {
        let mut seen = BTreeSet::new();
        for col in &self.columns {
            valid_column_name(&col.name)?;
            if !seen.insert(col.name.as_str()) {
                return Err(TableError::DuplicateColumn { name: col.name.clone() });
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(TableError::RowWidth {
                    row: i,
                    got: row.len(),
                    expected: self.columns.len(),
                });
            }
        }
        Ok(())
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// The header as originally written, falling back to the sanitized name.
    pub fn original_header<'a>(&'a self, name: &'a str) -> &'a str {
        self.provenance.get(name).map(String::as_str).unwrap_or(name)
    }

    /// Renders the prompt form of the table:
    ///
    /// ```text
    /// col : a | b
    /// row 1 : 1 | x
    /// ```
    ///
    /// Null cells render empty; literal `|` inside a cell is replaced with `/`
    /// so the column count stays recoverable.
    pub fn to_markdown(&self) -> String {
        let clean = |s: String| s.replace('|', "/");
        let mut out = String::new();
        out.push_str("col : ");
        let headers: Vec<String> = self
            .columns
            .iter()
            .map(|c| clean(self.original_header(&c.name).to_string()))
            .collect();
        out.push_str(&headers.join(" | "));
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| clean(c.render())).collect();
            out.push_str(&format!("row {} : {}\n", i + 1, cells.join(" | ")));
        }
        out.pop();
        out
    }
}
