//! Attribution: which rows, columns, and condition cells of a step's input
//! table determined its output. Row identity flows through a hidden `idx`
//! column carrying original row indices; collapsing queries (aggregates,
//! GROUP BY, DISTINCT) fall back to a companion query over the same
//! FROM/WHERE clause.

use crate::gateway::CallCounters;
use crate::sqlscan;
use crate::stepper::{self, SqlError, TRACKING_COLUMN};
use crate::table::{CellValue, Column, ColumnType, Table};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Name given to a data column that collides with the tracking column.
pub const RENAMED_TRACKING_COLLISION: &str = "idx_orig";

/// One step's attribution: original row indices, input column names, and the
/// (row, column) condition cells its WHERE clause tested.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub rows: BTreeSet<usize>,
    pub columns: BTreeSet<String>,
    pub condition_cells: BTreeSet<(usize, String)>,
    /// The SQL selected `*`, so `columns` covers the whole input width.
    pub wildcard_columns: bool,
    /// Row attribution was degraded to "all input rows" because the
    /// companion query failed.
    pub approximate: bool,
}

/// A table carrying the tracking column at position 0. `lineage` mirrors the
/// tracking values in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedTable {
    pub table: Table,
    pub lineage: Vec<usize>,
}

/// Renames a data column named `idx` to `idx_orig` (keeping the original
/// header as provenance) so the tracking name stays reserved. Tables without
/// such a column come back unchanged.
pub fn avoid_tracking_collision(table: &Table) -> Table {
    let mut out = table.clone();
    if let Some(i) = out.table_column_named_idx() {
        let old = std::mem::replace(&mut out.columns[i].name, RENAMED_TRACKING_COLLISION.into());
        let original = out.provenance.remove(&old).unwrap_or(old);
        out.provenance.insert(RENAMED_TRACKING_COLLISION.into(), original);
    }
    out
}

/// Prepends the tracking column holding `lineage[i]` for row i. A data
/// column already named `idx` is renamed `idx_orig` first.
pub fn add_tracking_column(table: &Table, lineage: &[usize]) -> TrackedTable {
    assert_eq!(table.num_rows(), lineage.len(), "lineage must cover every row");
    let mut out = avoid_tracking_collision(table);
    out.columns.insert(0, Column { name: TRACKING_COLUMN.into(), ty: ColumnType::Integer });
    for (row, &origin) in out.rows.iter_mut().zip(lineage) {
        row.insert(0, CellValue::Int(origin as i64));
    }
    TrackedTable { table: out, lineage: lineage.to_vec() }
}

impl Table {
    fn table_column_named_idx(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.name == TRACKING_COLUMN)
    }
}

/// The identity lineage 0..n for a fresh input table.
pub fn identity_lineage(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Extracts the input column names a SELECT references in its select list,
/// WHERE, GROUP BY, HAVING, and ORDER BY clauses, plus whether it selects
/// `*`. Candidates are matched against `known_columns`; FROM clauses and
/// alias/function names never contribute.
pub fn extract_columns(sql: &str, known_columns: &[String]) -> (BTreeSet<String>, bool) {
    let known: BTreeSet<String> = known_columns.iter().map(|c| c.to_lowercase()).collect();
    let toks = sqlscan::tokenize(sql);
    let mut out = BTreeSet::new();
    let Some(shape) = sqlscan::parse_select(&toks) else {
        // Not a SELECT; scan everything as a best effort.
        sqlscan::collect_known_idents(&toks, (0, toks.len()), &known, &mut out);
        let wildcard = toks
            .iter()
            .any(|t| t.kind == sqlscan::TokKind::Symbol && t.text == "*");
        return (out, wildcard);
    };
    let mut wildcard = false;
    for item in &shape.items {
        if sqlscan::is_bare_star(&toks, *item) {
            wildcard = true;
        } else {
            sqlscan::collect_known_idents(&toks, *item, &known, &mut out);
        }
    }
    for range in [shape.where_, shape.group_by, shape.having, shape.order_by]
        .into_iter()
        .flatten()
    {
        sqlscan::collect_known_idents(&toks, range, &known, &mut out);
    }
    (out, wildcard)
}

/// Column names referenced in the WHERE clause only.
fn where_columns(sql: &str, known: &BTreeSet<String>) -> BTreeSet<String> {
    let toks = sqlscan::tokenize(sql);
    let mut out = BTreeSet::new();
    if let Some(shape) = sqlscan::parse_select(&toks) {
        if let Some(range) = shape.where_ {
            sqlscan::collect_known_idents(&toks, range, known, &mut out);
        }
    }
    out
}

/// The outcome of executing one step with attribution.
#[derive(Debug, Clone, PartialEq)]
pub struct StepExecution {
    /// The visible output table, tracking column stripped.
    pub result: Table,
    /// Original row index per output row. Collapsing steps reset this to the
    /// output's own positions.
    pub output_lineage: Vec<usize>,
    pub attribution: AttributionMap,
    /// The step aggregated, grouped, or deduplicated, so row identity did
    /// not survive.
    pub collapsed: bool,
}

fn is_collapsing(toks: &[sqlscan::Token], shape: &sqlscan::SelectShape) -> bool {
    shape.distinct
        || shape.group_by.is_some()
        || shape.items.iter().any(|item| sqlscan::contains_aggregate(toks, *item))
}

/// Rewrites a row-preserving SELECT so the tracking column rides along:
/// `SELECT *` already includes it; any other select list gets `idx, `
/// prepended.
fn augment_select(sql: &str, toks: &[sqlscan::Token], shape: &sqlscan::SelectShape) -> String {
    let all_star = shape.items.iter().any(|item| sqlscan::is_bare_star(toks, *item));
    if all_star {
        return sql.to_string();
    }
    let first = shape.items.first().map(|(s, _)| *s).unwrap_or(0);
    let at = toks.get(first).map(|t| t.start).unwrap_or(0);
    format!("{}{}, {}", &sql[..at], TRACKING_COLUMN, &sql[at..])
}

/// Builds the companion row-provenance query for a collapsing SELECT:
/// `SELECT idx FROM table_sql` with the same WHERE clause, keeping ORDER
/// BY/LIMIT only when they are aggregate-free and reference only real input
/// columns.
fn companion_sql(
    sql: &str,
    toks: &[sqlscan::Token],
    shape: &sqlscan::SelectShape,
    known: &BTreeSet<String>,
) -> String {
    let mut out = format!("SELECT {TRACKING_COLUMN} FROM {}", stepper::TABLE_NAME);
    if let Some(range) = shape.where_ {
        out.push_str(" WHERE ");
        out.push_str(sqlscan::slice(sql, toks, range));
    }
    if let Some(order) = shape.order_by {
        let order_aggregate_free = !sqlscan::contains_aggregate(toks, order)
            && shape.limit.map_or(true, |l| !sqlscan::contains_aggregate(toks, l));
        let mut order_idents = BTreeSet::new();
        sqlscan::collect_known_idents(toks, order, known, &mut order_idents);
        let mut all_idents = BTreeSet::new();
        let all: BTreeSet<String> = toks[order.0..order.1.min(toks.len())]
            .iter()
            .filter(|t| t.kind == sqlscan::TokKind::Word)
            .filter(|t| !["asc", "desc", "collate", "nocase"].contains(&t.text.as_str()))
            .map(|t| t.text.clone())
            .collect();
        all_idents.extend(all);
        let only_known_columns = all_idents.iter().all(|w| known.contains(w));
        if order_aggregate_free && only_known_columns {
            out.push_str(" ORDER BY ");
            out.push_str(sqlscan::slice(sql, toks, order));
            if let Some(limit) = shape.limit {
                out.push_str(" LIMIT ");
                out.push_str(sqlscan::slice(sql, toks, limit));
            }
        }
    }
    out.push(';');
    out
}

fn tracking_values(result: &Table) -> Option<Vec<usize>> {
    let idx = result.column_index(TRACKING_COLUMN)?;
    let mut out = Vec::with_capacity(result.num_rows());
    for row in &result.rows {
        match row[idx] {
            CellValue::Int(v) if v >= 0 => out.push(v as usize),
            _ => return None,
        }
    }
    Some(out)
}

fn strip_tracking(table: &Table) -> Table {
    let Some(idx) = table.column_index(TRACKING_COLUMN) else {
        return table.clone();
    };
    let mut out = table.clone();
    out.columns.remove(idx);
    out.provenance.remove(TRACKING_COLUMN);
    for row in out.rows.iter_mut() {
        row.remove(idx);
    }
    out
}

/// Executes one sanitized step statement over a tracked table, returning the
/// output table, its lineage, and the step's attribution map.
///
/// Row-preserving steps read row identity directly from the tracking column
/// carried through the select list. Collapsing steps re-derive contributing
/// rows with the companion query; if that fails, attribution degrades to all
/// input rows and is flagged approximate.
pub fn execute_with_attribution(
    tracked: &TrackedTable,
    sql: &str,
    counters: &CallCounters,
) -> Result<StepExecution, SqlError> {
    let known: BTreeSet<String> = tracked
        .table
        .columns
        .iter()
        .map(|c| c.name.clone())
        .filter(|name| name != TRACKING_COLUMN)
        .collect();
    let known_vec: Vec<String> = known.iter().cloned().collect();

    let toks = sqlscan::tokenize(sql);
    let shape = sqlscan::parse_select(&toks)
        .ok_or_else(|| SqlError::Generation("statement is not a SELECT".into()))?;
    let collapsed = is_collapsing(&toks, &shape);

    let exec_sql = if collapsed { sql.to_string() } else { augment_select(sql, &toks, &shape) };
    let executed = stepper::execute_sql(&tracked.table, &exec_sql, counters)?;

    let (mut columns, wildcard) = extract_columns(sql, &known_vec);
    if wildcard {
        columns.extend(known.iter().cloned());
    }

    let rows: BTreeSet<usize>;
    let output_lineage: Vec<usize>;
    let mut approximate = false;
    if collapsed {
        let companion = companion_sql(sql, &toks, &shape, &known);
        match stepper::execute_attribution_sql(&tracked.table, &companion, counters)
            .map(|r| tracking_values(&r.table))
        {
            Ok(Some(values)) => {
                rows = values.into_iter().collect();
            }
            Ok(None) | Err(_) => {
                rows = tracked.lineage.iter().copied().collect();
                approximate = true;
            }
        }
        // Row identity does not survive a collapse; downstream steps see the
        // output's own positions.
        output_lineage = identity_lineage(executed.table.num_rows());
    } else {
        match tracking_values(&executed.table) {
            Some(values) => {
                rows = values.iter().copied().collect();
                output_lineage = values;
            }
            None => {
                // The tracking column did not come back (engine quirk);
                // degrade the same way the companion path does.
                rows = tracked.lineage.iter().copied().collect();
                output_lineage = identity_lineage(executed.table.num_rows());
                approximate = true;
            }
        }
    }

    let condition_columns = where_columns(sql, &known);
    let condition_cells: BTreeSet<(usize, String)> = rows
        .iter()
        .flat_map(|r| condition_columns.iter().map(move |c| (*r, c.clone())))
        .collect();

    Ok(StepExecution {
        result: strip_tracking(&executed.table),
        output_lineage,
        attribution: AttributionMap {
            rows,
            columns,
            condition_cells,
            wildcard_columns: wildcard,
            approximate,
        },
        collapsed,
    })
}
