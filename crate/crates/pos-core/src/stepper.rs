//! Converting steps to SQL and executing them: prompt construction, output
//! sanitization, and execution against a fresh in-memory SQLite database
//! seeded with the current intermediate table.

use crate::dataset::TaskKind;
use crate::gateway::templates::SQL_EXAMPLE;
use crate::gateway::{
    render_prompt, CallCounters, CompletionParams, Gateway, GatewayError, TemplateId,
};
use crate::sqlscan;
use crate::table::{sanitize_identifiers, CellValue, Column, ColumnType, Table};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// The only table name generated SQL may read from.
pub const TABLE_NAME: &str = "table_sql";

/// Name of the hidden row-tracking column; generated SQL must never mention
/// it, and an incoming data column with this name is renamed before the model
/// ever sees the table.
pub const TRACKING_COLUMN: &str = "idx";

#[derive(Debug, Error)]
pub enum SqlError {
    #[error("unusable generated SQL: {0}")]
    Generation(String),
    #[error("SQL execution failed: {0}")]
    Execution(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// How a step ended, recorded in its trace entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    GenerationFailed,
    ExecutionFailed,
}

/// The table produced by one executed statement.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub table: Table,
    pub row_count: usize,
}

/// Asks the model to turn one natural-language step into SQL over the current
/// intermediate table. `original_row_count` is the row count of the sample's
/// input table, quoted in the prompt for scale context.
pub fn step_to_sql(
    gateway: &Gateway,
    counters: &CallCounters,
    params: &CompletionParams,
    intermediate: &Table,
    step_text: &str,
    original_row_count: usize,
) -> Result<String, SqlError> {
    let dtype_lines = intermediate
        .columns
        .iter()
        .map(|c| format!("- {}: {}", c.name, c.ty.dtype_str()))
        .collect::<Vec<_>>()
        .join("\n");
    let existing_cols = intermediate.column_names().join(", ");
    let mut bindings = BTreeMap::new();
    bindings.insert("in_context_examples".into(), SQL_EXAMPLE.to_string());
    bindings.insert("table".into(), intermediate.to_markdown());
    bindings.insert("dtype_lines".into(), dtype_lines);
    bindings.insert("step".into(), step_text.to_string());
    bindings.insert("num_rows".into(), original_row_count.to_string());
    bindings.insert("existing_cols".into(), existing_cols);
    bindings.insert("table_name".into(), TABLE_NAME.to_string());
    let prompt = render_prompt(TemplateId::StepToSql, &bindings)?;
    Ok(gateway.complete(TemplateId::StepToSql, &prompt, params, counters)?)
}

const FORBIDDEN_VERBS: &[&str] = &[
    "insert", "update", "delete", "drop", "create", "alter", "replace", "attach", "detach",
    "pragma", "vacuum", "begin", "commit", "rollback", "reindex", "analyze", "with",
];

/// Extracts one executable SELECT from a model completion. Strips code
/// fences and surrounding prose, requires a single statement, rejects
/// anything but SELECT, requires every FROM/JOIN target to be `table_sql`,
/// and rejects references to the reserved tracking column.
pub fn sanitize_sql(raw: &str) -> Result<String, SqlError> {
    let mut candidate = raw;
    if let Some(fence_start) = raw.find("```") {
        let after = &raw[fence_start + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after[body_start..];
        candidate = match body.find("```") {
            Some(end) => &body[..end],
            None => body,
        };
    }
    let toks = sqlscan::tokenize(candidate);
    let start = toks
        .iter()
        .position(|t| t.is_word("select"))
        .ok_or_else(|| SqlError::Generation("no SELECT statement found".into()))?;
    // Verbs appearing before the SELECT mean the statement is not a plain
    // query (e.g. INSERT INTO ... SELECT, CREATE TABLE AS SELECT).
    if let Some(verb) = toks[..start].iter().find(|t| FORBIDDEN_VERBS.contains(&t.text.as_str())) {
        return Err(SqlError::Generation(format!(
            "statement verb {} is not allowed",
            verb.text.to_uppercase()
        )));
    }
    let toks = &toks[start..];
    let is_semi = |t: &sqlscan::Token| t.kind == sqlscan::TokKind::Symbol && t.text == ";";
    let end = toks.iter().position(is_semi).unwrap_or(toks.len());
    // Anything substantive after the first statement terminator makes this a
    // multi-statement payload.
    if toks[end..].iter().skip(1).any(|t| !is_semi(t)) {
        return Err(SqlError::Generation("multiple SQL statements".into()));
    }
    let toks = &toks[..end];
    for (i, t) in toks.iter().enumerate() {
        if t.is_word("from") || t.is_word("join") {
            match toks.get(i + 1) {
                Some(next) if next.kind == sqlscan::TokKind::Symbol && next.text == "(" => {}
                Some(next)
                    if (next.kind == sqlscan::TokKind::Word && next.text == TABLE_NAME)
                        || (next.kind == sqlscan::TokKind::DoubleQuoted
                            && next.text.to_lowercase() == TABLE_NAME) => {}
                Some(next) => {
                    return Err(SqlError::Generation(format!(
                        "FROM target must be {TABLE_NAME}, found {:?}",
                        next.text
                    )));
                }
                None => return Err(SqlError::Generation("dangling FROM".into())),
            }
        }
        if t.is_word(TRACKING_COLUMN)
            || (t.kind == sqlscan::TokKind::DoubleQuoted
                && t.text.to_lowercase() == TRACKING_COLUMN)
        {
            return Err(SqlError::Generation(format!(
                "{TRACKING_COLUMN} is a reserved identifier"
            )));
        }
    }
    let shape = sqlscan::parse_select(toks)
        .ok_or_else(|| SqlError::Generation("statement is not a SELECT".into()))?;
    if shape.compound {
        return Err(SqlError::Generation("compound SELECT statements are not allowed".into()));
    }
    if shape.items.is_empty() {
        return Err(SqlError::Generation("empty select list".into()));
    }
    let text_start = toks[0].start;
    let text_end = toks[toks.len() - 1].end;
    Ok(format!("{};", candidate[text_start..text_end].trim()))
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn bind_value(cell: &CellValue) -> rusqlite::types::Value {
    match cell {
        CellValue::Text(s) => rusqlite::types::Value::Text(s.clone()),
        CellValue::Int(i) => rusqlite::types::Value::Integer(*i),
        CellValue::Real(f) => rusqlite::types::Value::Real(*f),
        CellValue::Null => rusqlite::types::Value::Null,
    }
}

fn read_value(v: rusqlite::types::ValueRef<'_>) -> CellValue {
    match v {
        rusqlite::types::ValueRef::Null => CellValue::Null,
        rusqlite::types::ValueRef::Integer(i) => CellValue::Int(i),
        rusqlite::types::ValueRef::Real(f) => {
            if f.is_finite() {
                CellValue::Real(f)
            } else {
                CellValue::Null
            }
        }
        rusqlite::types::ValueRef::Text(t) => CellValue::Text(String::from_utf8_lossy(t).into()),
        rusqlite::types::ValueRef::Blob(b) => CellValue::Text(hex::encode(b)),
    }
}

/// Appends `, idx ASC` to a top-level ORDER BY so ordering ties never
/// reshuffle rows between runs. Only applied when the tracking column is
/// present and the query keeps rows (no aggregation), where `idx` is
/// guaranteed to be a valid reference.
fn append_order_tiebreak(sql: &str) -> String {
    let toks = sqlscan::tokenize(sql);
    let Some(shape) = sqlscan::parse_select(&toks) else {
        return sql.to_string();
    };
    let collapsing = shape.distinct
        || shape.group_by.is_some()
        || shape.items.iter().any(|item| sqlscan::contains_aggregate(&toks, *item));
    let Some((start, end)) = shape.order_by else {
        return sql.to_string();
    };
    if collapsing || start >= end || end > toks.len() {
        return sql.to_string();
    }
    let insert_at = toks[end - 1].end;
    format!("{}, {} ASC{}", &sql[..insert_at], TRACKING_COLUMN, &sql[insert_at..])
}

fn result_column_type(rows: &[Vec<CellValue>], j: usize) -> ColumnType {
    let mut saw_real = false;
    let mut saw_int = false;
    for row in rows {
        match &row[j] {
            CellValue::Text(_) => return ColumnType::Text,
            CellValue::Real(_) => saw_real = true,
            CellValue::Int(_) => saw_int = true,
            CellValue::Null => {}
        }
    }
    if saw_real {
        ColumnType::Real
    } else if saw_int {
        ColumnType::Integer
    } else {
        ColumnType::Text
    }
}

fn run_query(table: &Table, sql: &str) -> Result<ResultTable, SqlError> {
    let exec_err = |e: rusqlite::Error| SqlError::Execution(e.to_string());
    let conn = rusqlite::Connection::open_in_memory().map_err(exec_err)?;
    let decls = table
        .columns
        .iter()
        .map(|c| format!("{} {}", quote_ident(&c.name), c.ty.sql_decl()))
        .collect::<Vec<_>>()
        .join(", ");
    conn.execute_batch(&format!("CREATE TABLE {TABLE_NAME} ({decls});"))
        .map_err(exec_err)?;
    {
        let placeholders = vec!["?"; table.num_columns()].join(", ");
        let mut insert = conn
            .prepare(&format!("INSERT INTO {TABLE_NAME} VALUES ({placeholders})"))
            .map_err(exec_err)?;
        for row in &table.rows {
            let values: Vec<rusqlite::types::Value> = row.iter().map(bind_value).collect();
            insert
                .execute(rusqlite::params_from_iter(values.iter()))
                .map_err(exec_err)?;
        }
    }
    let sql = if table.column_index(TRACKING_COLUMN) == Some(0) {
        append_order_tiebreak(sql)
    } else {
        sql.to_string()
    };
    let mut stmt = conn.prepare(&sql).map_err(exec_err)?;
    let raw_names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let (names, provenance) = sanitize_identifiers(&raw_names)
        .map_err(|e| SqlError::Execution(format!("result column names: {e}")))?;
    let width = names.len();
    let mut rows_out: Vec<Vec<CellValue>> = Vec::new();
    let mut rows = stmt.query([]).map_err(exec_err)?;
    while let Some(row) = rows.next().map_err(exec_err)? {
        let mut out = Vec::with_capacity(width);
        for i in 0..width {
            out.push(read_value(row.get_ref(i).map_err(exec_err)?));
        }
        rows_out.push(out);
    }
    // Passthrough columns keep their original-header provenance; derived
    // columns record the engine's name when sanitization changed it.
    let mut provenance: BTreeMap<String, String> = provenance;
    for name in &names {
        if let Some(original) = table.provenance.get(name) {
            provenance.entry(name.clone()).or_insert_with(|| original.clone());
        }
    }
    let columns: Vec<Column> = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| Column { name, ty: result_column_type(&rows_out, j) })
        .collect();
    let row_count = rows_out.len();
    let table_out = Table {
        caption: table.caption.clone(),
        columns,
        rows: rows_out,
        provenance,
    };
    Ok(ResultTable { table: table_out, row_count })
}

/// Executes one sanitized statement against a fresh engine seeded with
/// `table` under the name `table_sql`, and counts one database query.
pub fn execute_sql(
    table: &Table,
    sql: &str,
    counters: &CallCounters,
) -> Result<ResultTable, SqlError> {
    counters.record_db_query();
    run_query(table, sql)
}

/// Same execution path, counted as an attribution query rather than a step
/// query.
pub(crate) fn execute_attribution_sql(
    table: &Table,
    sql: &str,
    counters: &CallCounters,
) -> Result<ResultTable, SqlError> {
    counters.record_attribution_query();
    run_query(table, sql)
}

/// Builds the per-task instruction lines of the end-to-end answering prompt.
pub fn fallback_task_lines(task: TaskKind) -> &'static str {
    match task {
        TaskKind::FactVerification => {
            "1. Verify if the Statement if True or False agaisnt the Input Table.\n2. Explain your verification process based on the provided info.\n3. Your answer must be TRUE or FALSE only."
        }
        TaskKind::ShortAnswer => {
            "1. Answer the Question based on the Input Table.\n2. Explain your reasoning based on the provided info.\n3. End your response with: Answer: value1 | value2 | ... listing only the answer value(s)."
        }
        TaskKind::FreeForm => {
            "1. Answer the Question based on the Input Table.\n2. Explain your reasoning based on the provided info.\n3. End your response with: Answer: followed by a single free-form sentence."
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn salary_table() -> Table {
        Table::from_strings(
            "employees",
            &strings(&["id", "name", "department", "salary", "years"]),
            &[
                strings(&["1", "alice", "it", "95000", "3"]),
                strings(&["2", "bob", "finance", "105000", "5"]),
                strings(&["3", "charlie", "marketing", "88000", "2"]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn sanitize_strips_fences_and_prose() {
        let raw = "Here is the SQL:\n```sql\nSELECT *\nFROM table_sql\nWHERE salary > 100000;\n```\nHope that helps!";
        assert_eq!(
            sanitize_sql(raw).unwrap(),
            "SELECT *\nFROM table_sql\nWHERE salary > 100000;"
        );
    }

    #[test]
    fn sanitize_keeps_plain_statements_and_drops_trailing_comments() {
        let raw = "SELECT * FROM table_sql WHERE salary > 100000;\n-- Select rows where the `salary' is greater than 100000.";
        assert_eq!(sanitize_sql(raw).unwrap(), "SELECT * FROM table_sql WHERE salary > 100000;");
    }

    #[test]
    fn sanitize_rejects_multiple_statements() {
        let err = sanitize_sql("SELECT * FROM table_sql; SELECT 1;").unwrap_err();
        assert!(matches!(err, SqlError::Generation(_)));
    }

    #[test]
    fn sanitize_rejects_ddl_and_dml() {
        for raw in [
            "DROP TABLE table_sql;",
            "DELETE FROM table_sql;",
            "INSERT INTO table_sql SELECT 1;",
            "UPDATE table_sql SET a = 1;",
            "WITH x AS (SELECT 1) SELECT * FROM x;",
        ] {
            assert!(matches!(sanitize_sql(raw), Err(SqlError::Generation(_))), "{raw}");
        }
    }

    #[test]
    fn sanitize_rejects_foreign_tables_and_reserved_idx() {
        assert!(sanitize_sql("SELECT * FROM other_table;").is_err());
        assert!(sanitize_sql("SELECT * FROM table_sql JOIN other ON 1;").is_err());
        assert!(sanitize_sql("SELECT idx FROM table_sql;").is_err());
        assert!(sanitize_sql("SELECT * FROM (SELECT * FROM table_sql);").is_ok());
    }

    #[test]
    fn sanitize_rejects_compound_selects() {
        assert!(sanitize_sql("SELECT a FROM table_sql UNION SELECT b FROM table_sql;").is_err());
    }

    #[test]
    fn executes_a_filter() {
        let counters = CallCounters::new();
        let r = execute_sql(
            &salary_table(),
            "SELECT * FROM table_sql WHERE salary > 100000;",
            &counters,
        )
        .unwrap();
        assert_eq!(r.row_count, 1);
        assert_eq!(r.table.rows[0][1], CellValue::Text("bob".into()));
        assert_eq!(counters.snapshot().db_queries, 1);
    }

    #[test]
    fn derived_columns_carry_their_alias() {
        let counters = CallCounters::new();
        let r = execute_sql(
            &salary_table(),
            "SELECT COUNT(*) AS cnt FROM table_sql;",
            &counters,
        )
        .unwrap();
        assert_eq!(r.table.column_names(), vec!["cnt"]);
        assert_eq!(r.table.rows[0][0], CellValue::Int(3));
        assert_eq!(r.table.columns[0].ty, ColumnType::Integer);
    }

    #[test]
    fn numeric_comparisons_use_typed_columns() {
        let counters = CallCounters::new();
        let r = execute_sql(
            &salary_table(),
            "SELECT name FROM table_sql WHERE years < 4;",
            &counters,
        )
        .unwrap();
        assert_eq!(r.row_count, 2);
    }

    #[test]
    fn execution_errors_are_reported() {
        let counters = CallCounters::new();
        let err = execute_sql(&salary_table(), "SELECT missing FROM table_sql;", &counters)
            .unwrap_err();
        assert!(matches!(err, SqlError::Execution(_)));
        assert_eq!(counters.snapshot().db_queries, 1);
    }

    #[test]
    fn order_by_gets_idx_tiebreak_only_with_tracking_column() {
        let counters = CallCounters::new();
        let mut tracked = salary_table();
        tracked.columns.insert(0, Column { name: "idx".into(), ty: ColumnType::Integer });
        // Equal sort keys: without the tie-break the engine could emit rows in
        // any order; with it, input order is preserved deterministically.
        tracked.rows = vec![
            vec![CellValue::Int(0), CellValue::Int(1), CellValue::Text("a".into()), CellValue::Text("x".into()), CellValue::Int(5), CellValue::Int(1)],
            vec![CellValue::Int(1), CellValue::Int(2), CellValue::Text("b".into()), CellValue::Text("x".into()), CellValue::Int(5), CellValue::Int(1)],
            vec![CellValue::Int(2), CellValue::Int(3), CellValue::Text("c".into()), CellValue::Text("x".into()), CellValue::Int(5), CellValue::Int(1)],
        ];
        let r = execute_sql(
            &tracked,
            "SELECT * FROM table_sql ORDER BY salary DESC LIMIT 2;",
            &counters,
        )
        .unwrap();
        let idxs: Vec<&CellValue> = r.table.rows.iter().map(|r| &r[0]).collect();
        assert_eq!(idxs, vec![&CellValue::Int(0), &CellValue::Int(1)]);
    }

    #[test]
    fn blank_result_sets_keep_column_shape() {
        let counters = CallCounters::new();
        let r = execute_sql(
            &salary_table(),
            "SELECT name, salary FROM table_sql WHERE salary > 999999;",
            &counters,
        )
        .unwrap();
        assert_eq!(r.row_count, 0);
        assert_eq!(r.table.column_names(), vec!["name", "salary"]);
    }
}
