//! Loading and writing question-answering samples in the canonical JSONL form.

use crate::table::{Table, TableError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("record {record}: field {field:?}: {message}")]
    Format { record: usize, field: String, message: String },
    #[error("duplicate sample id {id:?} at record {record}")]
    DuplicateId { id: String, record: usize },
    #[error("record {record}: {source}")]
    Table { record: usize, source: TableError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    FactVerification,
    ShortAnswer,
    FreeForm,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::FactVerification => "fact_verification",
            TaskKind::ShortAnswer => "short_answer",
            TaskKind::FreeForm => "free_form",
        }
    }

    /// How the question is labeled in prompts.
    pub fn question_label(self) -> &'static str {
        match self {
            TaskKind::FactVerification => "Statement",
            TaskKind::ShortAnswer | TaskKind::FreeForm => "Question",
        }
    }
}

/// The reference answer, shaped by task: a truth value, an answer list, or a
/// free-form sentence.
#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    Bool(bool),
    List(Vec<String>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub task: TaskKind,
    pub table: Table,
    pub question: String,
    pub gold: Gold,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    task: TaskKind,
    caption: String,
    columns: Vec<String>,
    rows: Vec<Vec<serde_json::Value>>,
    question: String,
    gold: serde_json::Value,
}

fn cell_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::Null => Some(String::new()),
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn parse_gold(task: TaskKind, v: &serde_json::Value) -> Result<Gold, String> {
    match task {
        TaskKind::FactVerification => match v {
            serde_json::Value::Bool(b) => Ok(Gold::Bool(*b)),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(0) => Ok(Gold::Bool(false)),
                Some(1) => Ok(Gold::Bool(true)),
                _ => Err(format!("expected 0/1, got {n}")),
            },
            serde_json::Value::String(s) => match s.trim().to_uppercase().as_str() {
                "TRUE" => Ok(Gold::Bool(true)),
                "FALSE" => Ok(Gold::Bool(false)),
                other => Err(format!("expected TRUE/FALSE, got {other:?}")),
            },
            other => Err(format!("expected a truth value, got {other}")),
        },
        TaskKind::ShortAnswer => match v {
            serde_json::Value::Array(items) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    out.push(
                        cell_string(item)
                            .ok_or_else(|| format!("non-scalar answer item {item}"))?,
                    );
                }
                Ok(Gold::List(out))
            }
            serde_json::Value::String(s) => Ok(Gold::List(vec![s.clone()])),
            other => Err(format!("expected an answer list, got {other}")),
        },
        TaskKind::FreeForm => match v {
            serde_json::Value::String(s) => Ok(Gold::Text(s.clone())),
            other => Err(format!("expected a string, got {other}")),
        },
    }
}

fn gold_value(gold: &Gold) -> serde_json::Value {
    match gold {
        Gold::Bool(b) => serde_json::Value::String(if *b { "TRUE" } else { "FALSE" }.into()),
        Gold::List(items) => {
            serde_json::Value::Array(items.iter().cloned().map(serde_json::Value::String).collect())
        }
        Gold::Text(s) => serde_json::Value::String(s.clone()),
    }
}

/// Loads samples from a JSONL file, sanitizing headers and inferring column
/// types. Rejects malformed records (with their record index) and duplicate
/// ids.
pub fn load_samples(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples: Vec<Sample> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (record, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Format {
            record,
            field: "<record>".into(),
            message: e.to_string(),
        })?;
        if raw.id.trim().is_empty() {
            return Err(DatasetError::Format {
                record,
                field: "id".into(),
                message: "must be non-empty".into(),
            });
        }
        if let Some(&first) = seen.get(&raw.id) {
            let _ = first;
            return Err(DatasetError::DuplicateId { id: raw.id, record });
        }
        let mut rows: Vec<Vec<String>> = Vec::with_capacity(raw.rows.len());
        for (i, row) in raw.rows.iter().enumerate() {
            let mut cells = Vec::with_capacity(row.len());
            for cell in row {
                cells.push(cell_string(cell).ok_or_else(|| DatasetError::Format {
                    record,
                    field: format!("rows[{i}]"),
                    message: "cells must be scalars".into(),
                })?);
            }
            rows.push(cells);
        }
        let table = Table::from_strings(&raw.caption, &raw.columns, &rows)
            .map_err(|source| DatasetError::Table { record, source })?;
        let gold = parse_gold(raw.task, &raw.gold).map_err(|message| DatasetError::Format {
            record,
            field: "gold".into(),
            message,
        })?;
        seen.insert(raw.id.clone(), record);
        samples.push(Sample { id: raw.id, task: raw.task, table, question: raw.question, gold });
    }
    Ok(samples)
}

/// Loads samples and additionally requires every record to carry the given
/// task kind.
pub fn load_samples_expecting(kind: TaskKind, path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let samples = load_samples(path)?;
    for (record, sample) in samples.iter().enumerate() {
        if sample.task != kind {
            return Err(DatasetError::Format {
                record,
                field: "task".into(),
                message: format!("expected {}, got {}", kind.as_str(), sample.task.as_str()),
            });
        }
    }
    Ok(samples)
}

/// Writes samples as canonical JSONL. Headers are written in their original
/// form so that a load/write cycle round-trips.
pub fn write_samples(samples: &[Sample], path: &Path) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    for sample in samples {
        let t = &sample.table;
        let record = RawRecord {
            id: sample.id.clone(),
            task: sample.task,
            caption: t.caption.clone(),
            columns: t
                .columns
                .iter()
                .map(|c| t.original_header(&c.name).to_string())
                .collect(),
            rows: t
                .rows
                .iter()
                .map(|row| {
                    row.iter().map(|c| serde_json::Value::String(c.render())).collect()
                })
                .collect(),
            question: sample.question.clone(),
            gold: gold_value(&sample.gold),
        };
        serde_json::to_writer(&mut out, &record).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
