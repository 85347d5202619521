//! End-to-end answering: plan, convert, execute, attribute, extract — with a
//! single LLM fallback when any stage of the pipeline fails — plus dataset
//! runs over a worker pool and trace persistence.

use crate::attribution::{
    add_tracking_column, avoid_tracking_collision, identity_lineage, AttributionMap,
};
use crate::dataset::{Gold, Sample, TaskKind};
use crate::eval::denotation_match;
use crate::gateway::{
    call_breakdown, render_prompt, CallCounters, CompletionParams, CounterSnapshot, Gateway,
    TemplateId,
};
use crate::planner::{
    self, is_final_sql, plan_full, plan_next_step, AtomicityEntry, NextStep, PlanError,
    PlanningMode, Step,
};
use crate::stepper::{self, sanitize_sql, step_to_sql, SqlError, StepStatus};
use crate::table::Table;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use crate::planner::MAX_STEPS;

/// Rows kept in stored table snapshots; longer tables are cut and flagged.
pub const SNAPSHOT_ROW_LIMIT: usize = 200;

/// Which pipeline failure routed a sample to the end-to-end fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    Generation,
    Execution,
    PlanParse,
    PlanOverrun,
    AnswerExtract,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotColumn {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub original: Option<String>,
    pub dtype: String,
}

/// A stored view of a table: rendered cells, capped row count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSnapshot {
    pub caption: String,
    pub columns: Vec<SnapshotColumn>,
    pub rows: Vec<Vec<String>>,
    pub total_rows: usize,
    pub truncated: bool,
}

impl TableSnapshot {
    pub fn of(table: &Table, row_limit: usize) -> TableSnapshot {
        let total_rows = table.num_rows();
        let truncated = total_rows > row_limit;
        TableSnapshot {
            caption: table.caption.clone(),
            columns: table
                .columns
                .iter()
                .map(|c| SnapshotColumn {
                    name: c.name.clone(),
                    original: table.provenance.get(&c.name).cloned(),
                    dtype: c.ty.dtype_str().to_string(),
                })
                .collect(),
            rows: table
                .rows
                .iter()
                .take(row_limit)
                .map(|row| row.iter().map(|c| c.render()).collect())
                .collect(),
            total_rows,
            truncated,
        }
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn header(&self, j: usize) -> &str {
        self.columns[j].original.as_deref().unwrap_or(&self.columns[j].name)
    }
}

/// One executed (or failed) step as stored in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub text: String,
    pub sql: String,
    pub status: StepStatus,
    /// Attributed original row indices, sorted.
    pub rows: Vec<usize>,
    /// Attributed input columns, sorted.
    pub columns: Vec<String>,
    /// (original row index, column) pairs tested by the WHERE clause.
    pub condition_cells: Vec<(usize, String)>,
    pub wildcard_columns: bool,
    pub approximate: bool,
    pub collapsed: bool,
    pub final_step: bool,
    pub atomicity: AtomicityEntry,
    pub raw_completion: String,
    pub input: TableSnapshot,
    /// Original row index per input row position.
    pub input_lineage: Vec<usize>,
    pub output: TableSnapshot,
    pub output_lineage: Vec<usize>,
}

/// The answer a run produced for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum FinalAnswer {
    Bool(bool),
    List(Vec<String>),
    Text(String),
    /// No answer: the pipeline failed and the fallback was disabled or also
    /// failed.
    Abstain,
}

impl Serialize for FinalAnswer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FinalAnswer::Bool(b) => s.serialize_str(if *b { "TRUE" } else { "FALSE" }),
            FinalAnswer::List(items) => items.serialize(s),
            FinalAnswer::Text(t) => s.serialize_str(t),
            FinalAnswer::Abstain => s.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for FinalAnswer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<FinalAnswer, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        Ok(match v {
            serde_json::Value::Null => FinalAnswer::Abstain,
            serde_json::Value::String(s) => match s.as_str() {
                "TRUE" => FinalAnswer::Bool(true),
                "FALSE" => FinalAnswer::Bool(false),
                _ => FinalAnswer::Text(s),
            },
            serde_json::Value::Array(items) => FinalAnswer::List(
                items
                    .into_iter()
                    .map(|i| match i {
                        serde_json::Value::String(s) => Ok(s),
                        other => Err(serde::de::Error::custom(format!(
                            "answer list items must be strings, got {other}"
                        ))),
                    })
                    .collect::<Result<_, _>>()?,
            ),
            other => {
                return Err(serde::de::Error::custom(format!("unsupported answer value {other}")))
            }
        })
    }
}

/// Everything one sample's run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub id: String,
    pub task: TaskKind,
    pub question: String,
    pub caption: String,
    pub mode: PlanningMode,
    pub steps: Vec<StepRecord>,
    pub answer: FinalAnswer,
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<TriggerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub input_table: TableSnapshot,
    pub counters: CounterSnapshot,
}

impl ExecutionTrace {
    pub fn abstained(&self) -> bool {
        matches!(self.answer, FinalAnswer::Abstain)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: PlanningMode,
    pub params: CompletionParams,
    pub fallback_enabled: bool,
    /// Plan-length budget; clamped to the hard cap.
    pub max_steps: usize,
    pub workers: usize,
    pub snapshot_row_limit: usize,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            mode: PlanningMode::OneStep,
            params: CompletionParams::default(),
            fallback_enabled: true,
            max_steps: MAX_STEPS,
            workers: 4,
            snapshot_row_limit: SNAPSHOT_ROW_LIMIT,
        }
    }
}

fn trigger_of_plan_error(e: &PlanError) -> TriggerKind {
    match e {
        PlanError::Parse => TriggerKind::PlanParse,
        PlanError::Overrun { .. } => TriggerKind::PlanOverrun,
        PlanError::Gateway(_) => TriggerKind::Generation,
    }
}

fn trigger_of_sql_error(e: &SqlError) -> TriggerKind {
    match e {
        SqlError::Generation(_) | SqlError::Gateway(_) => TriggerKind::Generation,
        SqlError::Execution(_) => TriggerKind::Execution,
    }
}

fn parse_fallback_answer(task: TaskKind, completion: &str) -> Option<FinalAnswer> {
    match task {
        TaskKind::FactVerification => {
            crate::eval::parse_verdict_token(completion).map(FinalAnswer::Bool)
        }
        TaskKind::ShortAnswer => {
            let line = completion
                .lines()
                .rev()
                .find_map(|l| l.split_once("Answer:").map(|(_, rest)| rest.trim()));
            let raw = match line {
                Some(rest) if !rest.is_empty() => rest,
                _ => completion.trim(),
            };
            if raw.is_empty() {
                return None;
            }
            Some(FinalAnswer::List(
                raw.split('|').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect(),
            ))
        }
        TaskKind::FreeForm => {
            let text = completion
                .rsplit_once("Answer:")
                .map(|(_, rest)| rest.trim())
                .filter(|t| !t.is_empty())
                .unwrap_or_else(|| completion.trim());
            (!text.is_empty()).then(|| FinalAnswer::Text(text.to_string()))
        }
    }
}

/// Answers a sample end-to-end with a single LLM call over the full table.
fn run_fallback(
    sample: &Sample,
    gateway: &Gateway,
    params: &CompletionParams,
    counters: &CallCounters,
) -> Result<FinalAnswer, String> {
    let mut bindings = BTreeMap::new();
    bindings.insert("question_label".into(), sample.task.question_label().to_string());
    bindings.insert("task_lines".into(), stepper::fallback_task_lines(sample.task).to_string());
    bindings.insert("question".into(), sample.question.clone());
    bindings.insert("caption".into(), sample.table.caption.clone());
    bindings.insert("table".into(), sample.table.to_markdown());
    let prompt =
        render_prompt(TemplateId::FallbackQa, &bindings).map_err(|e| e.to_string())?;
    let completion = gateway
        .complete(TemplateId::FallbackQa, &prompt, params, counters)
        .map_err(|e| e.to_string())?;
    parse_fallback_answer(sample.task, &completion)
        .ok_or_else(|| "fallback completion held no recognizable answer".to_string())
}

/// Reads the final answer out of the last result table. Fact verification
/// requires a 1x1 TRUE/FALSE table; short answers flatten every cell
/// row-major; free-form answers ask the model to phrase the result table.
fn extract_final_answer(
    final_table: &Table,
    sample: &Sample,
    gateway: &Gateway,
    params: &CompletionParams,
    counters: &CallCounters,
) -> Result<FinalAnswer, String> {
    match sample.task {
        TaskKind::FactVerification => {
            if final_table.num_rows() != 1 || final_table.num_columns() != 1 {
                return Err(format!(
                    "expected a 1x1 verdict table, got {}x{}",
                    final_table.num_rows(),
                    final_table.num_columns()
                ));
            }
            match final_table.rows[0][0].render().trim().to_uppercase().as_str() {
                "TRUE" => Ok(FinalAnswer::Bool(true)),
                "FALSE" => Ok(FinalAnswer::Bool(false)),
                other => Err(format!("final cell {other:?} is not TRUE/FALSE")),
            }
        }
        TaskKind::ShortAnswer => Ok(FinalAnswer::List(
            final_table
                .rows
                .iter()
                .flat_map(|row| row.iter())
                .filter(|c| !c.is_null())
                .map(|c| c.render())
                .collect(),
        )),
        TaskKind::FreeForm => {
            let mut bindings = BTreeMap::new();
            bindings.insert("question".into(), sample.question.clone());
            bindings.insert("caption".into(), sample.table.caption.clone());
            bindings.insert("result_table".into(), final_table.to_markdown());
            let prompt = render_prompt(TemplateId::FreeFormAnswer, &bindings)
                .map_err(|e| e.to_string())?;
            let completion = gateway
                .complete(TemplateId::FreeFormAnswer, &prompt, params, counters)
                .map_err(|e| e.to_string())?;
            let text = completion.trim();
            if text.is_empty() {
                return Err("empty free-form answer".into());
            }
            Ok(FinalAnswer::Text(text.to_string()))
        }
    }
}

struct StepOutcome {
    record: StepRecord,
    result: Option<(Table, Vec<usize>)>,
}

/// Converts one planned step to SQL and executes it with attribution.
/// Failures still produce a step record (with empty attribution) so the
/// trace shows exactly where the pipeline stopped.
fn run_step(
    gateway: &Gateway,
    counters: &CallCounters,
    config: &RunConfig,
    step: &Step,
    current: &Table,
    lineage: &[usize],
    original_rows: usize,
) -> Result<StepOutcome, (TriggerKind, String, StepRecord)> {
    let input_snapshot = TableSnapshot::of(current, config.snapshot_row_limit);
    let empty_output = TableSnapshot {
        caption: current.caption.clone(),
        columns: Vec::new(),
        rows: Vec::new(),
        total_rows: 0,
        truncated: false,
    };
    let failed = |status: StepStatus, raw: String, sql: String| StepRecord {
        text: step.text.clone(),
        sql,
        status,
        rows: Vec::new(),
        columns: Vec::new(),
        condition_cells: Vec::new(),
        wildcard_columns: false,
        approximate: false,
        collapsed: false,
        final_step: false,
        atomicity: AtomicityEntry {
            predicate_count: None,
            distinct_predicate_columns: 0,
            atomic: false,
        },
        raw_completion: raw,
        input: input_snapshot.clone(),
        input_lineage: lineage.to_vec(),
        output: empty_output.clone(),
        output_lineage: Vec::new(),
    };

    let raw = match step_to_sql(gateway, counters, &config.params, current, &step.text, original_rows)
    {
        Ok(raw) => raw,
        Err(e) => {
            let trigger = trigger_of_sql_error(&e);
            return Err((trigger, e.to_string(), failed(StepStatus::GenerationFailed, String::new(), String::new())));
        }
    };
    let sql = match sanitize_sql(&raw) {
        Ok(sql) => sql,
        Err(e) => {
            return Err((
                TriggerKind::Generation,
                e.to_string(),
                failed(StepStatus::GenerationFailed, raw, String::new()),
            ));
        }
    };
    let tracked = add_tracking_column(current, lineage);
    let exec = match crate::attribution::execute_with_attribution(&tracked, &sql, counters) {
        Ok(exec) => exec,
        Err(e) => {
            let trigger = trigger_of_sql_error(&e);
            let status = match trigger {
                TriggerKind::Execution => StepStatus::ExecutionFailed,
                _ => StepStatus::GenerationFailed,
            };
            return Err((trigger, e.to_string(), failed(status, raw, sql)));
        }
    };
    let AttributionMap { rows, columns, condition_cells, wildcard_columns, approximate } =
        exec.attribution;
    let record = StepRecord {
        text: step.text.clone(),
        sql: sql.clone(),
        status: StepStatus::Ok,
        rows: rows.into_iter().collect(),
        columns: columns.into_iter().collect(),
        condition_cells: condition_cells.into_iter().collect(),
        wildcard_columns,
        approximate,
        collapsed: exec.collapsed,
        final_step: is_final_sql(&sql),
        atomicity: planner::check_atomicity(&sql, &current.column_names()),
        raw_completion: raw,
        input: input_snapshot,
        input_lineage: lineage.to_vec(),
        output: TableSnapshot::of(&exec.result, config.snapshot_row_limit),
        output_lineage: exec.output_lineage.clone(),
    };
    Ok(StepOutcome { record, result: Some((exec.result, exec.output_lineage)) })
}

/// Runs the full pipeline on one sample. Never fails: any pipeline error is
/// contained in the returned trace, answered by the fallback when enabled.
pub fn answer_sample(sample: &Sample, gateway: &Gateway, config: &RunConfig) -> ExecutionTrace {
    let counters = CallCounters::new();
    let max_steps = config.max_steps.min(MAX_STEPS);
    let original_rows = sample.table.num_rows();
    let mut steps: Vec<StepRecord> = Vec::new();
    // Rename any data column that collides with the hidden tracking name
    // once up front, so planner, SQL generation, and snapshots agree.
    let mut current = avoid_tracking_collision(&sample.table);
    let mut lineage = identity_lineage(original_rows);
    let mut failure: Option<(TriggerKind, String)> = None;
    let mut planned: Vec<Step> = Vec::new();

    match config.mode {
        PlanningMode::OneTime => {
            match plan_full(
                gateway,
                &counters,
                &config.params,
                &current,
                &sample.question,
                sample.task,
            ) {
                Ok(plan) if plan.steps.len() > max_steps => {
                    failure = Some((
                        TriggerKind::PlanOverrun,
                        format!("plan has {} steps, budget is {max_steps}", plan.steps.len()),
                    ));
                }
                Ok(plan) => planned = plan.steps,
                Err(e) => failure = Some((trigger_of_plan_error(&e), e.to_string())),
            }
            if failure.is_none() {
                for step in &planned {
                    match run_step(gateway, &counters, config, step, &current, &lineage, original_rows)
                    {
                        Ok(outcome) => {
                            if let Some((table, new_lineage)) = outcome.result {
                                current = table;
                                lineage = new_lineage;
                            }
                            steps.push(outcome.record);
                        }
                        Err((trigger, message, record)) => {
                            steps.push(record);
                            failure = Some((trigger, message));
                            break;
                        }
                    }
                }
            }
        }
        PlanningMode::OneStep => loop {
            if steps.last().is_some_and(|s| s.final_step) {
                break;
            }
            if steps.len() >= max_steps {
                failure = Some((
                    TriggerKind::PlanOverrun,
                    format!("planning exceeded the {max_steps}-step budget"),
                ));
                break;
            }
            let prior: Vec<Step> = steps
                .iter()
                .enumerate()
                .map(|(i, s)| Step { index: i + 1, text: s.text.clone() })
                .collect();
            let next = match plan_next_step(
                gateway,
                &counters,
                &config.params,
                &current,
                &sample.question,
                sample.task,
                &prior,
            ) {
                Ok(next) => next,
                Err(e) => {
                    failure = Some((trigger_of_plan_error(&e), e.to_string()));
                    break;
                }
            };
            let step = match next {
                NextStep::Done => break,
                NextStep::Step(step) => step,
            };
            match run_step(gateway, &counters, config, &step, &current, &lineage, original_rows) {
                Ok(outcome) => {
                    if let Some((table, new_lineage)) = outcome.result {
                        current = table;
                        lineage = new_lineage;
                    }
                    steps.push(outcome.record);
                }
                Err((trigger, message, record)) => {
                    steps.push(record);
                    failure = Some((trigger, message));
                    break;
                }
            }
        },
    }

    if failure.is_none() && steps.is_empty() {
        failure = Some((TriggerKind::PlanParse, "the planner produced no steps".into()));
    }

    let mut answer = FinalAnswer::Abstain;
    let mut error: Option<String> = None;
    if failure.is_none() {
        match extract_final_answer(&current, sample, gateway, &config.params, &counters) {
            Ok(a) => answer = a,
            Err(message) => failure = Some((TriggerKind::AnswerExtract, message)),
        }
    }

    let mut fallback = false;
    let mut fallback_reason = None;
    if let Some((trigger, message)) = failure {
        fallback_reason = Some(trigger);
        error = Some(message);
        if config.fallback_enabled {
            fallback = true;
            match run_fallback(sample, gateway, &config.params, &counters) {
                Ok(a) => answer = a,
                Err(fallback_error) => {
                    error = Some(format!(
                        "{}; fallback also failed: {fallback_error}",
                        error.take().unwrap_or_default()
                    ));
                }
            }
        }
    }

    ExecutionTrace {
        id: sample.id.clone(),
        task: sample.task,
        question: sample.question.clone(),
        caption: sample.table.caption.clone(),
        mode: config.mode,
        steps,
        answer,
        fallback,
        fallback_reason,
        error,
        input_table: TableSnapshot::of(&sample.table, config.snapshot_row_limit),
        counters: counters.snapshot(),
    }
}

/// Whether a produced answer matches the reference. Free-form answers are
/// not auto-scored and return None.
pub fn answer_correct(answer: &FinalAnswer, gold: &Gold) -> Option<bool> {
    match (answer, gold) {
        (FinalAnswer::Bool(a), Gold::Bool(g)) => Some(a == g),
        (FinalAnswer::Abstain, Gold::Bool(_)) => Some(false),
        (FinalAnswer::List(a), Gold::List(g)) => Some(denotation_match(a, g)),
        (FinalAnswer::Abstain, Gold::List(_)) => Some(false),
        (_, Gold::Text(_)) => None,
        // Shape mismatches (e.g. a fallback TRUE against a list gold) score
        // as wrong rather than crashing the summary.
        _ => Some(false),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub samples: usize,
    pub scored: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
    pub fallback_count: usize,
    pub fallback_rate: f64,
    pub abstain_count: usize,
    pub mean_llm_calls: f64,
    pub mean_db_queries: f64,
    pub mean_attribution_queries: f64,
    pub llm_call_breakdown: BTreeMap<String, u64>,
    pub atomic_steps: usize,
    pub total_steps: usize,
    pub atomic_step_fraction: Option<f64>,
    pub trigger_counts: BTreeMap<String, u64>,
}

/// Aggregates a finished run.
pub fn summarize(traces: &[ExecutionTrace], samples: &[Sample]) -> RunSummary {
    let gold: BTreeMap<&str, &Gold> =
        samples.iter().map(|s| (s.id.as_str(), &s.gold)).collect();
    let mut scored = 0;
    let mut correct = 0;
    let mut abstain_count = 0;
    let mut fallback_count = 0;
    let mut atomic_steps = 0;
    let mut total_steps = 0;
    let mut trigger_counts: BTreeMap<String, u64> = BTreeMap::new();
    let n = traces.len();
    let mut llm = 0.0;
    let mut db = 0.0;
    let mut attr = 0.0;
    for trace in traces {
        if trace.abstained() {
            abstain_count += 1;
        }
        if trace.fallback {
            fallback_count += 1;
        }
        if let Some(reason) = trace.fallback_reason {
            let key = serde_json::to_value(reason)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            *trigger_counts.entry(key).or_insert(0) += 1;
        }
        if let Some(g) = gold.get(trace.id.as_str()) {
            if let Some(ok) = answer_correct(&trace.answer, g) {
                scored += 1;
                if ok {
                    correct += 1;
                }
            }
        }
        for step in &trace.steps {
            total_steps += 1;
            if step.atomicity.atomic {
                atomic_steps += 1;
            }
        }
        llm += trace.counters.llm_total as f64;
        db += trace.counters.db_queries as f64;
        attr += trace.counters.attribution_queries as f64;
    }
    RunSummary {
        samples: n,
        scored,
        correct,
        accuracy: (scored > 0).then(|| correct as f64 / scored as f64),
        fallback_count,
        fallback_rate: if n > 0 { fallback_count as f64 / n as f64 } else { 0.0 },
        abstain_count,
        mean_llm_calls: if n > 0 { llm / n as f64 } else { 0.0 },
        mean_db_queries: if n > 0 { db / n as f64 } else { 0.0 },
        mean_attribution_queries: if n > 0 { attr / n as f64 } else { 0.0 },
        llm_call_breakdown: call_breakdown(traces.iter().map(|t| &t.counters)),
        atomic_steps,
        total_steps,
        atomic_step_fraction: (total_steps > 0)
            .then(|| atomic_steps as f64 / total_steps as f64),
        trigger_counts,
    }
}

/// Runs every sample over a small worker pool and returns traces sorted by
/// sample id, so output order never depends on scheduling.
pub fn run_dataset(
    samples: &[Sample],
    gateway: &Gateway,
    config: &RunConfig,
) -> (Vec<ExecutionTrace>, RunSummary) {
    let workers = config.workers.max(1).min(samples.len().max(1));
    let cursor = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ExecutionTrace>>> =
        Mutex::new((0..samples.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= samples.len() {
                    break;
                }
                let trace = answer_sample(&samples[i], gateway, config);
                slots.lock().expect("trace slots poisoned")[i] = Some(trace);
            });
        }
    });
    let mut traces: Vec<ExecutionTrace> =
        slots.into_inner().expect("trace slots poisoned").into_iter().flatten().collect();
    traces.sort_by(|a, b| a.id.cmp(&b.id));
    let summary = summarize(&traces, samples);
    (traces, summary)
}

/// Writes traces as one canonical JSON object per line.
pub fn write_traces(traces: &[ExecutionTrace], path: &Path) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for trace in traces {
        let line = serde_json::to_string(trace).map_err(std::io::Error::other)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_traces(path: &Path) -> std::io::Result<Vec<ExecutionTrace>> {
    let reader = BufReader::new(File::open(path)?);
    let mut traces = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trace: ExecutionTrace = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::other(format!("trace line {}: {e}", i + 1)))?;
        traces.push(trace);
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Backend, Gateway, Rule, ScriptedBackend, TemplateId};

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn sample() -> Sample {
        Sample {
            id: "t1".into(),
            task: TaskKind::FactVerification,
            table: Table::from_strings(
                "games",
                &strings(&["game", "opponents"]),
                &[
                    strings(&["1", "14"]),
                    strings(&["2", "0"]),
                    strings(&["3", "0"]),
                ],
            )
            .unwrap(),
            question: "two games were scoreless".into(),
            gold: Gold::Bool(true),
        }
    }

    fn scripted(rules: Vec<Rule>) -> Gateway {
        Gateway::new(Box::new(ScriptedBackend::new(rules)))
    }

    fn two_step_rules() -> Vec<Rule> {
        vec![
            Rule::new(
                TemplateId::PlanNextStep,
                &["two games were scoreless", "(none)"],
                &[],
                "1. Select rows where `opponents' is 0.",
            ),
            Rule::new(
                TemplateId::PlanNextStep,
                &["two games were scoreless", "1. Select rows where `opponents' is 0."],
                &[],
                "2. Use a CASE statement to return TRUE if the number of rows is equal to 2, otherwise return FALSE.",
            ),
            Rule::new(
                TemplateId::StepToSql,
                &["Select rows where `opponents' is 0."],
                &[],
                "SELECT * FROM table_sql WHERE opponents = 0;",
            ),
            Rule::new(
                TemplateId::StepToSql,
                &["CASE statement to return TRUE if the number of rows is equal to 2"],
                &[],
                "SELECT CASE WHEN COUNT(*) = 2 THEN 'TRUE' ELSE 'FALSE' END AS answer FROM table_sql;",
            ),
        ]
    }

    #[test]
    fn one_step_run_answers_and_counts_calls() {
        let gateway = scripted(two_step_rules());
        let config = RunConfig::default();
        let trace = answer_sample(&sample(), &gateway, &config);
        assert_eq!(trace.answer, FinalAnswer::Bool(true));
        assert!(!trace.fallback);
        assert_eq!(trace.steps.len(), 2);
        assert!(trace.steps[1].final_step);
        assert_eq!(trace.counters.llm_total, 4);
        assert_eq!(trace.counters.db_queries, 2);
        assert_eq!(trace.counters.attribution_queries, 1);
        assert_eq!(trace.steps[0].rows, vec![1, 2]);
        assert_eq!(trace.steps[1].input_lineage, vec![1, 2]);
    }

    #[test]
    fn one_time_run_uses_a_single_plan_call() {
        let mut rules = vec![Rule::new(
            TemplateId::PlanFull,
            &["two games were scoreless"],
            &[],
            "Plan:\n1. Select rows where `opponents' is 0.\n2. Use a CASE statement to return TRUE if the number of rows is equal to 2, otherwise return FALSE.",
        )];
        rules.extend(two_step_rules());
        let gateway = scripted(rules);
        let config = RunConfig { mode: PlanningMode::OneTime, ..RunConfig::default() };
        let trace = answer_sample(&sample(), &gateway, &config);
        assert_eq!(trace.answer, FinalAnswer::Bool(true));
        assert_eq!(trace.counters.calls_for(TemplateId::PlanFull), 1);
        assert_eq!(trace.counters.calls_for(TemplateId::StepToSql), 2);
        assert_eq!(trace.counters.llm_total, 3);
    }

    #[test]
    fn generation_failure_falls_back() {
        let mut rules = vec![
            Rule::new(
                TemplateId::PlanNextStep,
                &["two games were scoreless", "(none)"],
                &[],
                "1. Select rows where `opponents' is 0.",
            ),
            Rule::new(
                TemplateId::StepToSql,
                &["Select rows where `opponents' is 0."],
                &[],
                "I am sorry, I cannot write SQL for that.",
            ),
        ];
        rules.push(Rule::new(
            TemplateId::FallbackQa,
            &["two games were scoreless"],
            &[],
            "Verification: FALSE\nBecause I said so.",
        ));
        let gateway = scripted(rules);
        let trace = answer_sample(&sample(), &gateway, &RunConfig::default());
        assert!(trace.fallback);
        assert_eq!(trace.fallback_reason, Some(TriggerKind::Generation));
        assert_eq!(trace.answer, FinalAnswer::Bool(false));
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].status, StepStatus::GenerationFailed);
        assert_eq!(trace.counters.calls_for(TemplateId::FallbackQa), 1);
    }

    #[test]
    fn disabled_fallback_abstains() {
        let rules = vec![Rule::new(
            TemplateId::PlanNextStep,
            &["(none)"],
            &[],
            "1. Select rows where `opponents' is 0.",
        )];
        // step_to_sql has no rule: generation error, then no fallback either.
        let gateway = scripted(rules);
        let config = RunConfig { fallback_enabled: false, ..RunConfig::default() };
        let trace = answer_sample(&sample(), &gateway, &config);
        assert!(!trace.fallback);
        assert!(trace.abstained());
        assert_eq!(trace.fallback_reason, Some(TriggerKind::Generation));
        assert_eq!(answer_correct(&trace.answer, &Gold::Bool(true)), Some(false));
    }

    #[test]
    fn execution_failure_is_distinguished() {
        let rules = vec![
            Rule::new(TemplateId::PlanNextStep, &["(none)"], &[], "1. Do something odd."),
            Rule::new(
                TemplateId::StepToSql,
                &["Do something odd."],
                &[],
                "SELECT missing_column FROM table_sql;",
            ),
            Rule::new(TemplateId::FallbackQa, &[], &[], "TRUE"),
        ];
        let gateway = scripted(rules);
        let trace = answer_sample(&sample(), &gateway, &RunConfig::default());
        assert_eq!(trace.fallback_reason, Some(TriggerKind::Execution));
        assert_eq!(trace.steps[0].status, StepStatus::ExecutionFailed);
    }

    #[test]
    fn overrun_is_raised_before_the_ninth_step_request() {
        // The planner always produces another filter step and never finishes.
        let rules = vec![
            Rule::new(TemplateId::PlanNextStep, &[], &[], "1. Select rows where `opponents' is 0."),
            Rule::new(
                TemplateId::StepToSql,
                &[],
                &[],
                "SELECT * FROM table_sql WHERE opponents = 0;",
            ),
        ];
        let gateway = scripted(rules);
        let config = RunConfig { fallback_enabled: false, ..RunConfig::default() };
        let trace = answer_sample(&sample(), &gateway, &config);
        assert_eq!(trace.fallback_reason, Some(TriggerKind::PlanOverrun));
        assert_eq!(trace.steps.len(), MAX_STEPS);
        // 8 plan calls + 8 SQL calls, and no 9th plan request.
        assert_eq!(trace.counters.llm_total, 16);
    }

    #[test]
    fn traces_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let gateway = scripted(two_step_rules());
        let (traces, summary) = run_dataset(&[sample()], &gateway, &RunConfig::default());
        assert_eq!(summary.samples, 1);
        assert_eq!(summary.accuracy, Some(1.0));
        let path = dir.path().join("traces.jsonl");
        write_traces(&traces, &path).unwrap();
        let reloaded = read_traces(&path).unwrap();
        assert_eq!(reloaded, traces);
        let line = std::fs::read_to_string(&path).unwrap();
        for field in ["\"id\"", "\"mode\"", "\"steps\"", "\"answer\"", "\"fallback\"", "\"counters\"", "\"condition_cells\""] {
            assert!(line.contains(field), "missing {field}");
        }
    }

    #[test]
    fn run_dataset_is_deterministic_across_worker_counts() {
        let mut samples = Vec::new();
        for i in 0..6 {
            let mut s = sample();
            s.id = format!("t{i}");
            samples.push(s);
        }
        let gateway = scripted(two_step_rules());
        let serial = RunConfig { workers: 1, ..RunConfig::default() };
        let parallel = RunConfig { workers: 4, ..RunConfig::default() };
        let (a, _) = run_dataset(&samples, &gateway, &serial);
        let (b, _) = run_dataset(&samples, &gateway, &parallel);
        assert_eq!(a, b);
    }

    #[test]
    fn fallback_answer_parsing_by_task() {
        assert_eq!(
            parse_fallback_answer(TaskKind::FactVerification, "Verification: TRUE\nbecause"),
            Some(FinalAnswer::Bool(true))
        );
        assert_eq!(
            parse_fallback_answer(TaskKind::FactVerification, "it is false, clearly"),
            Some(FinalAnswer::Bool(false))
        );
        assert_eq!(parse_fallback_answer(TaskKind::FactVerification, "maybe"), None);
        assert_eq!(
            parse_fallback_answer(TaskKind::ShortAnswer, "reasoning...\nAnswer: alice | dave"),
            Some(FinalAnswer::List(vec!["alice".into(), "dave".into()]))
        );
        assert_eq!(
            parse_fallback_answer(TaskKind::FreeForm, "Answer: Bob won the race."),
            Some(FinalAnswer::Text("Bob won the race.".into()))
        );
    }

    struct Fails;
    impl Backend for Fails {
        fn complete(
            &self,
            _request: &crate::gateway::Request,
        ) -> Result<String, crate::gateway::GatewayError> {
            Err(crate::gateway::GatewayError::Backend("down".into()))
        }
    }

    #[test]
    fn fallback_failure_is_recorded_and_abstains() {
        let gateway = Gateway::new(Box::new(Fails));
        let trace = answer_sample(&sample(), &gateway, &RunConfig::default());
        assert!(trace.fallback);
        assert!(trace.abstained());
        assert!(trace.error.as_deref().unwrap().contains("fallback also failed"));
    }
}
