//! Planning: turning a question over a table into numbered atomic steps,
//! either as one full plan up front or one step at a time.

use crate::dataset::TaskKind;
use crate::gateway::{
    render_prompt, CallCounters, CompletionParams, Gateway, GatewayError, TemplateId,
};
use crate::gateway::templates::{PLAN_EXAMPLE_QUESTION, PLAN_EXAMPLE_STATEMENT};
use crate::sqlscan;
use crate::table::Table;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no plan steps found in the completion")]
    Parse,
    #[error("planning exceeded the {max}-step budget")]
    Overrun { max: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanningMode {
    /// One completion produces the whole plan before execution starts.
    OneTime,
    /// Each step is planned after seeing the previous step's output table.
    OneStep,
}

impl PlanningMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanningMode::OneTime => "one_time",
            PlanningMode::OneStep => "one_step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based position in the plan.
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub steps: Vec<Step>,
    pub mode: PlanningMode,
}

/// Hard ceiling on plan length; requesting a step beyond it is an overrun.
pub const MAX_STEPS: usize = 8;

/// What the planner produced when asked for one more step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextStep {
    Step(Step),
    Done,
}

/// The literal token a one-step planner answers with when the plan is
/// complete.
pub const DONE_TOKEN: &str = "DONE";

fn numbered_line(line: &str) -> Option<String> {
    let trimmed = line.trim_start();
    let digits: String = trimmed.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    let rest = &trimmed[digits.len()..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    Some(rest.trim().to_string())
}

/// Parses a full-plan completion: numbered lines (`1.` or `1)`), scanned
/// after the first line containing a "Plan" marker when one is present,
/// renumbered 1..n. Stray prose lines are ignored.
pub fn parse_plan(completion: &str) -> Result<Plan, PlanError> {
    let lines: Vec<&str> = completion.lines().collect();
    let start = lines
        .iter()
        .position(|l| l.to_lowercase().contains("plan") && numbered_line(l).is_none())
        .map(|i| i + 1)
        .unwrap_or(0);
    let mut steps = Vec::new();
    for line in &lines[start.min(lines.len())..] {
        if let Some(text) = numbered_line(line) {
            if !text.is_empty() {
                steps.push(Step { index: steps.len() + 1, text });
            }
        }
    }
    if steps.is_empty() {
        // A marker line may sit below the steps, or be absent entirely; fall
        // back to scanning the whole completion.
        for line in &lines {
            if let Some(text) = numbered_line(line) {
                if !text.is_empty() {
                    steps.push(Step { index: steps.len() + 1, text });
                }
            }
        }
    }
    if steps.is_empty() {
        return Err(PlanError::Parse);
    }
    Ok(Plan { steps, mode: PlanningMode::OneTime })
}

fn objective_line(task: TaskKind) -> &'static str {
    match task {
        TaskKind::FactVerification => {
            "Let's develop a step-by-step plan to verify if the given Statement is TRUE or FALSE on the given Table!"
        }
        TaskKind::ShortAnswer | TaskKind::FreeForm => {
            "Let's develop a step-by-step plan to answer the given Question on the given Table!"
        }
    }
}

fn plan_example(task: TaskKind) -> &'static str {
    match task {
        TaskKind::FactVerification => PLAN_EXAMPLE_STATEMENT,
        TaskKind::ShortAnswer | TaskKind::FreeForm => PLAN_EXAMPLE_QUESTION,
    }
}

fn base_bindings(table: &Table, question: &str, task: TaskKind) -> BTreeMap<String, String> {
    let mut b = BTreeMap::new();
    b.insert("in_context_examples".into(), plan_example(task).to_string());
    b.insert("caption".into(), table.caption.clone());
    b.insert("table".into(), table.to_markdown());
    b.insert("num_rows".into(), table.num_rows().to_string());
    b.insert("question_label".into(), task.question_label().to_string());
    b.insert("question".into(), question.to_string());
    b.insert("objective_line".into(), objective_line(task).to_string());
    b
}

/// Asks for a complete plan in a single completion.
pub fn plan_full(
    gateway: &Gateway,
    counters: &CallCounters,
    params: &CompletionParams,
    table: &Table,
    question: &str,
    task: TaskKind,
) -> Result<Plan, PlanError> {
    let prompt = render_prompt(TemplateId::PlanFull, &base_bindings(table, question, task))
        .map_err(PlanError::Gateway)?;
    let completion = gateway.complete(TemplateId::PlanFull, &prompt, params, counters)?;
    parse_plan(&completion)
}

/// Asks for the next step given the intermediate table and the steps taken so
/// far. Enforces the step budget before spending a completion, and returns
/// `Done` on the planner's DONE token.
pub fn plan_next_step(
    gateway: &Gateway,
    counters: &CallCounters,
    params: &CompletionParams,
    intermediate: &Table,
    question: &str,
    task: TaskKind,
    prior: &[Step],
) -> Result<NextStep, PlanError> {
    if prior.len() >= MAX_STEPS {
        return Err(PlanError::Overrun { max: MAX_STEPS });
    }
    let mut bindings = base_bindings(intermediate, question, task);
    let prior_block = if prior.is_empty() {
        "(none)".to_string()
    } else {
        prior
            .iter()
            .map(|s| format!("{}. {}", s.index, s.text))
            .collect::<Vec<_>>()
            .join("\n")
    };
    bindings.insert("prior_steps".into(), prior_block);
    let prompt =
        render_prompt(TemplateId::PlanNextStep, &bindings).map_err(PlanError::Gateway)?;
    let completion = gateway.complete(TemplateId::PlanNextStep, &prompt, params, counters)?;
    let trimmed = completion.trim();
    if trimmed == DONE_TOKEN || trimmed.starts_with(&format!("{DONE_TOKEN}\n")) {
        return Ok(NextStep::Done);
    }
    let text = trimmed
        .lines()
        .filter_map(|l| {
            let t = numbered_line(l).unwrap_or_else(|| l.trim().to_string());
            (!t.is_empty()).then_some(t)
        })
        .next()
        .ok_or(PlanError::Parse)?;
    Ok(NextStep::Step(Step { index: prior.len() + 1, text }))
}

/// True when the SQL already computes the final answer rather than another
/// intermediate table: its select list is a single CASE expression, or a
/// single aggregate call aliased exactly `answer`.
pub fn is_final_sql(sql: &str) -> bool {
    let toks = sqlscan::tokenize(sql);
    let Some(shape) = sqlscan::parse_select(&toks) else {
        return false;
    };
    if shape.items.len() != 1 {
        return false;
    }
    let (start, end) = shape.items[0];
    if start >= end || end > toks.len() {
        return false;
    }
    if toks[start].is_word("case") {
        return true;
    }
    sqlscan::contains_aggregate(&toks, (start, end))
        && end - start >= 2
        && toks[end - 2].is_word("as")
        && toks[end - 1].is_word("answer")
}

/// Per-step atomicity bookkeeping: how many predicates the step's WHERE
/// clause carries and over how many distinct columns. A step is atomic when
/// it filters on at most one predicate over at most one column (an OR-chain
/// over a single column counts as one predicate).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicityEntry {
    pub predicate_count: Option<usize>,
    pub distinct_predicate_columns: usize,
    pub atomic: bool,
}

fn split_top_level(
    toks: &[sqlscan::Token],
    range: sqlscan::Range,
    word: &str,
) -> Vec<sqlscan::Range> {
    let (start, end) = range;
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut part_start = start;
    for i in start..end.min(toks.len()) {
        let t = &toks[i];
        match t.text.as_str() {
            "(" if t.kind == sqlscan::TokKind::Symbol => depth += 1,
            ")" if t.kind == sqlscan::TokKind::Symbol => depth = depth.saturating_sub(1),
            _ => {
                if depth == 0 && t.is_word(word) {
                    parts.push((part_start, i));
                    part_start = i + 1;
                }
            }
        }
    }
    parts.push((part_start, end.min(toks.len())));
    parts
}

/// Inspects a step's SQL and reports its predicate structure. Advisory only:
/// a non-atomic step is recorded, never rejected.
pub fn check_atomicity(sql: &str, known_columns: &[String]) -> AtomicityEntry {
    let known: BTreeSet<String> = known_columns.iter().map(|c| c.to_lowercase()).collect();
    let toks = sqlscan::tokenize(sql);
    let Some(shape) = sqlscan::parse_select(&toks) else {
        return AtomicityEntry { predicate_count: None, distinct_predicate_columns: 0, atomic: false };
    };
    let Some(where_range) = shape.where_ else {
        return AtomicityEntry { predicate_count: Some(0), distinct_predicate_columns: 0, atomic: true };
    };
    let mut predicates = 0usize;
    let mut all_columns = BTreeSet::new();
    for conjunct in split_top_level(&toks, where_range, "and") {
        let atoms = split_top_level(&toks, conjunct, "or");
        let mut conjunct_columns = BTreeSet::new();
        sqlscan::collect_known_idents(&toks, conjunct, &known, &mut conjunct_columns);
        if atoms.len() > 1 && conjunct_columns.len() > 1 {
            // A disjunction across different columns is several predicates.
            predicates += atoms.len();
        } else {
            predicates += 1;
        }
        all_columns.extend(conjunct_columns);
    }
    AtomicityEntry {
        predicate_count: Some(predicates),
        distinct_predicate_columns: all_columns.len(),
        atomic: predicates <= 1 && all_columns.len() <= 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_marked_plan_and_renumbers_gaps() {
        let plan = parse_plan(
            "Sure! Plan:\n1. Select rows where `a' is 1.\n3) Select the `b' column.\nnote\n",
        )
        .unwrap();
        assert_eq!(plan.mode, PlanningMode::OneTime);
        let texts: Vec<&str> = plan.steps.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, vec!["Select rows where `a' is 1.", "Select the `b' column."]);
        assert_eq!(plan.steps[1].index, 2);
    }

    #[test]
    fn parses_without_a_marker() {
        let plan = parse_plan("1. Only step.").unwrap();
        assert_eq!(plan.steps.len(), 1);
    }

    #[test]
    fn empty_completion_is_a_parse_error() {
        assert!(matches!(parse_plan("no steps here"), Err(PlanError::Parse)));
    }

    #[test]
    fn marker_containing_line_is_not_a_step() {
        let plan = parse_plan("Plan:\n1. a\n2. b").unwrap();
        assert_eq!(plan.steps.len(), 2);
    }

    #[test]
    fn final_sql_detection() {
        assert!(is_final_sql(
            "SELECT CASE WHEN COUNT(*) = 4 THEN 'TRUE' ELSE 'FALSE' END AS answer FROM table_sql;"
        ));
        assert!(is_final_sql("SELECT COUNT(*) AS answer FROM table_sql;"));
        assert!(!is_final_sql("SELECT COUNT(*) AS cnt FROM table_sql;"));
        assert!(!is_final_sql("SELECT * FROM table_sql WHERE a = 1;"));
        assert!(!is_final_sql("SELECT a, COUNT(*) AS c FROM table_sql GROUP BY a;"));
        assert!(!is_final_sql("not sql at all"));
    }

    #[test]
    fn atomicity_single_predicate() {
        let cols = vec!["name".to_string(), "hometown".to_string()];
        let e = check_atomicity("SELECT * FROM table_sql WHERE hometown = 'chicago';", &cols);
        assert_eq!(e.predicate_count, Some(1));
        assert_eq!(e.distinct_predicate_columns, 1);
        assert!(e.atomic);
    }

    #[test]
    fn atomicity_or_chain_over_one_column_is_one_predicate() {
        let cols = vec!["name".to_string()];
        let e = check_atomicity(
            "SELECT * FROM table_sql WHERE name = 'bob' OR name = 'charlie';",
            &cols,
        );
        assert_eq!(e.predicate_count, Some(1));
        assert!(e.atomic);
    }

    #[test]
    fn atomicity_conjunction_across_columns_is_not_atomic() {
        let cols = vec!["a".to_string(), "b".to_string()];
        let e = check_atomicity("SELECT * FROM table_sql WHERE a = 1 AND b = 2;", &cols);
        assert_eq!(e.predicate_count, Some(2));
        assert_eq!(e.distinct_predicate_columns, 2);
        assert!(!e.atomic);
    }

    #[test]
    fn atomicity_disjunction_across_columns_counts_each_atom() {
        let cols = vec!["a".to_string(), "b".to_string()];
        let e = check_atomicity("SELECT * FROM table_sql WHERE a = 1 OR b = 2;", &cols);
        assert_eq!(e.predicate_count, Some(2));
        assert!(!e.atomic);
    }

    #[test]
    fn atomicity_no_where_is_atomic() {
        let e = check_atomicity("SELECT * FROM table_sql;", &["a".to_string()]);
        assert_eq!(e.predicate_count, Some(0));
        assert!(e.atomic);
    }

    #[test]
    fn atomicity_unparseable_sql_is_unknown() {
        let e = check_atomicity("DELETE FROM table_sql", &[]);
        assert_eq!(e.predicate_count, None);
        assert!(!e.atomic);
    }
}
