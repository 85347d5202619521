//! Renders an execution trace as a step-by-step explanation — HTML and
//! plain text — highlighting each step's attributed rows, columns, and
//! condition cells on its input table. The no-answer variant masks verdict
//! tokens so a reader (human or judge) cannot shortcut past the reasoning.

use crate::pipeline::{ExecutionTrace, FinalAnswer, StepRecord, TableSnapshot};
use crate::stepper::{StepStatus, TRACKING_COLUMN};
use std::collections::BTreeSet;
use thiserror::Error;

/// Background for attributed rows and columns.
pub const HIGHLIGHT_COLOR: &str = "#FFFF00";
/// Background for condition cells (the cells the WHERE clause tested).
pub const CONDITION_COLOR: &str = "#90EE90";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("step {step}: attribution names unknown column {column:?}")]
    UnknownColumn { step: usize, column: String },
    #[error("step {step}: attributed row {row} is not in the step's input")]
    RowOutsideInput { step: usize, row: usize },
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// Replaces each standalone TRUE/FALSE token (any case) with a phrase that
/// states the claim without naming the verdict token.
pub fn mask_verdict_tokens(text: &str) -> String {
    let re = regex::Regex::new(r"(?i)\b(true|false)\b").unwrap();
    re.replace_all(text, |caps: &regex::Captures| {
        if caps[1].eq_ignore_ascii_case("true") {
            "the statement holds"
        } else {
            "the statement does not hold"
        }
    })
    .into_owned()
}

/// The answer as a display string; abstentions have none.
pub fn answer_display(answer: &FinalAnswer) -> Option<String> {
    match answer {
        FinalAnswer::Bool(true) => Some("TRUE".to_string()),
        FinalAnswer::Bool(false) => Some("FALSE".to_string()),
        FinalAnswer::List(items) => Some(items.join(" | ")),
        FinalAnswer::Text(t) => Some(t.clone()),
        FinalAnswer::Abstain => None,
    }
}

struct Highlights<'a> {
    rows: BTreeSet<usize>,
    columns: BTreeSet<&'a str>,
    cells: BTreeSet<(usize, &'a str)>,
}

impl<'a> Highlights<'a> {
    fn none() -> Highlights<'a> {
        Highlights { rows: BTreeSet::new(), columns: BTreeSet::new(), cells: BTreeSet::new() }
    }

    /// Validates a step's attribution against its input snapshot.
    fn of(number: usize, step: &'a StepRecord) -> Result<Highlights<'a>, RenderError> {
        let known: BTreeSet<&str> = step.input.columns.iter().map(|c| c.name.as_str()).collect();
        let check_column = |column: &'a str| -> Result<&'a str, RenderError> {
            if column == TRACKING_COLUMN || !known.contains(column) {
                return Err(RenderError::UnknownColumn {
                    step: number,
                    column: column.to_string(),
                });
            }
            Ok(column)
        };
        let present: BTreeSet<usize> = step.input_lineage.iter().copied().collect();
        let check_row = |row: usize| -> Result<usize, RenderError> {
            if !present.contains(&row) {
                return Err(RenderError::RowOutsideInput { step: number, row });
            }
            Ok(row)
        };
        Ok(Highlights {
            rows: step.rows.iter().map(|&r| check_row(r)).collect::<Result<_, _>>()?,
            columns: step
                .columns
                .iter()
                .map(|c| check_column(c))
                .collect::<Result<_, _>>()?,
            cells: step
                .condition_cells
                .iter()
                .map(|(r, c)| Ok((check_row(*r)?, check_column(c)?)))
                .collect::<Result<_, _>>()?,
        })
    }
}

fn html_table(snapshot: &TableSnapshot, lineage: &[usize], marks: &Highlights) -> String {
    let mut out = String::from("<table>\n<thead>\n<tr>");
    for (j, _) in snapshot.columns.iter().enumerate() {
        let name = &snapshot.columns[j].name;
        if marks.columns.contains(name.as_str()) {
            out.push_str(&format!(
                "<th style=\"background-color:{HIGHLIGHT_COLOR}\">{}</th>",
                escape(snapshot.header(j))
            ));
        } else {
            out.push_str(&format!("<th>{}</th>", escape(snapshot.header(j))));
        }
    }
    out.push_str("</tr>\n</thead>\n<tbody>\n");
    for (p, row) in snapshot.rows.iter().enumerate() {
        let origin = lineage.get(p).copied();
        let row_hit = origin.is_some_and(|o| marks.rows.contains(&o));
        out.push_str("<tr>");
        for (j, cell) in row.iter().enumerate() {
            let name = snapshot.columns[j].name.as_str();
            let style = if origin.is_some_and(|o| marks.cells.contains(&(o, name))) {
                Some(CONDITION_COLOR)
            } else if row_hit || marks.columns.contains(name) {
                Some(HIGHLIGHT_COLOR)
            } else {
                None
            };
            match style {
                Some(color) => out.push_str(&format!(
                    "<td style=\"background-color:{color}\">{}</td>",
                    escape(cell)
                )),
                None => out.push_str(&format!("<td>{}</td>", escape(cell))),
            }
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</tbody>\n</table>\n");
    if snapshot.truncated {
        out.push_str(&format!(
            "<p class=\"note\">showing the first {} of {} rows</p>\n",
            snapshot.rows.len(),
            snapshot.total_rows
        ));
    }
    out
}

fn text_table(snapshot: &TableSnapshot, lineage: &[usize], marks: &Highlights) -> String {
    let mut out = String::from("|");
    for (j, col) in snapshot.columns.iter().enumerate() {
        if marks.columns.contains(col.name.as_str()) {
            out.push_str(&format!(" [yellow] {} |", snapshot.header(j)));
        } else {
            out.push_str(&format!(" {} |", snapshot.header(j)));
        }
    }
    out.push_str("\n|");
    for _ in &snapshot.columns {
        out.push_str(" --- |");
    }
    out.push('\n');
    for (p, row) in snapshot.rows.iter().enumerate() {
        let origin = lineage.get(p).copied();
        let row_hit = origin.is_some_and(|o| marks.rows.contains(&o));
        out.push('|');
        for (j, cell) in row.iter().enumerate() {
            let name = snapshot.columns[j].name.as_str();
            if origin.is_some_and(|o| marks.cells.contains(&(o, name))) {
                out.push_str(&format!(" [green] {cell} |"));
            } else if row_hit || marks.columns.contains(name) {
                out.push_str(&format!(" [yellow] {cell} |"));
            } else {
                out.push_str(&format!(" {cell} |"));
            }
        }
        out.push('\n');
    }
    if snapshot.truncated {
        out.push_str(&format!(
            "(showing the first {} of {} rows)\n",
            snapshot.rows.len(),
            snapshot.total_rows
        ));
    }
    out
}

fn step_notes(step: &StepRecord) -> Vec<String> {
    let mut notes = Vec::new();
    match step.status {
        StepStatus::Ok => {}
        StepStatus::GenerationFailed => {
            notes.push("this step's SQL could not be generated".to_string())
        }
        StepStatus::ExecutionFailed => {
            notes.push("this step's SQL failed to execute".to_string())
        }
    }
    if step.approximate {
        notes.push(
            "row attribution is approximate: every input row is highlighted".to_string(),
        );
    }
    notes
}

/// One step as an HTML section: heading, SQL, and the step's input table
/// with attributed rows/columns in yellow and condition cells in green.
pub fn render_step(number: usize, step: &StepRecord) -> Result<String, RenderError> {
    let marks = Highlights::of(number, step)?;
    let mut out = String::from("<section class=\"step\">\n");
    out.push_str(&format!("<h3>Step {number}: {}</h3>\n", escape(&step.text)));
    if !step.sql.is_empty() {
        out.push_str(&format!("<p class=\"sql\"><code>{}</code></p>\n", escape(&step.sql)));
    }
    for note in step_notes(step) {
        out.push_str(&format!("<p class=\"note\">{}</p>\n", escape(&note)));
    }
    out.push_str(&html_table(&step.input, &step.input_lineage, &marks));
    out.push_str("</section>\n");
    Ok(out)
}

fn fallback_note(trace: &ExecutionTrace) -> &'static str {
    if trace.fallback {
        "The step-by-step pipeline could not finish; the answer was produced \
         directly from the full table."
    } else {
        "The step-by-step pipeline could not finish and no direct answer was \
         produced."
    }
}

fn render_body_html(trace: &ExecutionTrace, include_answer: bool) -> Result<String, RenderError> {
    let mut out = String::from("<article class=\"explanation\">\n");
    out.push_str(&format!("<h2>{}</h2>\n", escape(&trace.caption)));
    out.push_str(&format!(
        "<p class=\"question\"><strong>{}:</strong> {}</p>\n",
        escape(trace.task.question_label()),
        escape(&trace.question)
    ));
    for (i, step) in trace.steps.iter().enumerate() {
        out.push_str(&render_step(i + 1, step)?);
    }
    if trace.steps.is_empty() || trace.fallback || trace.abstained() {
        out.push_str("<section class=\"step\">\n");
        out.push_str(&format!("<p class=\"note\">{}</p>\n", escape(fallback_note(trace))));
        out.push_str(&html_table(
            &trace.input_table,
            &(0..trace.input_table.rows.len()).collect::<Vec<_>>(),
            &Highlights::none(),
        ));
        out.push_str("</section>\n");
    }
    if include_answer {
        if let Some(display) = answer_display(&trace.answer) {
            out.push_str(&format!(
                "<p class=\"prediction\"><strong>Prediction:</strong> {}</p>\n",
                escape(&display)
            ));
        }
    }
    out.push_str("</article>\n");
    Ok(out)
}

/// The explanation as an HTML fragment. With `include_answer` false the
/// prediction banner is omitted and every standalone TRUE/FALSE token in the
/// output is masked.
pub fn render_html(trace: &ExecutionTrace, include_answer: bool) -> Result<String, RenderError> {
    let body = render_body_html(trace, include_answer)?;
    Ok(if include_answer { body } else { mask_verdict_tokens(&body) })
}

/// The explanation as a standalone HTML page.
pub fn render_explanation(trace: &ExecutionTrace) -> Result<String, RenderError> {
    let body = render_body_html(trace, true)?;
    Ok(format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n\
         <title>{}</title>\n<style>\n\
         body {{ font-family: sans-serif; margin: 2em; }}\n\
         table {{ border-collapse: collapse; margin: 1em 0; }}\n\
         th, td {{ border: 1px solid #999; padding: 0.3em 0.6em; }}\n\
         .sql code {{ background: #f4f4f4; padding: 0.2em 0.4em; }}\n\
         .note {{ color: #555; font-style: italic; }}\n\
         </style>\n</head>\n<body>\n{}</body>\n</html>\n",
        escape(&trace.id),
        body
    ))
}

/// The explanation as plain text with `[yellow]` / `[green]` cell markers.
/// With `include_answer` false the prediction line is omitted and every
/// standalone TRUE/FALSE token is masked.
pub fn render_text(trace: &ExecutionTrace, include_answer: bool) -> Result<String, RenderError> {
    let mut out = format!("# {}\n", trace.caption);
    out.push_str(&format!("{}: {}\n", trace.task.question_label(), trace.question));
    for (i, step) in trace.steps.iter().enumerate() {
        let number = i + 1;
        let marks = Highlights::of(number, step)?;
        out.push_str(&format!("\n## Step {number}: {}\n", step.text));
        if !step.sql.is_empty() {
            out.push_str(&format!("SQL: {}\n", step.sql));
        }
        for note in step_notes(step) {
            out.push_str(&format!("({note})\n"));
        }
        out.push_str(&text_table(&step.input, &step.input_lineage, &marks));
    }
    if trace.steps.is_empty() || trace.fallback || trace.abstained() {
        out.push_str(&format!("\n({})\n", fallback_note(trace)));
        out.push_str(&text_table(
            &trace.input_table,
            &(0..trace.input_table.rows.len()).collect::<Vec<_>>(),
            &Highlights::none(),
        ));
    }
    if include_answer {
        if let Some(display) = answer_display(&trace.answer) {
            out.push_str(&format!("\nPrediction: {display}\n"));
        }
    }
    Ok(if include_answer { out } else { mask_verdict_tokens(&out) })
}
