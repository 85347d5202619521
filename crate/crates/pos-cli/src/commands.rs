//! Implementations of the CLI commands. Every command resolves its
//! settings, does its work, writes artifacts only under its `--out`
//! directory, and prints a JSON report to stdout.

use crate::config::{BackendKind, CliError, Settings};
use pos_core::dataset::{load_samples, Gold, Sample};
use pos_core::eval::{
    agreement_by_id, filter_comparable, flatten_paired, load_correctness_csv, load_decisions,
    load_matrix_csv, pearson, run_ranking, run_simulation, run_verification, JudgeItem,
    RankingSample,
};
use pos_core::explain::{render_explanation, render_text};
use pos_core::gateway::{
    Cassette, CallCounters, CassetteWriter, Gateway, HttpBackend, RecordBackend, ReplayBackend,
    ScriptedBackend,
};
use pos_core::goldens::golden_rules;
use pos_core::pipeline::{read_traces, run_dataset, summarize, write_traces, ExecutionTrace, FinalAnswer};
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

fn print_report(report: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(report).expect("report serializes"));
}

/// Builds the configured backend. With `record_to`, completions are written
/// through to a timestamped cassette at that path.
fn build_gateway(settings: &Settings, record_to: Option<&Path>) -> Result<Gateway, CliError> {
    let inner: Box<dyn pos_core::gateway::Backend> = match settings.backend {
        BackendKind::Replay => {
            let path = settings.cassette.as_deref().ok_or_else(|| {
                CliError::config("the replay backend needs --cassette")
            })?;
            let cassette = Cassette::load(path).map_err(|e| {
                CliError::config(format!("cassette miss: {}: {e}", path.display()))
            })?;
            Box::new(ReplayBackend::new(cassette))
        }
        BackendKind::Http => {
            let key = settings.api_key.as_deref().ok_or_else(|| {
                CliError::config("the http backend needs an api key (--api-key or POS_API_KEY)")
            })?;
            Box::new(HttpBackend::new(&settings.api_base, key)?)
        }
        BackendKind::Scripted => Box::new(ScriptedBackend::new(golden_rules())),
    };
    let backend: Box<dyn pos_core::gateway::Backend> = match record_to {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            Box::new(RecordBackend::new(inner, CassetteWriter::create(path, true)?))
        }
        None => inner,
    };
    Ok(Gateway::new(backend))
}

fn load_limited(dataset: &Path, limit: Option<usize>) -> Result<Vec<Sample>, CliError> {
    let mut samples = load_samples(dataset)?;
    if let Some(n) = limit {
        samples.truncate(n);
    }
    Ok(samples)
}

/// Runs the pipeline over a dataset and writes traces, HTML explanations,
/// and the run summary under `out`.
fn run_into(
    samples: &[Sample],
    gateway: &Gateway,
    settings: &Settings,
    out: &Path,
) -> Result<serde_json::Value, CliError> {
    let (traces, summary) = run_dataset(samples, gateway, &settings.run);
    std::fs::create_dir_all(out)?;
    write_traces(&traces, &out.join("traces.jsonl"))?;
    let summary_json = serde_json::to_value(&summary).expect("summary serializes");
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary_json).expect("summary serializes") + "\n",
    )?;
    let html_dir = out.join("explanations");
    std::fs::create_dir_all(&html_dir)?;
    for trace in &traces {
        let page = render_explanation(trace)?;
        std::fs::write(html_dir.join(format!("{}.html", trace.id)), page)?;
    }
    Ok(summary_json)
}

pub fn run(
    dataset: &Path,
    out: &Path,
    limit: Option<usize>,
    settings: &Settings,
) -> Result<(), CliError> {
    let samples = load_limited(dataset, limit)?;
    let gateway = build_gateway(settings, None)?;
    let summary = run_into(&samples, &gateway, settings, out)?;
    print_report(&summary);
    Ok(())
}

/// Like `run`, but records every completion the backend serves into a
/// cassette for later replay.
pub fn record(
    dataset: &Path,
    out: &Path,
    cassette: Option<&Path>,
    limit: Option<usize>,
    settings: &Settings,
) -> Result<(), CliError> {
    let samples = load_limited(dataset, limit)?;
    std::fs::create_dir_all(out)?;
    let default_path = out.join("cassette.jsonl");
    let cassette_path = cassette.unwrap_or(&default_path);
    let gateway = build_gateway(settings, Some(cassette_path))?;
    let summary = run_into(&samples, &gateway, settings, out)?;
    print_report(&json!({
        "cassette": cassette_path.display().to_string(),
        "summary": summary,
    }));
    Ok(())
}

/// Renders explanations from an existing trace file, as full HTML pages or
/// plain text, optionally with the final verdict masked.
pub fn explain(
    traces_path: &Path,
    out: &Path,
    id: Option<&str>,
    format: &str,
    masked: bool,
) -> Result<(), CliError> {
    let traces = read_traces(traces_path)?;
    let selected: Vec<&ExecutionTrace> = match id {
        Some(id) => {
            let found = traces.iter().find(|t| t.id == id);
            match found {
                Some(t) => vec![t],
                None => {
                    return Err(CliError::config(format!(
                        "no trace with id {id:?} in {}",
                        traces_path.display()
                    )))
                }
            }
        }
        None => traces.iter().collect(),
    };
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for trace in selected {
        let (body, ext) = match format {
            "html" => {
                if masked {
                    (pos_core::explain::render_html(trace, false)?, "html")
                } else {
                    (render_explanation(trace)?, "html")
                }
            }
            "text" => (render_text(trace, !masked)?, "txt"),
            other => {
                return Err(CliError::config(format!(
                    "unknown format {other:?} (expected html or text)"
                )))
            }
        };
        let name = format!("{}.{ext}", trace.id);
        std::fs::write(out.join(&name), body)?;
        written.push(name);
    }
    print_report(&json!({ "written": written }));
    Ok(())
}

/// Scores an existing trace file against a dataset's reference answers.
pub fn evaluate(
    traces_path: &Path,
    dataset: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let traces = read_traces(traces_path)?;
    let samples = load_samples(dataset)?;
    let summary = summarize(&traces, &samples);
    let report = serde_json::to_value(&summary).expect("summary serializes");
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(
            out.join("evaluation.json"),
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        )?;
    }
    print_report(&report);
    Ok(())
}

fn judge_items(
    traces_path: &Path,
    dataset: Option<&Path>,
) -> Result<Vec<JudgeItem>, CliError> {
    let traces = read_traces(traces_path)?;
    let golds: Option<BTreeMap<String, Gold>> = match dataset {
        Some(path) => Some(
            load_samples(path)?.into_iter().map(|s| (s.id.clone(), s.gold)).collect(),
        ),
        None => None,
    };
    let mut items = Vec::new();
    for trace in &traces {
        let gold = match (&golds, &trace.answer) {
            // Without reference answers the prediction stands in; simulation
            // never reads the gold side.
            (None, FinalAnswer::Bool(p)) => Gold::Bool(*p),
            (Some(golds), _) => match golds.get(&trace.id) {
                Some(g) => g.clone(),
                None => continue,
            },
            _ => continue,
        };
        if let Some(item) = JudgeItem::from_trace(trace, &gold)? {
            items.push(item);
        }
    }
    Ok(items)
}

pub fn judge_simulation(
    traces_path: &Path,
    dataset: Option<&Path>,
    out: Option<&Path>,
    settings: &Settings,
) -> Result<(), CliError> {
    let items = judge_items(traces_path, dataset)?;
    let gateway = build_gateway(settings, None)?;
    let counters = CallCounters::new();
    let report = run_simulation(&items, &gateway, &settings.run.params, &counters)?;
    finish_judge_report(json!({ "task": "simulation", "report": report }), out)
}

pub fn judge_verification(
    traces_path: &Path,
    dataset: &Path,
    method_name: &str,
    out: Option<&Path>,
    settings: &Settings,
) -> Result<(), CliError> {
    let items = judge_items(traces_path, Some(dataset))?;
    let gateway = build_gateway(settings, None)?;
    let counters = CallCounters::new();
    let report =
        run_verification(&items, method_name, &gateway, &settings.run.params, &counters)?;
    finish_judge_report(json!({ "task": "verification", "report": report }), out)
}

/// Parses one `--method name=dir` argument.
pub fn parse_method_arg(arg: &str) -> Result<(String, PathBuf), CliError> {
    match arg.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => {
            Ok((name.to_string(), PathBuf::from(dir)))
        }
        _ => Err(CliError::config(format!(
            "--method takes name=dir, got {arg:?}"
        ))),
    }
}

fn explanation_ids(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    let mut ids = BTreeSet::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(format!("method directory {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.insert(stem.to_string());
            }
        }
    }
    Ok(ids)
}

pub fn judge_ranking(
    methods: &[(String, PathBuf)],
    correctness: Option<&Path>,
    out: Option<&Path>,
    settings: &Settings,
) -> Result<(), CliError> {
    if methods.len() < 2 {
        return Err(CliError::config("ranking needs at least two --method name=dir inputs"));
    }
    let id_sets: Vec<BTreeSet<String>> = methods
        .iter()
        .map(|(_, dir)| explanation_ids(dir))
        .collect::<Result<_, _>>()?;
    let union: BTreeSet<&String> = id_sets.iter().flatten().collect();
    let mut offenders = Vec::new();
    for ((name, _), ids) in methods.iter().zip(&id_sets) {
        let missing: Vec<&str> =
            union.iter().filter(|id| !ids.contains(**id)).map(|id| id.as_str()).collect();
        if !missing.is_empty() {
            offenders.push(format!("{name} is missing {}", missing.join(", ")));
        }
    }
    if !offenders.is_empty() {
        return Err(CliError::config(format!(
            "validation error: sample ids differ across methods: {}",
            offenders.join("; ")
        )));
    }
    let mut kept: Vec<String> = union.into_iter().cloned().collect();
    if let Some(path) = correctness {
        let (_, matrix) = load_correctness_csv(path)?;
        let comparable: BTreeSet<String> = filter_comparable(&matrix).into_iter().collect();
        kept.retain(|id| comparable.contains(id));
    }
    let mut samples = Vec::new();
    for id in &kept {
        let mut explanations = Vec::new();
        for (name, dir) in methods {
            let text = std::fs::read_to_string(dir.join(format!("{id}.txt")))?;
            explanations.push((name.clone(), text));
        }
        samples.push(RankingSample { id: id.clone(), explanations });
    }
    let gateway = build_gateway(settings, None)?;
    let counters = CallCounters::new();
    let report = run_ranking(&samples, &gateway, &settings.run.params, &counters)?;
    finish_judge_report(json!({ "task": "ranking", "report": report }), out)
}

/// Correlates inverted preference ranks against judge accuracies across two
/// CSV matrices with matching shapes.
pub fn judge_correlation(
    rank_table: &Path,
    acc_table: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (rank_rows, rank_cols, ranks) = load_matrix_csv(rank_table)?;
    let (acc_rows, acc_cols, accs) = load_matrix_csv(acc_table)?;
    if rank_rows != acc_rows || rank_cols != acc_cols {
        return Err(CliError::config(format!(
            "rank table ({} x {}) and accuracy table ({} x {}) must share labels",
            rank_rows.len(),
            rank_cols.len(),
            acc_rows.len(),
            acc_cols.len()
        )));
    }
    let (xs, ys) = flatten_paired(&ranks, &accs, rank_cols.len())?;
    let (r, p) = pearson(&xs, &ys)?;
    let report = json!({
        "task": "correlation",
        "report": { "r": r, "p": p, "n": xs.len() },
    });
    finish_judge_report(report, out)
}

/// Agreement between the model's verdicts in a trace file and a human
/// decision file, joined by sample id.
pub fn judge_agreement(
    traces_path: &Path,
    human: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let traces = read_traces(traces_path)?;
    let model: BTreeMap<String, bool> = traces
        .iter()
        .filter_map(|t| match t.answer {
            FinalAnswer::Bool(b) => Some((t.id.clone(), b)),
            _ => None,
        })
        .collect();
    let decisions = load_decisions(human)?;
    let report = agreement_by_id(&model, &decisions)?;
    finish_judge_report(json!({ "task": "agreement", "report": report }), out)
}

fn finish_judge_report(
    report: serde_json::Value,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(
            out.join("judge_report.json"),
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
        )?;
    }
    print_report(&report);
    Ok(())
}

fn read_tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, CliError> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("walked path stays under root")
                    .to_string_lossy()
                    .into_owned();
                files.insert(rel, std::fs::read(&path)?);
            }
        }
    }
    Ok(files)
}

/// Runs the same replay twice into sibling directories and verifies the
/// outputs are byte-identical.
pub fn replay_check(
    dataset: &Path,
    out: &Path,
    limit: Option<usize>,
    settings: &Settings,
) -> Result<(), CliError> {
    if settings.backend != BackendKind::Replay && settings.backend != BackendKind::Scripted {
        return Err(CliError::config(
            "replay-check needs a deterministic backend (replay or scripted)",
        ));
    }
    let samples = load_limited(dataset, limit)?;
    let dirs = [out.join("check-a"), out.join("check-b")];
    for dir in &dirs {
        let gateway = build_gateway(settings, None)?;
        run_into(&samples, &gateway, settings, dir)?;
    }
    let a = read_tree(&dirs[0])?;
    let b = read_tree(&dirs[1])?;
    let mut differing: Vec<&String> = Vec::new();
    for (name, bytes) in &a {
        if b.get(name).map(|other| other != bytes).unwrap_or(true) {
            differing.push(name);
        }
    }
    for name in b.keys() {
        if !a.contains_key(name) {
            differing.push(name);
        }
    }
    if !differing.is_empty() {
        return Err(CliError::config(format!(
            "replay outputs differ between runs: {}",
            differing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    print_report(&json!({
        "task": "replay-check",
        "identical": true,
        "files_compared": a.len(),
        "traces": samples.len(),
    }));
    Ok(())
}
