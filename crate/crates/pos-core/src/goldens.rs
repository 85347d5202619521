//! Deterministic fixture set: a 25-sample verification suite with scripted
//! model behavior, k-step efficiency drills, reference judge-study data,
//! and a writer that materializes everything (sample file, replay cassette,
//! correlation matrices) on disk.

use crate::dataset::{write_samples, Gold, Sample, TaskKind};
use crate::gateway::{
    Gateway, RecordBackend, Rule, ScriptedBackend, TemplateId,
};
use crate::pipeline::{run_dataset, RunConfig};
use crate::planner::PlanningMode;
use crate::table::Table;
use std::path::Path;

/// File names used under a fixture directory.
pub const SAMPLES_FILE: &str = "golden25.jsonl";
pub const CASSETTE_FILE: &str = "cassette.jsonl";
pub const RANKS_FILE: &str = "preference_ranks.csv";
pub const SIMULATION_FILE: &str = "simulation_accuracy.csv";
pub const VERIFICATION_FILE: &str = "verification_accuracy.csv";

/// Judge-study reference data: three judges ranking four explanation
/// methods (1 = best), with the matching simulation and verification
/// accuracies. Row order follows `JUDGE_LABELS`, column order
/// `METHOD_LABELS`.
pub const JUDGE_LABELS: [&str; 3] = ["gpt-4", "gpt-4o-mini", "gpt-4o"];
pub const METHOD_LABELS: [&str; 4] = ["text_to_sql", "dater", "cotable", "pos"];
pub const PREFERENCE_RANKS: [[f64; 4]; 3] = [
    [3.33, 3.36, 1.98, 1.33],
    [3.95, 2.75, 1.75, 1.55],
    [3.60, 3.35, 2.04, 1.01],
];
pub const SIMULATION_ACCURACY: [[f64; 4]; 3] = [
    [75.15, 80.04, 79.99, 84.89],
    [65.67, 73.57, 76.53, 81.61],
    [73.73, 78.21, 79.55, 85.25],
];
pub const VERIFICATION_ACCURACY: [[f64; 4]; 3] = [
    [49.93, 57.56, 60.38, 72.08],
    [55.37, 55.43, 61.36, 76.74],
    [55.97, 70.95, 67.34, 72.85],
];

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// A 1947 college-football season table whose statement takes a two-step
/// filter-then-count plan with a known attribution footprint.
pub fn wildcats_sample() -> Sample {
    let columns = strings(&[
        "game",
        "date",
        "opponent",
        "result",
        "wildcats_points",
        "opponents",
        "record",
    ]);
    let rows = [
        ["1", "9999-09-20", "ole miss", "loss", "7", "14", "0 - 1"],
        ["2", "9999-09-27", "cincinnati", "win", "20", "0", "1 - 1"],
        ["3", "9999-10-04", "xavier", "win", "20", "7", "2 - 1"],
        ["4", "9999-10-11", "9 georgia", "win", "26", "0", "3 - 1, 20"],
        ["5", "9999-10-18", "10 vanderbilt", "win", "14", "0", "4 - 1, 14"],
        ["6", "9999-10-25", "michigan state", "win", "7", "6", "5 - 1, 13"],
        ["7", "9999-11-01", "18 alabama", "loss", "0", "13", "5 - 2"],
        ["8", "9999-11-08", "west virginia", "win", "15", "6", "6 - 2"],
        ["9", "9999-11-15", "evansville", "win", "36", "0", "7 - 2"],
        ["10", "9999-11-22", "tennessee", "loss", "6", "13", "7 - 3"],
    ];
    let rows: Vec<Vec<String>> = rows.iter().map(|r| strings(r)).collect();
    Sample {
        id: "wildcats".into(),
        task: TaskKind::FactVerification,
        table: Table::from_strings("1947 kentucky wildcats football team", &columns, &rows)
            .expect("wildcats table is well formed"),
        question: "the wildcats kept the opposing team scoreless in four games".into(),
        gold: Gold::Bool(true),
    }
}

const WILDCATS_STEP_1: &str = "Select rows where `opponents' is 0.";
const WILDCATS_STEP_2: &str =
    "Use a CASE statement to return TRUE if the number of rows is equal to 4, otherwise return FALSE.";

/// Scripted model behavior for the wildcats sample.
pub fn wildcats_rules() -> Vec<Rule> {
    let statement = "the wildcats kept the opposing team scoreless in four games";
    vec![
        Rule::new(
            TemplateId::PlanNextStep,
            &[statement, "(none)"],
            &[],
            &format!("1. {WILDCATS_STEP_1}"),
        ),
        Rule::new(
            TemplateId::PlanNextStep,
            &[statement, WILDCATS_STEP_1],
            &[],
            &format!("2. {WILDCATS_STEP_2}"),
        ),
        Rule::new(
            TemplateId::StepToSql,
            &[WILDCATS_STEP_1],
            &[],
            "SELECT * FROM table_sql WHERE opponents = 0;",
        ),
        Rule::new(
            TemplateId::StepToSql,
            &[WILDCATS_STEP_2],
            &[],
            "SELECT CASE WHEN COUNT(*) = 4 THEN 'TRUE' ELSE 'FALSE' END AS answer FROM table_sql;",
        ),
    ]
}

const FIRST_NAMES: [&str; 12] = [
    "amy", "ben", "cara", "dan", "elle", "finn", "gus", "hana", "ivan", "jade", "kai", "lena",
];
const TEAMS: [&str; 6] = ["falcons", "tigers", "comets", "rovers", "pirates", "eagles"];
const REGIONS: [&str; 6] = ["northern", "coastal", "summer", "winter", "regional", "junior"];

struct SyntheticSpec {
    sample: Sample,
    statement: String,
    step1: String,
    step2: String,
    sql1: String,
    sql2: String,
}

/// Sample i (1..=24): a five-row scoring table and a claim about how many
/// players cleared a threshold. Even i claims the true count (TRUE), odd i
/// overshoots by one (FALSE); every plan is filter-then-count.
fn synthetic_spec(i: usize) -> SyntheticSpec {
    let base = i % 7;
    let threshold = 12 + (i % 10) * 3;
    let columns = strings(&["player", "team", "points"]);
    let mut rows = Vec::new();
    let mut true_count = 0usize;
    for j in 0..5 {
        let points = 10 * j + base;
        if points > threshold {
            true_count += 1;
        }
        rows.push(strings(&[
            FIRST_NAMES[(i * 3 + j) % FIRST_NAMES.len()],
            TEAMS[(i + j) % TEAMS.len()],
            &points.to_string(),
        ]));
    }
    let claim = if i % 2 == 0 { true_count } else { true_count + 1 };
    let gold = claim == true_count;
    let statement =
        format!("the number of players with more than {threshold} points is {claim}");
    let caption = format!("{} league season {}", REGIONS[i % REGIONS.len()], 1990 + i);
    let step1 = format!("Select rows where `points' is greater than {threshold}.");
    let step2 = format!(
        "Use a CASE statement to return TRUE if the number of rows is equal to {claim}, otherwise return FALSE."
    );
    SyntheticSpec {
        sample: Sample {
            id: format!("golden-{i:02}"),
            task: TaskKind::FactVerification,
            table: Table::from_strings(&caption, &columns, &rows)
                .expect("synthetic table is well formed"),
            question: statement.clone(),
            gold: Gold::Bool(gold),
        },
        statement,
        sql1: format!("SELECT * FROM table_sql WHERE points > {threshold};"),
        sql2: format!(
            "SELECT CASE WHEN COUNT(*) = {claim} THEN 'TRUE' ELSE 'FALSE' END AS answer FROM table_sql;"
        ),
        step1,
        step2,
    }
}

fn synthetic_rules(spec: &SyntheticSpec) -> Vec<Rule> {
    vec![
        Rule::new(
            TemplateId::PlanNextStep,
            &[&spec.statement, "(none)"],
            &[],
            &format!("1. {}", spec.step1),
        ),
        Rule::new(
            TemplateId::PlanNextStep,
            &[&spec.statement, &spec.step1],
            &[],
            &format!("2. {}", spec.step2),
        ),
        Rule::new(TemplateId::StepToSql, &[&spec.step1], &[], &spec.sql1),
        Rule::new(TemplateId::StepToSql, &[&spec.step2], &[], &spec.sql2),
    ]
}

/// The 25-sample fixture suite: 24 synthetic scoring claims plus the
/// wildcats sample, all two-step verification runs.
pub fn golden_samples() -> Vec<Sample> {
    let mut samples: Vec<Sample> = (1..=24).map(|i| synthetic_spec(i).sample).collect();
    samples.push(wildcats_sample());
    samples
}

/// Scripted model behavior covering every golden sample.
pub fn golden_rules() -> Vec<Rule> {
    let mut rules = Vec::new();
    for i in 1..=24 {
        rules.extend(synthetic_rules(&synthetic_spec(i)));
    }
    rules.extend(wildcats_rules());
    rules
}

/// A gateway that answers the golden suite deterministically.
pub fn golden_gateway() -> Gateway {
    Gateway::new(Box::new(ScriptedBackend::new(golden_rules())))
}

/// A k-step drill: k-1 keep-everything filters followed by a counting
/// check, exercising exactly k planned steps.
pub fn kstep_sample(k: usize) -> Sample {
    assert!((1..=6).contains(&k));
    let columns = strings(&["round", "points"]);
    let rows: Vec<Vec<String>> = (0..5)
        .map(|j| strings(&[&(j + 1).to_string(), &(10 * (j + 1)).to_string()]))
        .collect();
    Sample {
        id: format!("kstep-{k}"),
        task: TaskKind::FactVerification,
        table: Table::from_strings(&format!("efficiency drill {k}"), &columns, &rows)
            .expect("drill table is well formed"),
        question: format!("drill {k}: all five rounds stayed on the board"),
        gold: Gold::Bool(true),
    }
}

fn kstep_step_text(j: usize, k: usize) -> String {
    if j == k {
        "Use a CASE statement to return TRUE if the number of rows is equal to 5, otherwise return FALSE."
            .to_string()
    } else {
        format!("Select rows where `points' is greater than -{j}.")
    }
}

/// Scripted model behavior for the k-step drill.
pub fn kstep_rules(k: usize) -> Vec<Rule> {
    assert!((1..=6).contains(&k));
    let marker = format!("drill {k}:");
    let mut rules = Vec::new();
    for j in 1..=k {
        let step = kstep_step_text(j, k);
        let requires: Vec<String> = if j == 1 {
            vec![marker.clone(), "(none)".to_string()]
        } else {
            vec![marker.clone(), kstep_step_text(j - 1, k)]
        };
        let forbids: Vec<String> = if j < k { vec![step.clone()] } else { Vec::new() };
        let requires_refs: Vec<&str> = requires.iter().map(String::as_str).collect();
        let forbids_refs: Vec<&str> = forbids.iter().map(String::as_str).collect();
        rules.push(Rule::new(
            TemplateId::PlanNextStep,
            &requires_refs,
            &forbids_refs,
            &format!("{j}. {step}"),
        ));
        let sql = if j == k {
            "SELECT CASE WHEN COUNT(*) = 5 THEN 'TRUE' ELSE 'FALSE' END AS answer FROM table_sql;"
                .to_string()
        } else {
            format!("SELECT * FROM table_sql WHERE points > -{j};")
        };
        rules.push(Rule::new(TemplateId::StepToSql, &[&step], &[], &sql));
    }
    rules
}

fn matrix_csv(corner: &str, rows: &[&str], columns: &[&str], values: &[[f64; 4]]) -> String {
    let mut out = format!("{corner},{}\n", columns.join(","));
    for (label, row) in rows.iter().zip(values) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
        out.push_str(&format!("{label},{}\n", cells.join(",")));
    }
    out
}

/// Materializes the fixture suite into `dir`: the samples, a replay
/// cassette recorded from the scripted model, and the judge-study CSV
/// matrices. Output is byte-stable across runs.
pub fn write_fixture_files(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let samples = golden_samples();
    write_samples(&samples, &dir.join(SAMPLES_FILE)).map_err(std::io::Error::other)?;
    let writer = crate::gateway::CassetteWriter::create(&dir.join(CASSETTE_FILE), false)
        .map_err(std::io::Error::other)?;
    let gateway = Gateway::new(Box::new(RecordBackend::new(
        Box::new(ScriptedBackend::new(golden_rules())),
        writer,
    )));
    // One worker keeps the recorded request order stable.
    let config = RunConfig {
        mode: PlanningMode::OneStep,
        workers: 1,
        ..RunConfig::default()
    };
    let (traces, summary) = run_dataset(&samples, &gateway, &config);
    debug_assert_eq!(traces.len(), samples.len());
    if summary.fallback_count > 0 {
        return Err(std::io::Error::other(
            "golden recording hit the fallback; the scripted rules are incomplete",
        ));
    }
    std::fs::write(
        dir.join(RANKS_FILE),
        matrix_csv("judge", &JUDGE_LABELS, &METHOD_LABELS, &PREFERENCE_RANKS),
    )?;
    std::fs::write(
        dir.join(SIMULATION_FILE),
        matrix_csv("judge", &JUDGE_LABELS, &METHOD_LABELS, &SIMULATION_ACCURACY),
    )?;
    std::fs::write(
        dir.join(VERIFICATION_FILE),
        matrix_csv("judge", &JUDGE_LABELS, &METHOD_LABELS, &VERIFICATION_ACCURACY),
    )?;
    Ok(())
}

/// The directory holding the committed fixture files.
pub fn fixture_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{answer_sample, FinalAnswer};

    #[test]
    fn wildcats_runs_to_true_with_known_attribution() {
        let gateway = Gateway::new(Box::new(ScriptedBackend::new(wildcats_rules())));
        let trace = answer_sample(&wildcats_sample(), &gateway, &RunConfig::default());
        assert_eq!(trace.answer, FinalAnswer::Bool(true));
        assert!(!trace.fallback);
        assert_eq!(trace.steps.len(), 2);
        assert_eq!(trace.steps[0].rows, vec![1, 3, 4, 8]);
        assert!(trace.steps[0]
            .condition_cells
            .iter()
            .all(|(_, c)| c == "opponents"));
        assert_eq!(trace.counters.llm_total, 4);
        assert_eq!(trace.counters.db_queries, 2);
        assert_eq!(trace.counters.attribution_queries, 1);
    }

    #[test]
    fn golden_suite_answers_every_sample_without_fallback() {
        let samples = golden_samples();
        assert_eq!(samples.len(), 25);
        let gateway = golden_gateway();
        let (traces, summary) = run_dataset(&samples, &gateway, &RunConfig::default());
        assert_eq!(traces.len(), 25);
        assert_eq!(summary.fallback_count, 0);
        assert_eq!(summary.abstain_count, 0);
        assert_eq!(summary.accuracy, Some(1.0));
        // Every golden plan is two steps, so the per-sample means are exact.
        assert_eq!(summary.mean_llm_calls, 4.0);
        assert_eq!(summary.mean_db_queries, 2.0);
        // Both verdicts appear in the suite.
        assert!(traces.iter().any(|t| t.answer == FinalAnswer::Bool(true)));
        assert!(traces.iter().any(|t| t.answer == FinalAnswer::Bool(false)));
    }

    #[test]
    fn kstep_drills_follow_the_call_law() {
        for k in 1..=6 {
            let gateway = Gateway::new(Box::new(ScriptedBackend::new(kstep_rules(k))));
            let trace = answer_sample(&kstep_sample(k), &gateway, &RunConfig::default());
            assert_eq!(trace.answer, FinalAnswer::Bool(true), "k={k}");
            assert!(!trace.fallback, "k={k}");
            assert_eq!(trace.steps.len(), k, "k={k}");
            assert_eq!(trace.counters.llm_total, 2 * k as u64, "k={k}");
            assert_eq!(trace.counters.db_queries, k as u64, "k={k}");
        }
    }

    #[test]
    fn fixture_writer_is_byte_stable() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_fixture_files(dir_a.path()).unwrap();
        write_fixture_files(dir_b.path()).unwrap();
        for name in [SAMPLES_FILE, CASSETTE_FILE, RANKS_FILE, SIMULATION_FILE, VERIFICATION_FILE]
        {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert!(!a.is_empty(), "{name} is empty");
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    #[ignore = "regenerates the committed fixture files"]
    fn generate_fixtures() {
        write_fixture_files(&fixture_dir()).unwrap();
    }

    #[test]
    fn committed_fixtures_match_the_generator() {
        let committed = fixture_dir();
        if !committed.join(SAMPLES_FILE).exists() {
            panic!(
                "fixture files missing; run `cargo test -p pos-core generate_fixtures -- --ignored`"
            );
        }
        let fresh = tempfile::tempdir().unwrap();
        write_fixture_files(fresh.path()).unwrap();
        for name in [SAMPLES_FILE, CASSETTE_FILE, RANKS_FILE, SIMULATION_FILE, VERIFICATION_FILE]
        {
            let a = std::fs::read(committed.join(name)).unwrap();
            let b = std::fs::read(fresh.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} is stale; regenerate with the ignored generator test");
        }
    }
}
