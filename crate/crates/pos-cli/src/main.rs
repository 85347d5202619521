//! `pos`: run the plan-of-SQLs table QA pipeline, render explanations, and
//! score answers and explanation quality from the command line.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::{CliError, CommonFlags, Settings};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pos",
    version,
    about = "Interpretable table question answering via plans of SQL queries"
)]
struct Cli {
    /// TOML config file; flags and POS_* environment variables override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer a dataset and write traces, explanations, and a summary
    Run {
        /// Dataset file (JSONL samples)
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Answer only the first N samples
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Render explanations from an existing trace file
    Explain {
        /// Trace file produced by `run`
        #[arg(long)]
        traces: PathBuf,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Render a single sample id instead of all traces
        #[arg(long)]
        id: Option<String>,
        /// Output format: html or text
        #[arg(long, default_value = "html")]
        format: String,
        /// Mask the final verdict and its restatements
        #[arg(long)]
        masked: bool,
    },
    /// Score a trace file against a dataset's reference answers
    Evaluate {
        /// Trace file produced by `run`
        #[arg(long)]
        traces: PathBuf,
        /// Dataset file with reference answers
        #[arg(long)]
        dataset: PathBuf,
        /// Optional directory for evaluation.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Judge explanation quality or correlate judge studies
    Judge {
        /// simulation, verification, ranking, correlation, or agreement
        #[arg(long)]
        task: String,
        /// Trace file (simulation, verification, agreement)
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Dataset file with reference answers (verification)
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Method name shown to the verification judge
        #[arg(long, default_value = "POS")]
        method_name: String,
        /// Ranking input, repeatable: name=dir of <id>.txt explanations
        #[arg(long = "method")]
        methods: Vec<String>,
        /// Method-correctness matrix CSV; restricts ranking to samples every
        /// method answered alike
        #[arg(long)]
        correctness: Option<PathBuf>,
        /// Preference-rank matrix CSV (correlation)
        #[arg(long)]
        rank_table: Option<PathBuf>,
        /// Judge-accuracy matrix CSV (correlation)
        #[arg(long)]
        acc_table: Option<PathBuf>,
        /// Human decision file, JSONL of {"id", "decision"} (agreement)
        #[arg(long)]
        human: Option<PathBuf>,
        /// Optional directory for judge_report.json
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Run a dataset while recording completions into a cassette (the
    /// shared --cassette flag names the output, default <out>/cassette.jsonl)
    Record {
        /// Dataset file (JSONL samples)
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Answer only the first N samples
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Run a replay twice and verify byte-identical outputs
    ReplayCheck {
        /// Dataset file (JSONL samples)
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Answer only the first N samples
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        flags: CommonFlags,
    },
}

fn require(
    value: Option<PathBuf>,
    flag: &str,
    task: &str,
) -> Result<PathBuf, CliError> {
    value.ok_or_else(|| CliError::config(format!("--task {task} needs --{flag}")))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Run { dataset, out, limit, flags } => {
            let settings = Settings::resolve(config_path, &flags)?;
            commands::run(&dataset, &out, limit, &settings)
        }
        Command::Explain { traces, out, id, format, masked } => {
            commands::explain(&traces, &out, id.as_deref(), &format, masked)
        }
        Command::Evaluate { traces, dataset, out } => {
            commands::evaluate(&traces, &dataset, out.as_deref())
        }
        Command::Judge {
            task,
            traces,
            dataset,
            method_name,
            methods,
            correctness,
            rank_table,
            acc_table,
            human,
            out,
            flags,
        } => {
            let settings = Settings::resolve(config_path, &flags)?;
            match task.as_str() {
                "simulation" => {
                    let traces = require(traces, "traces", "simulation")?;
                    commands::judge_simulation(
                        &traces,
                        dataset.as_deref(),
                        out.as_deref(),
                        &settings,
                    )
                }
                "verification" => {
                    let traces = require(traces, "traces", "verification")?;
                    let dataset = require(dataset, "dataset", "verification")?;
                    commands::judge_verification(
                        &traces,
                        &dataset,
                        &method_name,
                        out.as_deref(),
                        &settings,
                    )
                }
                "ranking" => {
                    let methods = methods
                        .iter()
                        .map(|arg| commands::parse_method_arg(arg))
                        .collect::<Result<Vec<_>, _>>()?;
                    commands::judge_ranking(
                        &methods,
                        correctness.as_deref(),
                        out.as_deref(),
                        &settings,
                    )
                }
                "correlation" => {
                    let rank_table = require(rank_table, "rank-table", "correlation")?;
                    let acc_table = require(acc_table, "acc-table", "correlation")?;
                    commands::judge_correlation(&rank_table, &acc_table, out.as_deref())
                }
                "agreement" => {
                    let traces = require(traces, "traces", "agreement")?;
                    let human = require(human, "human", "agreement")?;
                    commands::judge_agreement(&traces, &human, out.as_deref())
                }
                other => Err(CliError::config(format!(
                    "unknown judge task {other:?} (expected simulation, verification, \
                     ranking, correlation, or agreement)"
                ))),
            }
        }
        Command::Record { dataset, out, limit, flags } => {
            let settings = Settings::resolve(config_path, &flags)?;
            let cassette = settings.cassette.clone();
            commands::record(&dataset, &out, cassette.as_deref(), limit, &settings)
        }
        Command::ReplayCheck { dataset, out, limit, flags } => {
            let settings = Settings::resolve(config_path, &flags)?;
            commands::replay_check(&dataset, &out, limit, &settings)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    e.exit();
                }
                _ => {
                    eprint!("{e}");
                    return ExitCode::from(64);
                }
            }
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
