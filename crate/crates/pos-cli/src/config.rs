//! Layered runtime configuration: command-line flags override environment
//! variables, which override the optional TOML config file, which overrides
//! built-in defaults.

use pos_core::gateway::CompletionParams;
use pos_core::pipeline::RunConfig;
use pos_core::planner::PlanningMode;
use serde::Deserialize;
use std::fmt;
use std::path::{Path, PathBuf};

/// A failed invocation, split by exit code: configuration problems exit 1,
/// I/O problems exit 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    pub fn config(message: impl Into<String>) -> CliError {
        CliError::Config(message.into())
    }

    pub fn io(message: impl Into<String>) -> CliError {
        CliError::Io(message.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Io(e.to_string())
    }
}

impl From<pos_core::gateway::GatewayError> for CliError {
    fn from(e: pos_core::gateway::GatewayError) -> CliError {
        match e {
            pos_core::gateway::GatewayError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<pos_core::dataset::DatasetError> for CliError {
    fn from(e: pos_core::dataset::DatasetError) -> CliError {
        match e {
            pos_core::dataset::DatasetError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<pos_core::eval::StatsError> for CliError {
    fn from(e: pos_core::eval::StatsError) -> CliError {
        match e {
            pos_core::eval::StatsError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<pos_core::eval::JudgeError> for CliError {
    fn from(e: pos_core::eval::JudgeError) -> CliError {
        match e {
            pos_core::eval::JudgeError::Gateway(g) => g.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<pos_core::explain::RenderError> for CliError {
    fn from(e: pos_core::explain::RenderError) -> CliError {
        CliError::Config(e.to_string())
    }
}

/// Keys understood in the TOML config file. Every key is optional; unknown
/// keys are rejected so typos fail loudly.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub api_key: Option<String>,
    pub api_base: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
    pub backend: Option<String>,
    pub cassette: Option<PathBuf>,
    pub mode: Option<String>,
    pub workers: Option<usize>,
    pub max_steps: Option<usize>,
    pub fallback: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("config file {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::config(format!("config file {}: {e}", path.display())))
    }
}

/// Which completion backend serves the run.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendKind {
    /// Answers only from a recorded cassette; never touches the network.
    Replay,
    /// Live HTTP API; needs an api key.
    Http,
    /// The built-in scripted model used by the bundled fixture suite.
    Scripted,
}

impl BackendKind {
    fn parse(s: &str) -> Result<BackendKind, CliError> {
        match s {
            "replay" => Ok(BackendKind::Replay),
            "http" => Ok(BackendKind::Http),
            "scripted" => Ok(BackendKind::Scripted),
            other => Err(CliError::config(format!(
                "unknown backend {other:?} (expected replay, http, or scripted)"
            ))),
        }
    }
}

fn parse_mode(s: &str) -> Result<PlanningMode, CliError> {
    match s.replace('_', "-").as_str() {
        "one-step" => Ok(PlanningMode::OneStep),
        "one-time" => Ok(PlanningMode::OneTime),
        other => Err(CliError::config(format!(
            "unknown mode {other:?} (expected one-step or one-time)"
        ))),
    }
}

/// Flag values shared by the commands that run the pipeline or call a
/// backend; `None` means the flag was not given.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct CommonFlags {
    /// Planning mode: one-step or one-time
    #[arg(long)]
    pub mode: Option<String>,
    /// Completion backend: replay, http, or scripted
    #[arg(long)]
    pub backend: Option<String>,
    /// Cassette file for the replay backend (or record output)
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// Model identifier sent with every completion
    #[arg(long)]
    pub model: Option<String>,
    /// Sampling temperature
    #[arg(long)]
    pub temperature: Option<f64>,
    /// API key for the http backend
    #[arg(long)]
    pub api_key: Option<String>,
    /// Base URL for the http backend
    #[arg(long)]
    pub api_base: Option<String>,
    /// Worker threads for pipeline and judge calls
    #[arg(long)]
    pub workers: Option<usize>,
    /// Step budget per question
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Disable the end-to-end fallback prompt
    #[arg(long)]
    pub no_fallback: bool,
}

/// The fully resolved configuration a command runs with.
#[derive(Debug)]
pub struct Settings {
    pub backend: BackendKind,
    pub cassette: Option<PathBuf>,
    pub api_key: Option<String>,
    pub api_base: String,
    pub run: RunConfig,
}

const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

impl Settings {
    /// Resolves settings from, in rising precedence: defaults, the config
    /// file, `POS_API_KEY`/`POS_API_BASE`, then flags.
    pub fn resolve(config_path: Option<&Path>, flags: &CommonFlags) -> Result<Settings, CliError> {
        let file = match config_path {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let env_key = std::env::var("POS_API_KEY").ok().filter(|v| !v.is_empty());
        let env_base = std::env::var("POS_API_BASE").ok().filter(|v| !v.is_empty());

        let mut params = CompletionParams::default();
        if let Some(model) = flags.model.clone().or(file.model) {
            params.model_id = model;
        }
        if let Some(t) = flags.temperature.or(file.temperature) {
            params.temperature = t;
        }
        if let Some(p) = file.top_p {
            params.top_p = p;
        }
        if let Some(m) = file.max_tokens {
            params.max_tokens = m;
        }

        let defaults = RunConfig::default();
        let run = RunConfig {
            mode: match flags.mode.as_deref().or(file.mode.as_deref()) {
                Some(s) => parse_mode(s)?,
                None => defaults.mode,
            },
            params,
            fallback_enabled: if flags.no_fallback {
                false
            } else {
                file.fallback.unwrap_or(defaults.fallback_enabled)
            },
            max_steps: flags.max_steps.or(file.max_steps).unwrap_or(defaults.max_steps),
            workers: flags.workers.or(file.workers).unwrap_or(defaults.workers),
            snapshot_row_limit: defaults.snapshot_row_limit,
        };
        if run.workers == 0 {
            return Err(CliError::config("workers must be at least 1"));
        }

        Ok(Settings {
            backend: match flags.backend.as_deref().or(file.backend.as_deref()) {
                Some(s) => BackendKind::parse(s)?,
                None => BackendKind::Scripted,
            },
            cassette: flags.cassette.clone().or(file.cassette),
            api_key: flags.api_key.clone().or(env_key).or(file.api_key),
            api_base: flags.api_base.clone().or(env_base).or(file.api_base).unwrap_or_else(
                || DEFAULT_API_BASE.to_string(),
            ),
            run,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_without_any_input() {
        let settings = Settings::resolve(None, &CommonFlags::default()).unwrap();
        assert_eq!(settings.backend, BackendKind::Scripted);
        assert_eq!(settings.run.workers, 4);
        assert_eq!(settings.run.max_steps, 8);
        assert!(settings.run.fallback_enabled);
        assert_eq!(settings.api_base, DEFAULT_API_BASE);
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pos.toml");
        std::fs::write(
            &path,
            "backend = \"replay\"\nmodel = \"file-model\"\nworkers = 2\ntemperature = 0.7\n",
        )
        .unwrap();
        let flags = CommonFlags {
            model: Some("flag-model".into()),
            ..CommonFlags::default()
        };
        let settings = Settings::resolve(Some(&path), &flags).unwrap();
        assert_eq!(settings.backend, BackendKind::Replay);
        assert_eq!(settings.run.params.model_id, "flag-model");
        assert_eq!(settings.run.params.temperature, 0.7);
        assert_eq!(settings.run.workers, 2);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pos.toml");
        std::fs::write(&path, "modle = \"oops\"\n").unwrap();
        let err = Settings::resolve(Some(&path), &CommonFlags::default()).unwrap_err();
        assert_eq!(err.code(), 1);
    }

    #[test]
    fn bad_mode_and_backend_are_config_errors() {
        let flags = CommonFlags { mode: Some("two-step".into()), ..CommonFlags::default() };
        assert_eq!(Settings::resolve(None, &flags).unwrap_err().code(), 1);
        let flags = CommonFlags { backend: Some("psychic".into()), ..CommonFlags::default() };
        assert_eq!(Settings::resolve(None, &flags).unwrap_err().code(), 1);
    }

    #[test]
    fn missing_config_file_is_an_io_error() {
        let err =
            Settings::resolve(Some(Path::new("/nonexistent/pos.toml")), &CommonFlags::default())
                .unwrap_err();
        assert_eq!(err.code(), 2);
    }
}
