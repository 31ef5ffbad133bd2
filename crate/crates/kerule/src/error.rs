use std::path::PathBuf;

use kerule_core::calibration::CalibError;
use kerule_core::datasets::DatasetError;
use kerule_core::evaluate::EvalError;
use kerule_core::evolve::SearchError;
use kerule_core::filters::FilterError;
use kerule_core::ruledsl::ParseError;
use kerule_core::simulators::SimError;
use kerule_core::statespace::StateError;
use kerule_core::theory::TheoryError;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Dataset { path: PathBuf, source: DatasetError },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {message}", path.display())]
    Toml { path: PathBuf, message: String, line: Option<usize> },
    #[error("{}: {source}", path.display())]
    Rule { path: PathBuf, source: ParseError },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("column mapping: {0}")]
    Mapping(String),
    #[error("trajectory `{trajectory}` goes back in time at csv line {line}")]
    NonMonotoneTime { trajectory: String, line: u64 },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Calibration(#[from] CalibError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Evaluation(#[from] EvalError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// The machine-readable form printed on stderr by the command line.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Dataset { .. } => "dataset",
            Error::Json { .. } => "json",
            Error::Toml { .. } => "toml",
            Error::Rule { .. } => "rule",
            Error::Csv { .. } => "csv",
            Error::Mapping(_) => "mapping",
            Error::NonMonotoneTime { .. } => "non_monotone_time",
            Error::Config(_) => "config",
            Error::Calibration(_) => "calibration",
            Error::Search(_) => "search",
            Error::Evaluation(_) => "evaluation",
            Error::Theory(_) => "theory",
            Error::Simulation(_) => "simulation",
            Error::State(_) => "state",
            Error::Filter(_) => "filter",
        }
    }

    pub fn report(&self) -> ErrorReport {
        let (path, line, column) = match self {
            Error::Io { path, .. } => (Some(path), None, None),
            Error::Dataset { path, source } => {
                let line = match source {
                    DatasetError::Schema { line, .. } => Some(*line),
                    _ => None,
                };
                (Some(path), line, None)
            }
            Error::Json { path, source } => (Some(path), Some(source.line()), Some(source.column())),
            Error::Toml { path, line, .. } => (Some(path), *line, None),
            Error::Rule { path, .. } => (Some(path), None, None),
            Error::Csv { path, source } => (Some(path), source.position().map(|p| p.line() as usize), None),
            _ => (None, None, None),
        };
        ErrorReport {
            error: self.kind(),
            message: self.to_string(),
            path: path.map(|p| p.display().to_string()),
            line,
            column,
        }
    }
}
