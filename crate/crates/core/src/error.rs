use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("{k}-core is empty: every user or item was filtered out")]
    EmptyCore { k: usize },

    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    InvalidRatios([f64; 3]),

    #[error("undefined input: {0}")]
    UndefinedInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite score for user {user}, item {item}")]
    NonFiniteScore { user: String, item: String },

    #[error("{} unknown item(s): {}", .0.len(), .0.join(", "))]
    UnknownItems(Vec<String>),

    #[error("duplicate candidate (user {user}, item {item})")]
    DuplicateCandidate { user: String, item: String },

    #[error("candidate list for user {user} has {len} entries, fewer than K = {k}")]
    ShortList { user: String, len: usize, k: usize },

    #[error("brute-force oracle refused: C({n}, {k}) = {subsets} subsets exceeds the {limit} guard")]
    OracleTooLarge {
        n: usize,
        k: usize,
        subsets: u128,
        limit: u128,
    },

    #[error("matrix factorization diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("relative change undefined: reference value is zero")]
    UndefinedDelta,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("{} user(s) failed: {}", .0.len(), summarize(.0))]
    PerUser(Vec<(String, Error)>),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn summarize(failures: &[(String, Error)]) -> String {
    const SHOWN: usize = 5;
    let mut out = failures
        .iter()
        .take(SHOWN)
        .map(|(user, err)| format!("{user}: {err}"))
        .collect::<Vec<_>>()
        .join("; ");
    if failures.len() > SHOWN {
        out.push_str(&format!("; ... and {} more", failures.len() - SHOWN));
    }
    out
}

/// Process exit codes used by the command-line driver.
pub mod exit_code {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const SOLVER: i32 = 4;
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidRatios(_) | Error::MissingArtifact { .. } => {
                exit_code::CONFIG
            }
            Error::OracleTooLarge { .. } | Error::Divergence { .. } => exit_code::SOLVER,
            Error::PerUser(failures) => failures
                .iter()
                .map(|(_, e)| e.exit_code())
                .max()
                .unwrap_or(exit_code::OTHER),
            Error::Io { .. } | Error::Json(_) => exit_code::OTHER,
            _ => exit_code::DATA,
        }
    }
}
