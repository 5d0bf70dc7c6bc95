//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One foreign key value that did not resolve to a row of its target table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FkViolation {
    pub table: String,
    pub row: usize,
    pub column: String,
    pub value: String,
}

impl fmt::Display for FkViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[row {}].{} = {:?}",
            self.table, self.row, self.column, self.value
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unresolved foreign keys ({} total): {}", .0.len(), join_violations(.0))]
    Integrity(Vec<FkViolation>),

    #[error("duplicate primary key {key:?} in table {table}")]
    DuplicateKey { table: String, key: String },

    #[error("sampler: no admissible node exists for seed {seed}")]
    EmptyUniverse { seed: u32 },

    #[error("sampler: seed {seed} is not admissible at time {as_of}")]
    InadmissibleSeed { seed: u32, as_of: i64 },

    #[error("loss is not a scalar (shape {rows}x{cols})")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("labels are degenerate: {0}")]
    DegenerateLabels(String),

    #[error("invalid task: {0}")]
    Task(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad binary format: {0}")]
    Format(String),
}

fn join_violations(v: &[FkViolation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// Stable machine-readable name, used on the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::Parse(_) => "ParseError",
            Error::Schema(_) => "SchemaError",
            Error::Integrity(_) => "IntegrityError",
            Error::DuplicateKey { .. } => "DuplicateKeyError",
            Error::EmptyUniverse { .. } => "EmptyUniverse",
            Error::InadmissibleSeed { .. } => "InadmissibleSeed",
            Error::NonScalarLoss { .. } => "NonScalarLoss",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::DegenerateLabels(_) => "DegenerateLabels",
            Error::Task(_) => "TaskError",
            Error::Config(_) => "ConfigError",
            Error::Format(_) => "FormatError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
