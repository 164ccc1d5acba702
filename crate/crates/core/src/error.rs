use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("no usable feature columns")]
    NoFeatures,
    #[error("class `{0}` is empty")]
    EmptyClass(String),
    #[error("all regression responses are identical; no median split possible")]
    ConstantResponse,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("failed to converge: {0}")]
    Convergence(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("design matrix is rank deficient; aliased columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("unknown detector `{0}`")]
    UnknownDetector(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
