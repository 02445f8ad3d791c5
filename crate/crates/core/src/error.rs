use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("template pack: {0}")]
    Template(String),
    #[error("render error: {0}")]
    Render(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("encoding error: unknown {kind} `{id}`")]
    UnknownId { kind: &'static str, id: String },
    #[error("model query failed for chain {chain_id}: {source}")]
    ChainQuery {
        chain_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("extraction error: {0}")]
    Extraction(String),
    #[error("capacity error: {targets} targets exceed dimension {dim}")]
    Capacity { targets: usize, dim: usize },
    #[error("edit aborted: {0}")]
    EditAborted(String),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("report mismatch: {0}")]
    ReportMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("model file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
