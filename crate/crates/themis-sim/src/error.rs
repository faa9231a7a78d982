use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty allocation")]
    EmptyAllocation,
    #[error("invalid cluster: {0}")]
    InvalidCluster(String),
    #[error("invalid slowdown profile: {0}")]
    InvalidProfile(String),
    #[error("degenerate job")]
    DegenerateJob,
    #[error("invalid contention estimate: n_avg = {0}")]
    InvalidNavg(f64),
    #[error("app already finished")]
    AppFinished,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("oracle scale exceeded")]
    OracleScaleExceeded,
    #[error("solver node limit exceeded after {0} nodes")]
    SolverNodeLimit(u64),
    #[error("malformed bid table: {0}")]
    MalformedBid(String),
    #[error("workload parse error at line {line}: {msg}")]
    WorkloadParse { line: usize, msg: String },
    #[error("workload invariant violated in field {field}: {msg}")]
    WorkloadInvariant { field: String, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
