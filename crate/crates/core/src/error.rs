use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("subdomain box is not aligned with grid lines: {0}")]
    MisalignedPartition(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("time grid mismatch: {0}")]
    GridMismatch(String),
    #[error("singular matrix: {0}")]
    SingularMatrix(String),
    #[error("degenerate element: {0}")]
    DegenerateElement(String),
    #[error("index error: {0}")]
    IndexError(String),
    #[error("Robin parameter must be positive, got {0}")]
    InvalidRobinParameter(f64),
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("time window {window} failed: {source}")]
    Window {
        window: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
