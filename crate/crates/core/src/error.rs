use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite gradient in parameter `{name}` at entry {index}")]
    NonFiniteGradient { name: String, index: usize },

    #[error("training diverged in {stage} at step {step}: loss = {loss}")]
    Diverged { stage: String, step: usize, loss: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown {kind} `{id}`")]
    Lookup { kind: &'static str, id: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint hash mismatch: expected {expected}, found {found}")]
    StaleCheckpoint { expected: String, found: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
