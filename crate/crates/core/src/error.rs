use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("diffusion step {t} out of range 1..={steps}")]
    Step { t: usize, steps: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("non-positive or non-finite variance at index {0}")]
    Variance(usize),

    #[error("token id {id} out of range for alphabet of size {alphabet}")]
    Token { id: usize, alphabet: usize },

    #[error("invalid alignment: {0}")]
    Alignment(String),

    #[error("invalid durations: {0}")]
    Duration(String),

    #[error("invalid corpus spec: {0}")]
    Corpus(String),

    #[error("missing parameter tensor `{0}`")]
    MissingParam(String),

    #[error("parameter tensor `{name}` has {len} values but shape {shape:?}")]
    ParamShape {
        name: String,
        shape: Vec<usize>,
        len: usize,
    },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage order: {0}")]
    StageOrder(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
