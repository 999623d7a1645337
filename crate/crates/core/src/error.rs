use thiserror::Error;

/// Errors raised by the simulator, the harness and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs violate a structural contract (dimensions, sample counts, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data is malformed (NaN entries, unparsable CSV, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid or unsupported configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The explicit scheme produced a non-finite state.
    #[error("numerical blow-up at step {step}: {detail}")]
    BlowUp { step: usize, detail: String },

    /// A numerical routine failed to meet its own contract.
    #[error("numerical contract violation: {0}")]
    Numerical(String),

    /// A run-time check on the produced results failed.
    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit status used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BlowUp { .. } | Error::Numerical(_) => 3,
            Error::Assertion(_) => 4,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
