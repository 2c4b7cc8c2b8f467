use std::path::PathBuf;

/// Errors surfaced by the recommender pipeline.
///
/// `Data` covers everything wrong with input files or corpus structure,
/// `Shape` covers tensor/parameter dimension disagreements, and `Numeric`
/// covers non-finite values showing up during optimization. The CLI maps
/// these onto distinct process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Data(String),

    #[error("shape mismatch for {name}: expected {expected:?}, got {got:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    Numeric {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
