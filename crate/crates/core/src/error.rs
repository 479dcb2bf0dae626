use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Cholesky failed even after jitter escalation. `minor` is the
    /// zero-based index of the first non-positive pivot.
    #[error("matrix is not positive semidefinite (leading minor {minor} failed)")]
    NotPsd { minor: usize },

    #[error("tree height violation: root-to-leaf length of '{leaf}' is {length}, expected 1")]
    TreeHeight { leaf: String, length: f64 },

    #[error("malformed tree: {0}")]
    TreeSyntax(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("partitions are over different ground sets ({0} vs {1} elements)")]
    GroundSetMismatch(usize, usize),

    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("trace has no retained samples with assignment snapshots")]
    EmptyTrace,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
