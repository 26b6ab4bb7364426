use std::path::PathBuf;

/// Errors produced by the rotation averaging toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("view graph is disconnected into {} components (sizes {component_sizes:?})", component_sizes.len())]
    Disconnected { component_sizes: Vec<usize> },

    #[error("singular normal equations: {0}")]
    Singular(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
