use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("requires projected coordinates")]
    RequiresProjected,

    #[error("outside UTM validity band: latitude {0}")]
    OutsideUtmBand(f64),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("hub error: {0}")]
    Hub(String),

    #[error("hub unreachable: {0}")]
    HubUnreachable(String),

    #[error("download failed: {0}")]
    Download(String),

    #[error("{context}: {source}")]
    IoContext {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into().display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io_at(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::IoContext {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
