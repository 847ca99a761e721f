use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid track `{track_id}`: {reason}")]
    InvalidTrack { track_id: String, reason: String },

    #[error("track `{track_id}` spans {duration_s:.3} s, need at least {required_s:.3} s")]
    TrackTooShort {
        track_id: String,
        duration_s: f64,
        required_s: f64,
    },

    #[error("non-finite raw network output at index {index}")]
    InvalidLogits { index: usize },

    #[error("degenerate covariance: |rho| = {rho} must be < 1 and sigmas positive")]
    DegenerateCovariance { rho: f64 },

    #[error("horizon mismatch: forecast has {expected} horizons, got {actual}")]
    HorizonMismatch { expected: usize, actual: usize },

    #[error("model shape error: {0}")]
    ModelShape(String),

    #[error("numerical divergence: non-finite loss at forecast horizon {horizon}")]
    NumericalDivergence { horizon: usize },

    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("checkpoint checksum mismatch or truncated file")]
    Checksum,

    #[error("confidence-set grid needs {cells} cells, budget is {budget}")]
    GridBudgetExceeded { cells: u64, budget: u64 },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid_track(track_id: &str, reason: impl Into<String>) -> Self {
        Error::InvalidTrack {
            track_id: track_id.to_owned(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
