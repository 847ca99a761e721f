use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] htp_core::Error),
    #[error("training aborted in epoch {epoch}: {source}")]
    TrainAborted {
        epoch: usize,
        source: htp_core::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for numerical failures, 2 for usage and data errors.
    pub fn exit_code(&self) -> i32 {
        use htp_core::Error as E;
        match self {
            Self::Core(e) | Self::TrainAborted { source: e, .. }
                if matches!(
                    e,
                    E::NumericalDivergence { .. }
                        | E::InvalidLogits { .. }
                        | E::DegenerateCovariance { .. }
                ) =>
            {
                1
            }
            _ => 2,
        }
    }
}
