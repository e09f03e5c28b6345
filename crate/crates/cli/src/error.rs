use thiserror::Error;

/// Failures mapped onto the process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 1.
    #[error("{0}")]
    Failed(String),
    /// Exit 2.
    #[error("usage: {0}")]
    Usage(String),
    /// Exit 2.
    #[error("config: {0}")]
    Config(String),
    /// Exit 3.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Exit 3.
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<svi_torus::Error> for CliError {
    fn from(e: svi_torus::Error) -> Self {
        use svi_torus::Error as E;
        match e {
            E::InvalidGrid(_)
            | E::GridMismatch { .. }
            | E::ShapeMismatch(_)
            | E::InvalidParameter(_)
            | E::UnknownPreset(_)
            | E::Expression { .. }
            | E::MissingConstant(_) => CliError::Config(e.to_string()),
            E::NonFinite { .. } | E::CgNotConverged { .. } | E::BlowUp { .. } | E::AtStep { .. } | E::Format { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}
