use jnirm::JnirmError;

/// Command failure classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Exit code 1.
    #[error("usage error: {0}")]
    Usage(String),
    /// Exit code 2.
    #[error("data error: {0}")]
    Data(String),
    /// Exit code 3.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<JnirmError> for CliError {
    fn from(e: JnirmError) -> Self {
        let msg = e.to_string();
        match e {
            JnirmError::InvalidConfig(_) => CliError::Usage(msg),
            JnirmError::DimensionMismatch(_)
            | JnirmError::InvalidData(_)
            | JnirmError::Io { .. }
            | JnirmError::Parse { .. } => CliError::Data(msg),
            JnirmError::NotPositiveDefinite(_) | JnirmError::Numerical(_) | JnirmError::Degenerate(_) => {
                CliError::Numerical(msg)
            }
        }
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
