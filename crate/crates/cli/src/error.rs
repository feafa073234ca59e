use std::fmt;

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or arguments (exit 2).
    Usage(String),
    /// Bad configuration or input files (exit 2).
    Config(String),
    /// Failure while running (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<auglstm::Error> for CliError {
    fn from(e: auglstm::Error) -> Self {
        use auglstm::Error as E;
        match e {
            E::Config { .. }
            | E::Format { .. }
            | E::CheckpointVersion { .. }
            | E::CheckpointTruncated(_)
            | E::CheckpointChecksum
            | E::CheckpointShape { .. }
            | E::CheckpointMalformed(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
