use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] sparse_cert::Error),
}

impl CliError {
    /// 2 config, 3 data, 4 violated precondition.
    pub fn exit_code(&self) -> u8 {
        use sparse_cert::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(E::Domain(_)) => 2,
            CliError::Core(E::Precondition(_)) => 4,
            CliError::Core(E::Dimension { .. } | E::Parse { .. } | E::Io(_)) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}
