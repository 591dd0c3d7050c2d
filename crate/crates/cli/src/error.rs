use thiserror::Error;

/// Failures of a CLI job, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(crve_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<crve_core::Error> for CliError {
    fn from(e: crve_core::Error) -> Self {
        use crve_core::Error as E;
        match e {
            e if e.is_numerical() => CliError::Numerical(e),
            E::InvalidDesign(_)
            | E::UnsupportedBasis(_)
            | E::DiagonalRestricted { .. }
            | E::AsymmetricRestriction { .. } => CliError::Config(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
