use std::path::Path;

use thiserror::Error;

/// Failures surfaced by the file formats and commands, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// Single stderr line: `error kind=<kind> reason=<message without newlines>`.
    pub fn report_line(&self) -> String {
        format!("error kind={} reason={}", self.kind(), self.to_string().replace('\n', " "))
    }

    pub(crate) fn read(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("cannot read {}: {e}", path.display()))
    }

    pub(crate) fn write(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Config(format!("cannot write {}: {e}", path.display()))
    }
}

impl From<dgrmil_core::Error> for CliError {
    fn from(e: dgrmil_core::Error) -> Self {
        use dgrmil_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Dimension { .. } => CliError::Config(msg),
            E::Data(_) => CliError::Data(msg),
            _ => CliError::Numerical(msg),
        }
    }
}
