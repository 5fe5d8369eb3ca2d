use std::fmt;

use ralstm::corpus::CorpusError;
use ralstm::Error;

/// Process exit status for each failure class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Data,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Numeric,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match &e {
            Error::Config(_) => CliError::usage(e.to_string()),
            Error::Autodiff(_) => CliError::numeric(e.to_string()),
            Error::Diverged { last_good, .. } => {
                let hint = match last_good {
                    Some(p) => format!(" (last good checkpoint: {})", p.display()),
                    None => " (no checkpoint was written)".to_string(),
                };
                CliError::numeric(format!("{e}{hint}"))
            }
            Error::VocabMismatch { .. } => CliError::data(format!(
                "{e}. The checkpoint was trained with a different vocabulary; \
                 pass the vocab.json from its run directory"
            )),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}
