use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error{}: {message}", at_line(*.line))]
    Config {
        line: Option<usize>,
        message: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(trapcoh::Error),

    #[error("{}: {message}", .path.display())]
    Io { path: PathBuf, message: String },
}

fn at_line(line: Option<usize>) -> String {
    match line {
        Some(l) => format!(" at line {l}"),
        None => String::new(),
    }
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config {
            line: None,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Process exit status: 2 for configuration, 3 for numerical and 4
    /// for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
        }
    }
}

impl From<trapcoh::Error> for CliError {
    fn from(err: trapcoh::Error) -> Self {
        match err {
            trapcoh::Error::InvalidParameter { .. } => CliError::config(err.to_string()),
            other => CliError::Numerical(other),
        }
    }
}
