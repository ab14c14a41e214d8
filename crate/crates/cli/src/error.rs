use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const IO: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] scorewalk::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use scorewalk::Error as E;
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Core(e) => match e {
                E::Config(_) | E::Dimension { .. } | E::Precondition(_) | E::Parse { .. } => exit::CONFIG,
                E::Diverged { .. } | E::TrainingDiverged { .. } | E::Numeric(_) => exit::NUMERIC,
                E::Io(_) => exit::IO,
            },
        }
    }
}

/// Attaches a file name to a core parse error.
pub(crate) fn in_file(path: &Path, e: scorewalk::Error) -> CliError {
    match e {
        scorewalk::Error::Parse { line, message } => CliError::Core(scorewalk::Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        }),
        other => CliError::Core(other),
    }
}
