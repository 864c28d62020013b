use std::fmt;
use std::path::{Path, PathBuf};

use bsc_core::config::RunConfig;
use bsc_core::Error;

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Self::usage(e.to_string())
        } else {
            Self::runtime(e.to_string())
        }
    }
}

/// Errors reading a file the user named are usage errors.
pub fn input<T>(path: &Path, r: bsc_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match e {
        Error::Io { .. } => CliError::usage(e.to_string()),
        other => CliError::from(other).prefixed(path),
    })
}

impl CliError {
    fn prefixed(self, path: &Path) -> Self {
        Self {
            code: self.code,
            message: format!("{}: {}", path.display(), self.message),
        }
    }
}

pub fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => input(p, RunConfig::load(p)),
        None => Ok(RunConfig::default()),
    }
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}
