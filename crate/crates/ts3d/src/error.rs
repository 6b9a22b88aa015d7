use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint does not match the configuration; differing keys: {}", .0.join(", "))]
    Mismatch(Vec<String>),
    #[error(transparent)]
    Core(#[from] ts3d_core::Error),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
    }

    /// Process exit status: 2 for bad input or configuration, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(ts3d_core::Error::NonFinite { .. }) | Error::GradCheck(_) => 3,
            _ => 2,
        }
    }
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
