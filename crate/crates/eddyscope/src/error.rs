use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    /// A core error tied to the file it came from.
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: eddyscope_core::Error },
    #[error(transparent)]
    Core(#[from] eddyscope_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), message: message.into() }
    }

    pub fn file(path: &Path, source: eddyscope_core::Error) -> Self {
        Error::File { path: path.to_path_buf(), source }
    }
}

/// Attaches a path to core errors.
pub(crate) trait InFile<T> {
    fn in_file(self, path: &Path) -> Result<T>;
}

impl<T> InFile<T> for eddyscope_core::Result<T> {
    fn in_file(self, path: &Path) -> Result<T> {
        self.map_err(|e| Error::file(path, e))
    }
}
