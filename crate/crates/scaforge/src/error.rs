use std::io;
use std::path::{Path, PathBuf};

use scaforge_core::traces::SampleType;
use thiserror::Error;

/// Problems with the contents of a binary file.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic (expected {})", String::from_utf8_lossy(&expected[..]))]
    BadMagic { expected: &'static [u8; 4] },
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("unsupported flag bits {0:#06x}")]
    Flags(u16),
    #[error("unsupported sample dtype code {0}")]
    Dtype(u8),
    #[error("reserved header bytes are not zero")]
    Reserved,
    #[error("truncated: {needed} more bytes needed at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} unexpected bytes after payload")]
    Trailing(usize),
    #[error("sample {index} ({value}) is not representable as {dtype:?}")]
    Unrepresentable { index: usize, value: f64, dtype: SampleType },
    #[error("class count {0}, expected 256")]
    ClassCount(u16),
    #[error("{0}")]
    Corrupt(&'static str),
    #[error(transparent)]
    Core(#[from] scaforge_core::Error),
}

/// File-level error: an IO failure or a format problem, tagged with the path.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: FormatError },
}

impl Error {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, source: FormatError) -> Self {
        Error::Format { path: path.to_path_buf(), source }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
