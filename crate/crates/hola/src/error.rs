use std::path::{Path, PathBuf};

/// Malformed bytes in one of the binary containers.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("{what}: bad magic at byte 0")]
    BadMagic { what: &'static str },
    #[error("{what}: unsupported format version {found} at byte {offset} (this build reads version {supported})")]
    UnsupportedVersion {
        what: &'static str,
        offset: usize,
        found: u16,
        supported: u16,
    },
    #[error("{what}: truncated at byte {offset}, {missing} more bytes needed")]
    Truncated {
        what: &'static str,
        offset: usize,
        missing: usize,
    },
    #[error("{what}: {extra} unexpected trailing bytes at byte {offset}")]
    TrailingBytes {
        what: &'static str,
        offset: usize,
        extra: usize,
    },
    #[error("{what}: invalid field at byte {offset}: {reason}")]
    Invalid {
        what: &'static str,
        offset: usize,
        reason: String,
    },
    #[error("{what}: checksum mismatch over bytes 0..{offset}")]
    Checksum { what: &'static str, offset: usize },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Manifest { path: PathBuf, line: usize, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] hola_core::Error),
    #[error("gradient check failed for {0}")]
    GradCheck(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, source: FormatError) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for invalid inputs or configuration, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use hola_core::Error as C;
        match self {
            Self::Format { .. } | Self::Manifest { .. } | Self::Config(_) => 1,
            Self::Core(
                C::Config(_)
                | C::Dimension { .. }
                | C::EmptyInput(_)
                | C::InsufficientAudio { .. }
                | C::SingleClass
                | C::UnknownParameter(_)
                | C::AllMasked
                | C::DegeneratePlan
                | C::UndefinedMetric(_),
            ) => 1,
            Self::Io { .. } | Self::Core(_) | Self::GradCheck(_) => 2,
        }
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
