use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] xvecforge_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Stream(#[from] std::io::Error),
    #[error("malformed archive: {0}")]
    Format(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("missing record `{0}`")]
    MissingRecord(String),
    #[error("stage `{stage}` needs {what} at {path}; run `{producer}` first")]
    MissingArtifact { stage: &'static str, what: &'static str, path: PathBuf, producer: &'static str },
    #[error("WAV input: {0}")]
    Wav(#[from] hound::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
