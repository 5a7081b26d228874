use std::io;
use std::path::PathBuf;

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{source_id}:{line_no}: invalid UTF-8")]
    Encoding { source_id: String, line_no: u64 },

    #[error("{source_id}:{line_no}: {message}")]
    Malformed {
        source_id: String,
        line_no: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] io::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("label {0} is outside 0..=31")]
    LabelRange(i64),

    #[error("stats conservation violated: {0}")]
    Conservation(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CorpusError>,
    },
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        CorpusError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
