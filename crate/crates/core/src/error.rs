use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: field `{field}`: {message}")]
    Record {
        line: usize,
        field: String,
        message: String,
    },

    #[error("parse/utterance alignment: {0}")]
    Alignment(String),

    #[error("malformed dependency parse: {0}")]
    Parse(String),

    #[error("no pronoun matched and no dependency parse supplied; provide a parse for ellipsis detection")]
    ParseRequired,

    #[error("dialogue has no gold rewritten utterance")]
    MissingGold,

    #[error("lexicon: {0}")]
    Lexicon(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss on example `{example}`")]
    NonFiniteLoss { example: String },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("edit span references row {row} outside the history region {start}..{end}")]
    RowOutOfRange { row: usize, start: usize, end: usize },

    #[error("edit span references column {col} outside 0..={max}")]
    ColOutOfRange { col: usize, max: usize },

    #[error("imported vectors: {0}")]
    Vectors(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus size mismatch: {hyps} hypotheses vs {refs} references")]
    CorpusMismatch { hyps: usize, refs: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
