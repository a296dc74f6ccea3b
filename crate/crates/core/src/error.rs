use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: field `{field}`: {message}")]
    ManifestParse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("utterance `{id}`: {message}")]
    InvalidUtterance { id: String, message: String },

    #[error("character {ch:?} in word `{word}` has no case mapping")]
    NoCaseMapping { ch: char, word: String },

    #[error("word `{0}` is neither uniformly uppercase nor uniformly lowercase")]
    MixedCase(String),

    #[error("tag syntax at byte {position}: {message}")]
    TagSyntax { position: usize, message: String },

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("language model: {0}")]
    LanguageModel(String),

    #[error("ARPA line {line}: {message}")]
    Arpa { line: usize, message: String },

    #[error("logit matrix: {0}")]
    Logits(String),

    #[error("frame {frame} contains a non-finite value")]
    NonFiniteFrame { frame: usize },

    #[error("CTC target symbol {symbol} is not a non-blank vocabulary entry")]
    TargetSymbol { symbol: usize },

    #[error("CTC target too long: needs {needed} frames, matrix has {frames}")]
    TargetTooLong { needed: usize, frames: usize },

    #[error("exhaustive search over {paths} paths exceeds the limit of {limit}")]
    SearchTooLarge { paths: f64, limit: usize },

    #[error("CSLG: {0}")]
    Cslg(String),

    #[error("language ID: {0}")]
    LangId(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("synthetic corpus: {0}")]
    Synth(String),

    #[error("pipeline: {0}")]
    Pipeline(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used as the prefix of CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::ManifestParse { .. } => "E_MANIFEST_PARSE",
            Error::InvalidUtterance { .. } => "E_UTTERANCE",
            Error::NoCaseMapping { .. } | Error::MixedCase(_) => "E_CASING",
            Error::TagSyntax { .. } => "E_TAGS",
            Error::Vocabulary(_) => "E_VOCAB",
            Error::LanguageModel(_) => "E_LM",
            Error::Arpa { .. } => "E_ARPA",
            Error::Logits(_) | Error::NonFiniteFrame { .. } => "E_LOGITS",
            Error::TargetSymbol { .. } | Error::TargetTooLong { .. } => "E_CTC_TARGET",
            Error::SearchTooLarge { .. } => "E_SEARCH_LIMIT",
            Error::Cslg(_) => "E_CSLG",
            Error::LangId(_) => "E_LANGID",
            Error::Metrics(_) => "E_METRICS",
            Error::Synth(_) => "E_SYNTH",
            Error::Pipeline(_) => "E_PIPELINE",
            Error::InvalidParameter(_) => "E_PARAM",
        }
    }
}
