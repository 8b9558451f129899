use lineage_core::amr::AmrError;
use lineage_core::analytics::AnalyticsError;
use lineage_core::corpus::CorpusError;
use lineage_core::embed::EmbedError;
use lineage_core::matching::MatchError;
use lineage_core::pipeline::PipelineError;
use lineage_core::vindex::VindexError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    NotFound(String),
    #[error("index not built: {0}")]
    IndexNotBuilt(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] VindexError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Amr(#[from] AmrError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Corpus(e) => e.into(),
            PipelineError::Embed(e) => e.into(),
            PipelineError::Index(e) => e.into(),
            PipelineError::Match(e) => e.into(),
            PipelineError::Analytics(e) => e.into(),
        }
    }
}

/// The single line printed to stderr when a command fails.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorLine {
    pub error: &'static str,
    pub exit_code: u8,
    pub message: String,
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }

    /// 2 for usage and configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config(_) => 2,
            _ => 1,
        }
    }

    /// Stable machine-readable name of the innermost error.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "Usage",
            Self::Config(_) => "Config",
            Self::NotFound(_) => "NotFound",
            Self::IndexNotBuilt(_) => "IndexNotBuilt",
            Self::Corpus(e) => corpus_kind(e),
            Self::Embed(e) => embed_kind(e),
            Self::Index(e) => vindex_kind(e),
            Self::Match(e) => match_kind(e),
            Self::Analytics(e) => match e {
                AnalyticsError::MissingMetadata(_) => "MissingMetadata",
                AnalyticsError::UnsupportedFormat(_) => "UnsupportedFormat",
                AnalyticsError::Io(_) => "Io",
            },
            Self::Amr(e) => match e {
                AmrError::Syntax { .. } => "GraphSyntax",
                AmrError::DuplicateVariable(_) => "DuplicateVariable",
                AmrError::DanglingReference(_) => "DanglingReference",
                AmrError::InvalidGraph(_) => "InvalidGraph",
                AmrError::InvalidWeights { .. } => "InvalidWeights",
                AmrError::Sidecar { .. } => "GraphSidecar",
                AmrError::Io(_) => "Io",
            },
            Self::Io { .. } => "Io",
        }
    }

    pub fn line(&self) -> ErrorLine {
        ErrorLine { error: self.kind(), exit_code: self.exit_code(), message: self.to_string() }
    }
}

pub fn corpus_kind(e: &CorpusError) -> &'static str {
    match e {
        CorpusError::DuplicateDocId(_) => "DuplicateDocId",
        CorpusError::InvalidMetadata { .. } => "InvalidMetadata",
        CorpusError::UnknownDocument(_) => "UnknownDocument",
        CorpusError::Parse { .. } => "Parse",
        CorpusError::Config(_) => "CorpusConfig",
        CorpusError::Io(_) => "Io",
    }
}

pub fn embed_kind(e: &EmbedError) -> &'static str {
    match e {
        EmbedError::ProviderUnavailable { .. } => "ProviderUnavailable",
        EmbedError::DimensionMismatch { .. } => "DimensionMismatch",
        EmbedError::InvalidConfig(_) => "InvalidProviderConfig",
        EmbedError::Protocol(_) => "ProviderProtocol",
        EmbedError::ZeroVector => "ZeroVector",
        EmbedError::NonFinite => "NonFinite",
        EmbedError::NotUnitNorm { .. } => "NotUnitNorm",
        EmbedError::EmptySentence(_) => "EmptySentence",
    }
}

pub fn vindex_kind(e: &VindexError) -> &'static str {
    match e {
        VindexError::DimensionMismatch { .. } => "DimensionMismatch",
        VindexError::EmptyInput => "EmptyInput",
        VindexError::InsufficientTrainingData { .. } => "InsufficientTrainingData",
        VindexError::InvalidParams(_) => "InvalidParams",
        VindexError::NotUnitNorm { .. } => "NotUnitNorm",
        VindexError::DuplicateId(_) => "DuplicateId",
        VindexError::InvalidThreshold(_) => "InvalidThreshold",
        VindexError::InvalidK => "InvalidK",
        VindexError::VersionMismatch { .. } => "VersionMismatch",
        VindexError::ChecksumMismatch => "ChecksumMismatch",
        VindexError::BadMagic => "BadMagic",
        VindexError::Corrupt(_) => "Corrupt",
        VindexError::Io(_) => "Io",
    }
}

pub fn match_kind(e: &MatchError) -> &'static str {
    match e {
        MatchError::ManifestMismatch { .. } => "ManifestMismatch",
        MatchError::EmptyFocusBook(_) => "EmptyFocusBook",
        MatchError::UnknownDocument(_) => "UnknownDocument",
        MatchError::UnknownSentence(_) => "UnknownSentence",
        MatchError::InvalidConfig(_) => "InvalidMatchConfig",
        MatchError::Format(_) => "Format",
        MatchError::Embed(e) => embed_kind(e),
        MatchError::Index(e) => vindex_kind(e),
        MatchError::Io(_) => "Io",
    }
}
