//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown task `{0}` (valid: dynasty, ware, glaze, type)")]
    UnknownTask(String),

    #[error("unknown category `{name}` for task `{task}` (valid: {valid})")]
    UnknownCategory {
        task: String,
        name: String,
        valid: String,
    },

    #[error("category index {index} out of range for task `{task}` (cardinality {len})")]
    IndexOutOfRange {
        task: String,
        index: usize,
        len: usize,
    },

    #[error("manifest is missing required column `{0}`")]
    MissingColumn(String),

    #[error("manifest row {row}: {source}")]
    ManifestRow {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest row {row}: expected {expected} fields, found {found}")]
    MalformedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("manifest row {row}: duplicate sample_id `{id}`")]
    DuplicateSampleId { row: usize, id: String },

    #[error("manifest contains no data rows")]
    EmptyManifest,

    #[error("cannot split {n} samples (need at least 3)")]
    TooFewSamples { n: usize },

    #[error("cannot decode image `{path}`: {detail}")]
    UndecodableImage { path: String, detail: String },

    #[error("image has zero pixels")]
    ZeroSizeImage,

    #[error("invalid channel count {0} (must be >= 1)")]
    InvalidChannels(usize),

    #[error("unknown architecture `{0}` (valid: resnet50, mobilenetv2, vgg16, inceptionv3)")]
    UnknownArch(String),

    #[error("pretrained weights for `{arch}` unavailable (searched {searched})")]
    WeightsUnavailable { arch: String, searched: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("target index {index} out of range for {classes} classes (sample {sample})")]
    TargetOutOfRange {
        index: usize,
        classes: usize,
        sample: usize,
    },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("confusion matrix has no samples")]
    EmptyMatrix,

    #[error("report set is empty")]
    EmptyReportSet,

    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("checkpoint taxonomy fingerprint {found} does not match current taxonomy {expected}")]
    TaxonomyMismatch { expected: String, found: String },

    #[error("malformed weight archive `{path}`: {detail}")]
    CorruptArchive { path: String, detail: String },

    #[error("config line {line}: cannot parse `{text}`")]
    ParseError { line: usize, text: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("invalid value for `{key}`: {detail}")]
    InvalidValue { key: String, detail: String },

    #[error("unknown command `{0}`")]
    UnknownCommand(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Stable machine-readable kind tag, used by the CLI's single-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownTask(_) => "UnknownTask",
            Error::UnknownCategory { .. } => "UnknownCategory",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::MissingColumn(_) => "MissingColumn",
            Error::ManifestRow { source, .. } => source.kind(),
            Error::MalformedRow { .. } => "MalformedRow",
            Error::DuplicateSampleId { .. } => "DuplicateSampleId",
            Error::EmptyManifest => "EmptyManifest",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::UndecodableImage { .. } => "UndecodableImage",
            Error::ZeroSizeImage => "ZeroSizeImage",
            Error::InvalidChannels(_) => "InvalidChannels",
            Error::UnknownArch(_) => "UnknownArch",
            Error::WeightsUnavailable { .. } => "WeightsUnavailable",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::TargetOutOfRange { .. } => "TargetOutOfRange",
            Error::EmptyBatch => "EmptyBatch",
            Error::EmptyMatrix => "EmptyMatrix",
            Error::EmptyReportSet => "EmptyReportSet",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::EmptySplit(_) => "EmptySplit",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::TaxonomyMismatch { .. } => "TaxonomyMismatch",
            Error::CorruptArchive { .. } => "CorruptArchive",
            Error::ParseError { .. } => "ParseError",
            Error::UnknownKey(_) => "UnknownKey",
            Error::InvalidValue { .. } => "InvalidValue",
            Error::UnknownCommand(_) => "UnknownCommand",
            Error::Io { .. } => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
