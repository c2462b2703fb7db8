use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("person {person:?} belongs to both {first:?} and {second:?}")]
    PersonFamilyConflict {
        person: String,
        first: String,
        second: String,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("{0} unexpected bytes after payload")]
    TrailingBytes(u64),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("row {row} out of range for matrix with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector cannot be normalized")]
    ZeroVector,
    #[error("unknown image id {0:?}")]
    UnknownImageId(String),
    #[error("unknown kin type {0:?}")]
    UnknownKinType(String),
    #[error("need at least 2 families with detected images, found {0}")]
    NotEnoughFamilies(usize),
    #[error("no family has 2 or more persons with detected images")]
    NoEligibleAnchor,
    #[error("scores must contain both labels")]
    DegenerateLabels,
    #[error("empty score list")]
    EmptyScores,
    #[error("non-finite score")]
    NonFiniteScore,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("index {index} out of range (total {total})")]
    IndexOutOfRange { index: usize, total: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("probe {0:?} has no images")]
    EmptyProbe(String),
    #[error("no relevant gallery entry for probe {0:?}")]
    NoRelevant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable variant name, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::Parse { .. } => "ParseError",
            Error::DuplicateId(_) => "DuplicateId",
            Error::PersonFamilyConflict { .. } => "PersonFamilyConflict",
            Error::BadMagic { .. } => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::TrailingBytes(_) => "TrailingBytes",
            Error::InvalidHeader(_) => "InvalidHeader",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::RowOutOfRange { .. } => "RowOutOfRange",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ZeroVector => "ZeroVector",
            Error::UnknownImageId(_) => "UnknownImageId",
            Error::UnknownKinType(_) => "UnknownKinType",
            Error::NotEnoughFamilies(_) => "NotEnoughFamilies",
            Error::NoEligibleAnchor => "NoEligibleAnchor",
            Error::DegenerateLabels => "DegenerateLabels",
            Error::EmptyScores => "EmptyScores",
            Error::NonFiniteScore => "NonFiniteScore",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::EmptyProbe(_) => "EmptyProbe",
            Error::NoRelevant(_) => "NoRelevant",
        }
    }
}
