use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no schemas")]
    NoSchemas,
    #[error("invalid entity type name {0:?}")]
    InvalidTypeName(String),
    #[error("entity type {0} is not in the tag space")]
    UnknownType(String),
    #[error("line {line}: malformed tag {tag:?}")]
    MalformedTag { line: usize, tag: String },
    #[error("line {line}: {tag} does not continue a mention")]
    DanglingInside { line: usize, tag: String },
    #[error("line {line}: expected at least a token and a tag column")]
    MissingColumns { line: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("empty lattice: every label sequence has zero potential")]
    EmptyLattice,
    #[error("gold sequence has zero potential (not BIO-well-formed?)")]
    ImpossibleGold,
    #[error("label index {0} out of range")]
    LabelOutOfRange(usize),
    #[error("enumeration of {0} sequences exceeds the cap")]
    EnumerationCap(f64),
    #[error("{parts} parts requested but the corpus has only {types} entity types")]
    TooManyParts { parts: usize, types: usize },
    #[error("undefined overlap: empty mention set")]
    UndefinedOverlap,
    #[error("requested {requested} sentences but only {available} are available")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("divergence at epoch {epoch}, batch {batch}: {what}")]
    Divergence { epoch: usize, batch: usize, what: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
}
