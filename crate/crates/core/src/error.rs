use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("byte index {0} out of range 0..=15")]
    ByteIndex(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("feature index {index} out of bounds for trace length {len}")]
    FeatureIndex { index: usize, len: usize },
    #[error("duplicate feature index {0}")]
    DuplicateFeature(usize),
    #[error("fold count {k} out of range for {n} items")]
    FoldCount { k: usize, n: usize },
    #[error("k = {k} out of range 1..={len}")]
    TopK { k: usize, len: usize },
    #[error("labels are required but absent")]
    MissingLabels,
    #[error("label {0} out of range")]
    Label(usize),
    #[error("label mismatch at trace {0}")]
    LabelMismatch(usize),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("trace length {len} too short for {blocks} pooling blocks")]
    TraceTooShort { len: usize, blocks: usize },
    #[error("S-box table checksum mismatch")]
    SboxChecksum,
}
