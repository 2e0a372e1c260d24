use thiserror::Error;

/// A configuration value outside its allowed range.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("winnowing window must be at least 2, got {0}")]
    Window(usize),
    #[error("q-gram width must be at least 1, got {0}")]
    Qgram(usize),
    #[error("bloom filter needs at least one bit and one hash function (m = {m}, k = {k})")]
    Bloom { m: u64, k: u32 },
    #[error("multi-section filter of {total_bits} bits cannot hold {sections} sections of 64+ bits")]
    Sections { total_bits: u64, sections: usize },
    #[error("target data reduction ratio must exceed 1, got {0}")]
    TargetDr(f64),
    #[error("rotation false-positive threshold must lie in (0, 1), got {0}")]
    RotationFp(f64),
    #[error("flow count must be between 1 and 2^24, got {0}")]
    FlowCount(usize),
    #[error("flow size distribution is degenerate: {0}")]
    Distribution(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DigestError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("packet timestamps went backwards: {previous} then {current}")]
    Ordering { previous: u64, current: u64 },
}
