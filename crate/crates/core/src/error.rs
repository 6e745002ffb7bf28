use thiserror::Error;

/// Which circuit block a candidate index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Timestep,
    Qff,
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Block::Timestep => f.write_str("timestep"),
            Block::Qff => f.write_str("qff"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dimension {0} exceeds the simulation cap of {max}", max = crate::linalg::MAX_DIM)]
    DimensionOverflow(usize),

    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("state norm {norm:e} collapsed below threshold")]
    NormCollapse { norm: f64 },

    #[error("state norm collapsed for {block} candidate {candidate}")]
    CandidateCollapse { block: Block, candidate: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("angle {value} outside [0, 1] at slot {slot}")]
    AngleOutOfRange { slot: usize, value: f64 },

    #[error("non-finite gradient in parameter group {group}")]
    NonFiniteGradient { group: String },

    #[error("scale guard: {0}")]
    ScaleGuard(String),

    #[error("bad magic bytes in embedding file")]
    BadMagic,

    #[error("unsupported embedding file version {0}")]
    UnsupportedVersion(u32),

    #[error("embedding file truncated: needed {needed} bytes, found {found}")]
    TruncatedFile { needed: usize, found: usize },

    #[error("non-finite feature value in sample {sample}")]
    NonFiniteValue { sample: usize },

    #[error("label {label} out of range for {n_classes} classes in sample {sample}")]
    LabelOutOfRange {
        sample: usize,
        label: usize,
        n_classes: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
