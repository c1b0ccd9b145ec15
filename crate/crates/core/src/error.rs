use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at layer {layer}: {detail}")]
    Dimension { layer: usize, detail: String },

    #[error("non-finite value encountered: {0}")]
    NumericalOverflow(String),

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("layer {layer} has no unmasked non-zero synapse")]
    DegenerateLayer { layer: usize },

    #[error("extinct lineage: weighted layer {layer} lost every unit")]
    ExtinctLineage { layer: usize },

    #[error("calibration infeasible for layer {layer}: at most {achievable:.3} of {target:.3} expected survivors")]
    Infeasible {
        layer: usize,
        target: f64,
        achievable: f64,
    },

    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("truncated file {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: String,
        expected: u64,
        actual: u64,
    },

    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u8, found: u8 },

    #[error("checkpoint checksum mismatch")]
    Checksum,

    #[error("eigen-solver did not converge: {0}")]
    Convergence(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(layer: usize, detail: impl Into<String>) -> Self {
        Error::Dimension {
            layer,
            detail: detail.into(),
        }
    }

    /// Short stable identifier, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::NumericalOverflow(_) => "numerical_overflow",
            Error::Usage(_) => "usage",
            Error::DegenerateLayer { .. } => "degenerate_layer",
            Error::ExtinctLineage { .. } => "extinct_lineage",
            Error::Infeasible { .. } => "infeasible",
            Error::BadMagic { .. } => "bad_magic",
            Error::Truncated { .. } => "truncated",
            Error::CountMismatch { .. } => "count_mismatch",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Checksum => "checksum",
            Error::Convergence(_) => "convergence",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
