use alloc::string::String;

use crate::model::Orientation;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the projection epsilon")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {what} (index {index})")]
    NonFinite { what: &'static str, index: usize },

    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),

    #[error("half-sequence {index} has no target label")]
    MissingLabel { index: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite ELBO gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("empty list of predictive distributions")]
    EmptyList,

    #[error("cannot fuse {first:?} and {other:?} half-sequences")]
    MixedOrientation { first: Orientation, other: Orientation },

    #[error("need at least {need} posterior draws, got {got}")]
    TooFewDraws { got: usize, need: usize },

    #[error("template half-sequence {index} has no target label")]
    UnlabeledTemplate { index: usize },

    #[error("true latent effect vector is identically zero")]
    ZeroTrueEffect,

    #[error("half-sequence (c={character}, s={sequence}, {orientation:?}) is incomplete")]
    IncompleteHalfSequence {
        character: u32,
        sequence: u32,
        orientation: Orientation,
    },

    #[error("event {event} at sample {start} needs {window} samples but the recording has {len}")]
    WindowOverrun {
        event: usize,
        start: usize,
        window: usize,
        len: usize,
    },

    #[error("invalid band {low_hz}-{high_hz} Hz for sample rate {sample_rate} Hz")]
    InvalidBand {
        low_hz: f64,
        high_hz: f64,
        sample_rate: f64,
    },

    #[error("cannot resample from {source_hz} Hz to {target_hz} Hz")]
    InvalidRate { source_hz: f64, target_hz: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            context,
            expected: alloc::format!("{}x{}", expected.0, expected.1),
            found: alloc::format!("{}x{}", found.0, found.1),
        }
    }

    pub(crate) fn len(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected: alloc::format!("{expected}"),
            found: alloc::format!("{found}"),
        }
    }
}
