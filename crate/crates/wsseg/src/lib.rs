//! Saliency-guided label pipeline for weakly supervised semantic segmentation.
//!
//! Segmentation models trained from image-level tags need pixel-level pseudo
//! labels. This crate implements the label side of that pipeline:
//!
//! - [`grid`]: dense 2-D/3-D grids, bilinear resampling, mask algebra.
//! - [`cam`]: class activation map normalization, global-average-pooled
//!   class scores, and the multi-label classification loss with its
//!   analytic gradient.
//! - [`relation`]: saliency-guided prototypes, the class-agnostic and
//!   class-specific distance losses, the combined objective, and analytic
//!   gradients with respect to the attention map (verified against central
//!   finite differences by [`gradcheck`]).
//! - [`pseudo`]: initial pseudo-label generation from CAMs plus saliency,
//!   and the three-rule object-guided label refinement.
//! - [`eval`]: confusion-matrix accumulation and mean IoU.
//! - [`io`]: bit-exact tensor files, 8-bit PNG label/saliency maps, and
//!   JSON-lines tag files.
//! - [`synth`]: a deterministic synthetic dataset generator for
//!   desk-scale verification of the whole pipeline.
//! - [`pipeline`]: batch drivers over manifest-described file trees,
//!   exposed by the `wsseg` binary.
//!
//! Everything operates on plain in-memory grids; no ML framework is
//! involved. All arithmetic is 64-bit internally, which gives the
//! finite-difference gradient checks the headroom they need.

use std::path::PathBuf;

pub mod cam;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod grid;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod pseudo;
pub mod relation;
pub mod synth;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violated an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A masked operation was asked to average over an (effectively) empty
    /// mask. Callers typically respond by skipping the relation losses for
    /// the offending image.
    #[error("empty mask support")]
    EmptySupport,

    /// No class had a nonzero IoU denominator, so the mean is undefined.
    #[error("undefined metric: no class was observed in either prediction or ground truth")]
    UndefinedMetric,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A tensor file failed to decode. `offset` is the byte position of the
    /// first violation.
    #[error("{path}: invalid tensor file at byte {offset}: {reason}")]
    TensorFormat {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {reason}")]
    ImageFormat { path: PathBuf, reason: String },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    /// A configuration or specification document failed validation. All
    /// offending fields are reported at once.
    #[error("invalid {context}: {}", problems.join("; "))]
    Validation {
        context: String,
        problems: Vec<String>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
