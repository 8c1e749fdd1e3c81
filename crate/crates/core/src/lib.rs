//! Contour-assisted scene text detection.
//!
//! The crate turns quadrilateral word annotations into dense training targets
//! (an instance contour band, a shrunk score map and per-pixel rotated-box
//! geometry), trains an encoder-decoder detector in one of five wirings that
//! differ in how a contour-segmentation task is attached, decodes the dense
//! outputs into scored quadrilaterals and evaluates them.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! bottom of this file fix the precision used by the command-line tools.

// Negated comparisons (`!(x > 0)`) are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod datasets;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod losses;
pub mod model;
pub mod nn;
pub mod postprocess;
pub mod scalar;
pub mod targets;
pub mod training;

use thiserror::Error;

pub use geometry::GeometryError;
pub use scalar::Scalar;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what}")]
    NonFinite { what: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("data: {0}")]
    Data(String),
}

impl Error {
    /// Short category used by the command-line frontend.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Geometry(_) | Error::Parse { .. } | Error::Data(_) => "data",
            Error::Io { .. } | Error::Image { .. } => "io",
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "numeric",
            Error::Checkpoint(_) => "checkpoint",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Precision used for network weights by the command-line tools.
pub type Real = f32;
/// Precision used for geometry, targets and evaluation.
pub type Coord = f64;
pub type Quad = geometry::QuadBox<Coord>;
pub type RBox = geometry::RotatedBox<Coord>;
pub type Det = geometry::Detection<Coord>;
pub type Sample = targets::AnnotatedImage<Coord>;
pub type Targets = targets::TargetMaps<Coord>;
pub type Net = model::Network<Real>;
