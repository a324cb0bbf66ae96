//! Crate-wide error type.
//!
//! Variants mirror the failure modes of the design pipeline: bad geometry,
//! bad queries into interpolants, infeasible numerics, malformed files.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Generator or op parameters violate a documented precondition.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Unknown trajectory kind requested.
    #[error("unsupported trajectory kind: {0}")]
    UnsupportedKind(String),

    /// Curve has too few points, repeated points, or zero length.
    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),

    /// Curve parameter values must be strictly increasing.
    #[error("non-monotonic parameter values at index {0}")]
    NonMonotonicParams(usize),

    /// Interpolation knots must be strictly increasing.
    #[error("non-monotonic interpolation knots at index {0}")]
    NonMonotonicKnots(usize),

    /// Interpolation query outside the knot range (beyond the clamp guard).
    #[error("query {query} outside knot range [{lo}, {hi}]")]
    QueryOutOfRange { query: f64, lo: f64, hi: f64 },

    /// Array lengths disagree with what the operation requires.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Speeds must be strictly positive to integrate timing.
    #[error("nonpositive speed at sample {0}")]
    NonpositiveSpeed(usize),

    /// Raster step too coarse for the requested duration.
    #[error("raster too coarse: {0}")]
    RasterTooCoarse(String),

    /// Backward pass called with a cache inconsistent with its inputs.
    #[error("stale forward cache: {0}")]
    StaleCache(String),

    /// Band set contains no bands.
    #[error("empty band set")]
    EmptyBandSet,

    /// Waveform axes and transfer-function axes disagree.
    #[error("axis count mismatch: waveform has {waveform}, data has {data}")]
    AxisCountMismatch { waveform: usize, data: usize },

    /// No loss term has a positive weight.
    #[error("no active loss terms")]
    NoActiveTerms,

    /// Arc-length grid too coarse to honor the acceleration bound.
    #[error("arc grid infeasible for acceleration bound: {0}")]
    InfeasibleGrid(String),

    /// Gradient of the objective stopped being finite.
    #[error("non-finite gradient at iteration {iter}, component {component}")]
    NonFiniteGradient { iter: usize, component: usize },

    /// De-rating bisection cannot reach the requested target.
    #[error("de-rate target unreachable: {0}")]
    TargetUnreachable(String),

    /// File contents do not parse as the expected format.
    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}
