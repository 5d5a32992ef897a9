//! Crate-wide error type.
//!
//! Numerical code in this crate refuses to guess: out-of-domain arguments,
//! failed internal consistency checks, and resource-budget violations all
//! surface as structured errors rather than NaNs or silent truncation.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation
    /// (e.g. `|x| > 1` for a Legendre evaluation, an angle outside `[0, π]`,
    /// a tangent vector too long for the exponential chart).
    #[error("domain error: {0}")]
    Domain(String),

    /// Two independent evaluation routes for the same quantity disagreed
    /// beyond the advertised tolerance. This indicates a numerical breakdown
    /// and the offending value must not be used.
    #[error("consistency check failed: {0}")]
    Consistency(String),

    /// A requested computation exceeds a configured resource budget
    /// (grid memory, polynomial degree, replicate count).
    #[error("budget exceeded: {0}")]
    Budget(String),

    /// A discretization is too coarse to resolve the requested scale
    /// (e.g. a grid with too few cells across a feature of interest).
    #[error("insufficient resolution: {0}")]
    Resolution(String),

    /// A geometric precondition failed (region outside a chart window,
    /// localization point off its orthant, degenerate region).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A claimed analytic bound was violated empirically. Carries the worst
    /// observed ratio `value / bound`.
    #[error("bound violated: {what} (worst ratio {ratio})")]
    BoundViolation { what: String, ratio: f64 },

    /// The requested construction is provably impossible under the given
    /// parameters (e.g. a tiling whose tile size exceeds the curvature
    /// threshold for the requested overlap tolerance).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The input collection was empty where at least one element is required.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// An I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A persisted artifact failed to serialize or deserialize.
    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
