use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate foliation: {0}")]
    Degenerate(String),
    #[error("singularity search incomplete: found {found} of {expected} points (max residual {max_residual:.3e})")]
    IncompleteSingularities {
        found: usize,
        expected: usize,
        max_residual: f64,
    },
    #[error("non-hyperbolic singularity at {0}")]
    NonHyperbolic(String),
    #[error("integrator step underflow at s = {s:.6} (|zeta| = {zeta_abs:.3e})")]
    StepUnderflow { s: f64, zeta_abs: f64 },
    #[error("point within {0:.1e} of a singularity")]
    NearSingularity(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("segment leaves the bidisc")]
    SegmentExitsBidisc,
    #[error("stencil leaves the domain")]
    StencilOutside,
    #[error("degenerate normal projection (|n'| = {0:.3e})")]
    DegenerateProjection(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepUnderflow { .. }
                | Error::NearSingularity(_)
                | Error::NonFinite(_)
                | Error::DegenerateProjection(_)
                | Error::SegmentExitsBidisc
                | Error::StencilOutside
        )
    }
}
