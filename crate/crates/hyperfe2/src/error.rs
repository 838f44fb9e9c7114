use thiserror::Error;

/// Errors produced by mesh construction, solvers and the reduction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("fiber placement saturated: achieved volume fraction {achieved:.4} of requested {requested:.4}")]
    PlacementSaturated { achieved: f64, requested: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("Newton did not converge in {iterations} iterations (last residual {residual:.3e}) at step {step}")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        step: usize,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("cubature selection degenerate: residual {residual:.3e} after {selected} points; consider more energy modes")]
    CubatureDegenerate { residual: f64, selected: usize },

    #[error("sampling failed: {failed} of {total} trajectories did not converge")]
    SamplingFailed { failed: usize, total: usize },

    #[error("curves are not sampled at identical load factors")]
    CurveAlignment,

    #[error("field error undefined: reference field has zero norm")]
    ZeroReference,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
