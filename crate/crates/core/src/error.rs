use thiserror::Error;

/// Every failure the solver can report. Variants carry the numbers needed to
/// act on them (admissible step sizes, condition estimates, ratio series).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("resource limit exceeded: {what} needs an estimated {estimate_bytes} bytes (cap {cap_bytes})")]
    Resource {
        what: String,
        estimate_bytes: u64,
        cap_bytes: u64,
    },

    #[error("degenerate cell {cell}: {reason}")]
    DegenerateCell { cell: usize, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("CFL condition violated: dt = {dt:e} exceeds admissible {admissible:e}")]
    Cfl { dt: f64, admissible: f64 },

    #[error("collision positivity bound violated: dt = {dt:e} exceeds admissible {admissible:e}")]
    Positivity { dt: f64, admissible: f64 },

    #[error("internal invariant failure: {0}")]
    Invariant(String),

    #[error("ill-conditioned restricted operator (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("fixed-point iteration did not converge in {iterations} iterations")]
    NonConvergence { iterations: usize, ratios: Vec<f64> },

    #[error("fit error: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
