//! Library error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("solver stalled after {iterations} iterations, relative residual {residual:.3e}")]
    Solver { iterations: usize, residual: f64 },

    #[error("omega^2 = {omega2:.6e} lies within the pole guard of {pole:.6e}")]
    Pole { omega2: f64, pole: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("memory guard: {count} voxels exceeds the cap of {cap}")]
    MemoryGuard { count: usize, cap: usize },

    #[error("no resonance in band: {0}")]
    NoResonance(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("parse error (schema {version}): {msg}")]
    Parse { version: u32, msg: String },

    #[error("proximity error: {0}")]
    Proximity(String),

    #[error("ill-conditioned mode match at l = {0}")]
    ModeMatch(usize),

    #[error("singular system, reciprocal condition estimate {rcond:.3e}")]
    Singular { rcond: f64 },

    #[error("degenerate field: {0}")]
    Degenerate(String),

    #[error("identifiability: {0}")]
    Identifiability(String),
}

pub type Result<T> = std::result::Result<T, Error>;
