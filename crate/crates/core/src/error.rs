use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("particle {index} at ({x}, {y}) is outside the grid interior")]
    OutOfDomain { index: usize, x: f64, y: f64 },

    #[error("non-finite value in {what} at {location}")]
    NonFinite { what: String, location: String },

    #[error("conserved weight of particle {index} overflows at t = {t}")]
    Overflow { index: usize, t: f64 },

    #[error("regrid needs extent {required} > configured maximum {max}; increase grid.n or grid.max_extent")]
    RegridLimit { required: f64, max: f64 },

    #[error("particle left the grid again after regridding at step {step}: {source}")]
    RegridFailed { step: u64, source: Box<Error> },

    #[error("only {resolved:.1}% of particles resolved on the asymptotic grid (need 90%); enlarge the u-grid")]
    Unresolved { resolved: f64 },

    #[error("not enough samples: {got} usable, need {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
