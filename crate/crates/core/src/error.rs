use thiserror::Error;

/// Library-wide error type.
///
/// Variants are grouped by failure class so the CLI can map them onto
/// distinct exit codes (config -> 2, numeric/model -> 3, io -> 4).
#[derive(Error, Debug)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("quadrature failed to reach tolerance: requested {requested:e}, achieved {achieved:e} on [{a}, {b}]")]
    Quadrature {
        requested: f64,
        achieved: f64,
        a: f64,
        b: f64,
    },

    #[error("tail integral from {from} does not converge geometrically (last chunk ratio {ratio:.3} >= 0.9); refusing to extrapolate")]
    NonConvergentTail { from: f64, ratio: f64 },

    #[error("rejection sampler acceptance rate {rate:e} in ring {ring} fell below the configured floor {floor:e}; a tighter proposal is needed")]
    RejectionFloor { ring: usize, rate: f64, floor: f64 },

    #[error("moment integral diverges: {0}")]
    DivergentMoment(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(
        "particle {particle} became non-finite at t={time} (step {step}, {events_in_step} jump events in step; first events: {trace})"
    )]
    NonFinitePosition {
        particle: usize,
        time: f64,
        step: u64,
        events_in_step: usize,
        trace: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
