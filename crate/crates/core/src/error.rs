use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("evaluation point is {distance_um:.3e} um from a current segment (guard is 1e-3 um)")]
    Singularity { distance_um: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown zone {0}")]
    UnknownZone(usize),

    #[error("unknown electrode `{0}`")]
    UnknownElectrode(String),

    #[error("crosstalk ratio undefined: addressed-ion drive projection is zero")]
    UndefinedRatio,

    #[error("carrier field projection is zero")]
    ZeroCarrier,

    #[error("detuning must be nonzero")]
    ZeroDetuning,

    #[error("insufficient calibration coverage: {0}")]
    Coverage(String),

    #[error("numerical underflow: {0}")]
    Underflow(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by bad input (files, arguments, coverage),
    /// false for numerical failures inside an otherwise valid computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Singularity { .. }
                | Error::UndefinedRatio
                | Error::ZeroCarrier
                | Error::Underflow(_)
        )
    }
}
