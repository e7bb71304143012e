use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("site index {site} out of range 1..={n_sites}")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("time {t} outside [0, {total}]")]
    TimeOutOfRange { t: f64, total: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("eigensolver did not converge")]
    Eigensolver,

    #[error("pulse switch at t={switch} falls inside the integration step [{start}, {end}]")]
    MisalignedStep { switch: f64, start: f64, end: f64 },

    #[error("total time / tau = {ratio} is not an integer segment count")]
    NonIntegerSegments { ratio: f64 },

    #[error("corrupted density matrix: target population {0}")]
    CorruptedState(f64),

    #[error("integration diverged at t={0}")]
    Diverged(f64),

    #[error("calibration failed: best fidelity {best} at h_m={h_m} is below target {target}")]
    CalibrationFailed { best: f64, h_m: f64, target: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable snake_case name for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::SiteOutOfRange { .. } => "site_out_of_range",
            Error::TimeOutOfRange { .. } => "time_out_of_range",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Eigensolver => "eigensolver",
            Error::MisalignedStep { .. } => "misaligned_step",
            Error::NonIntegerSegments { .. } => "non_integer_segments",
            Error::CorruptedState(_) => "corrupted_state",
            Error::Diverged(_) => "diverged",
            Error::CalibrationFailed { .. } => "calibration_failed",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Toml(_) => "toml",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
