use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported QAM order {0} (expected 4, 16, 64, 256 or 1024)")]
    UnsupportedOrder(usize),

    #[error("infeasible shaping target {target:.6} bit: achievable entropy is ({min}, {max}] bit")]
    InfeasibleShaping { target: f64, min: f64, max: f64 },

    #[error("pilot ratio {ratio} is not an exact unit fraction; use \"1/{suggested_period}\"")]
    PilotRatioNotUnitFraction { ratio: f64, suggested_period: usize },

    #[error("invalid frame layout: {0}")]
    InvalidLayout(String),

    #[error("phase comparator reference symbol is zero")]
    ZeroReference,

    #[error("length mismatch: {what} has {got} symbols, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("noise variance must be positive, got {0}")]
    NonPositiveNoiseVar(f64),

    #[error("no metric-bearing symbols")]
    EmptyPayload,

    #[error("run configurations differ beyond the update policy: {0}")]
    ConfigMismatch(String),

    #[error("gain grid is empty")]
    EmptyGainGrid,

    #[error(
        "NGMI target {target} not bracketed on [{lo_db}, {hi_db}] dB: NGMI is {ngmi_lo:.6} at the \
         low end and {ngmi_hi:.6} at the high end"
    )]
    BracketFailure {
        target: f64,
        lo_db: f64,
        hi_db: f64,
        ngmi_lo: f64,
        ngmi_hi: f64,
    },

    #[error("NGMI is not monotone in SNR: {ngmi_lo:.6} at {snr_lo_db} dB but {ngmi_hi:.6} at {snr_hi_db} dB")]
    NonMonotone {
        snr_lo_db: f64,
        ngmi_lo: f64,
        snr_hi_db: f64,
        ngmi_hi: f64,
    },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedOrder(_) => "unsupported_order",
            Error::InfeasibleShaping { .. } => "infeasible_shaping",
            Error::PilotRatioNotUnitFraction { .. } => "pilot_ratio",
            Error::InvalidLayout(_) => "invalid_layout",
            Error::ZeroReference => "zero_reference",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::NonPositiveNoiseVar(_) => "noise_variance",
            Error::EmptyPayload => "empty_payload",
            Error::ConfigMismatch(_) => "config_mismatch",
            Error::EmptyGainGrid => "empty_gain_grid",
            Error::BracketFailure { .. } => "bracket_failure",
            Error::NonMonotone { .. } => "non_monotone",
            Error::Config { .. } => "config",
            Error::Json(_) => "json",
            Error::Io(_) | Error::File { .. } => "io",
        }
    }

    /// Whether the error stems from the user's configuration rather than
    /// from running it.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::PilotRatioNotUnitFraction { .. }
                | Error::UnsupportedOrder(_)
                | Error::InfeasibleShaping { .. }
                | Error::InvalidLayout(_)
        )
    }

    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }
}
