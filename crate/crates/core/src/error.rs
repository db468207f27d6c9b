use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input violated its domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Root bracketing or iteration failed to converge.
    #[error("root finding failed: {0}")]
    RootFinding(String),

    /// The per-cluster information matrix is numerically singular.
    #[error("information matrix is singular (condition number {condition:.3e})")]
    SingularInformation { condition: f64 },

    /// The posterior sampler could not start from a finite log density.
    #[error("sampler initialization failed: {0}")]
    SamplerInit(String),

    /// A simulation repetition failed twice.
    #[error("repetition {repetition} failed: {reason}")]
    Repetition { repetition: usize, reason: String },

    /// No cluster count in the searched range reaches the target power.
    #[error("target unreachable in [{c_min}, {c_max}]; max power {max_power:.4} at c = {argmax}")]
    TargetUnreachable {
        c_min: u32,
        c_max: u32,
        max_power: f64,
        argmax: u32,
    },

    /// The decision threshold cannot bound the null rejection rate.
    #[error("no threshold on the grid bounds the null rejection rate by {alpha} (rate at 1.0: {rate_at_one})")]
    Calibration { alpha: f64, rate_at_one: f64 },

    /// Configuration problem; `key` names the offending entry.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
