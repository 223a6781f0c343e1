use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of a model function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A region state transition was requested that its current status forbids.
    #[error("state error: {0}")]
    State(String),

    #[error("fit error: {0}")]
    Fit(String),

    /// Bad configuration value, reported with the dotted key path.
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// A simulation invariant broke at a specific slot and region.
    #[error("invariant violated at slot {slot}, region {region}: {reason}")]
    Invariant {
        slot: u64,
        region: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
