use thiserror::Error;

/// Errors raised by model construction, estimation and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// Model primitives are malformed (non-finite constants, bad penalty, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A builder configuration cannot produce a model.
    #[error("build error: {0}")]
    Build(String),

    /// Work would exceed a configured enumeration or size budget.
    #[error("enumeration budget exceeded: {0}")]
    Budget(String),

    #[error("no admissible policy: every policy has a non-finite empirical lower envelope")]
    NoAdmissiblePolicy,

    #[error("delta below procedure threshold: delta = {delta}, required >= a * delta_star = {required} (delta_star = {delta_star})")]
    DeltaBelowThreshold {
        delta: f64,
        delta_star: f64,
        required: f64,
    },

    /// The sharp transform has no solution inside the schedule.
    #[error("step bound too large for the schedule ({0}); increase n or widen schedule")]
    Unbounded(String),

    /// A replication of a Monte Carlo experiment failed.
    #[error("replication with seed {seed} failed: {source}")]
    Replication {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 3 for budget refusals, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Budget(_) => 3,
            Error::Replication { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    /// Prefixes the message with context, keeping the variant.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            Error::Contract(m) => Error::Contract(format!("{ctx}: {m}")),
            Error::InvalidModel(m) => Error::InvalidModel(format!("{ctx}: {m}")),
            Error::Build(m) => Error::Build(format!("{ctx}: {m}")),
            Error::Budget(m) => Error::Budget(format!("{ctx}: {m}")),
            other => other,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
