use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The chain has a level that can never be left, so absorption is not certain.
    #[error("chain is not absorbing: level {level} has zero advance probability")]
    NonAbsorbing { level: u32 },

    /// No cluster size, not even a singleton, has a positive rate denominator.
    #[error("infeasible network: no cluster size has a positive interference denominator")]
    InfeasibleNetwork,

    /// A placement or protocol configuration cannot be realized.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A protocol step was requested after the grand coalition formed.
    #[error("negotiation cluster already absorbed into the grand coalition")]
    AlreadyAbsorbed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
