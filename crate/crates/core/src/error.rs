use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Enumeration would exceed the configured member cap.
    #[error("enumeration exceeds the cap of {cap} indices (cutoff {cutoff})")]
    Resource { cap: usize, cutoff: f64 },

    /// No water-filling solution satisfies both constraints.
    #[error("infeasible extremal problem: {0}")]
    Infeasible(String),

    /// Plug-in variance estimate vanished.
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// A Monte Carlo replication failed.
    #[error("replication {index} failed: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
