use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The CLI maps these onto its documented exit codes through [`Error::exit_code`].
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("singularity: {0}")]
    Singularity(String),
    #[error("degenerate metric {what}: condition number {cond:.3e}")]
    DegenerateMetric { what: String, cond: f64 },
    #[error("multiplier vanishes at {0:?}")]
    MultiplierVanishes(Vec<f64>),
    #[error("incompatible: {msg} at {point:?}")]
    Incompatible { msg: String, point: Vec<f64> },
    #[error("ambiguous ansatz: normal equations have rank {rank} < {cols}")]
    AmbiguousAnsatz { rank: usize, cols: usize },
    #[error("reduction error: {0}")]
    Reduction(String),
    #[error("not conditionally variational: {0}")]
    NotConditionallyVariational(String),
    #[error("integration singularity at t = {t}: {msg}")]
    Integration { t: f64, msg: String },
    #[error("invalid system definition: {0}")]
    InvalidSystem(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code used by the `nhk` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Singularity(_)
            | Error::DegenerateMetric { .. }
            | Error::MultiplierVanishes(_)
            | Error::Unbound(_) => 3,
            Error::Incompatible { .. } => 4,
            Error::Integration { .. } => 5,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
