use thiserror::Error;

/// Errors raised by the analysis, allocation and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no samples")]
    NoSamples,

    #[error("malformed trace row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("queue is not ergodic: {0}")]
    NotErgodic(String),

    #[error("root count mismatch: expected {expected} roots inside the unit disk, found {found}")]
    RootCountMismatch { expected: usize, found: usize },

    #[error("root on the unit circle at {re:+.6}{im:+.6}i; perturb the arrival distribution")]
    RootOnUnitCircle { re: f64, im: f64 },

    #[error("degenerate boundary system: {0}")]
    DegenerateBoundary(String),

    #[error("buffer must exceed service batch (B = {buffer}, S = {service})")]
    BufferTooSmallForService { buffer: usize, service: usize },

    #[error("chain not irreducible: {0}")]
    NotIrreducible(String),

    #[error("no arrivals; drop rate undefined")]
    NoArrivals,

    #[error(
        "constraints unsatisfiable (closest: S = {best_service}, outage = {best_outage:.6}, drop = {best_drop:.6})"
    )]
    Unsatisfiable {
        best_service: usize,
        best_outage: f64,
        best_drop: f64,
    },

    #[error("rate unsustainable: {0}")]
    RateUnsustainable(String),

    #[error("buffer too small: {packets} packets")]
    BufferTooSmall { packets: usize },

    #[error("user in outage frame (index {0} has zero rate)")]
    UserInOutage(usize),

    #[error("grid overflow: {requested} bins requested; use at most {suggested}")]
    GridOverflow { requested: usize, suggested: usize },

    #[error("expectation not computable: {0}")]
    NotComputable(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable tag, used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::NoSamples => "no_samples",
            Error::MalformedRow { .. } => "malformed_row",
            Error::NotErgodic(_) => "not_ergodic",
            Error::RootCountMismatch { .. } => "root_count_mismatch",
            Error::RootOnUnitCircle { .. } => "root_on_unit_circle",
            Error::DegenerateBoundary(_) => "degenerate_boundary",
            Error::BufferTooSmallForService { .. } => "buffer_not_above_service",
            Error::NotIrreducible(_) => "not_irreducible",
            Error::NoArrivals => "no_arrivals",
            Error::Unsatisfiable { .. } => "unsatisfiable",
            Error::RateUnsustainable(_) => "rate_unsustainable",
            Error::BufferTooSmall { .. } => "buffer_too_small",
            Error::UserInOutage(_) => "user_in_outage",
            Error::GridOverflow { .. } => "grid_overflow",
            Error::NotComputable(_) => "not_computable",
        }
    }
}
