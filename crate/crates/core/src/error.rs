use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("score value {0} outside [0, 1]")]
    RhoOutOfRange(f64),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("oracle score needs a latent integration budget when latent covariates are present")]
    MissingLatentBudget,

    #[error("outcomes can only be sampled from post-intervention (t = 1) states")]
    PreInterventionState,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("length mismatch: {states} states but {outcomes} outcomes")]
    LengthMismatch { states: usize, outcomes: usize },

    #[error("threshold cell `{0}` contains no rows")]
    EmptyCell(&'static str),

    #[error("too few rows for fit: {rows} rows, {coefficients} coefficients")]
    TooFewRows { rows: usize, coefficients: usize },

    #[error("logistic fit diverged (coefficient magnitude {0:.1}); data appear separable")]
    SeparationDetected(f64),

    #[error("holdout fraction {0} must lie strictly between 0 and 1")]
    InvalidHoldoutFraction(f64),

    #[error("h(z) - z has no sign change on [0, 1] (h(0) = {h0}, h(1) = {h1})")]
    NoSignChange { h0: f64, h1: f64 },

    #[error("inverse of the mechanism at r = {r} lies outside bracket [{lo}, {hi}]")]
    BracketFailure { r: f64, lo: f64, hi: f64 },

    #[error("no score value in [0, 1] leaves the reference covariate unchanged")]
    NoEquilibrium,

    #[error("identity intervention has no equivocal risk")]
    IdentityIntervention,

    #[error("no feasible intervention parameter under budget {0}")]
    NoFeasiblePoint(f64),

    #[error("unknown reproduction `{0}`")]
    UnknownReproduction(String),

    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
