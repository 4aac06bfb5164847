use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HwError {
    #[error("index {n} outside sequence domain [{lo}, {hi})")]
    Domain { n: usize, lo: usize, hi: usize },

    #[error("sequence value at n = {n} is {value}, expected a strictly positive real")]
    NotPositive { n: usize, value: String },

    #[error("sequence value at n = {n} is not finite")]
    NotFinite { n: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("oscillation detected at n = {n}: computed solution changes sign")]
    Oscillation { n: usize },

    #[error("horizon too small: {0}")]
    HorizonTooSmall(String),

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error("degenerate product tail: min |P| = {0:e}")]
    DegenerateProduct(f64),

    #[error("iteration does not contract (rate {0:.3})")]
    NoContraction(f64),

    #[error("fixed-point iteration did not converge in {0} steps")]
    MaxIterExceeded(usize),

    #[error("|beta_n| = {value:.3e} < 1/2 at n = {n}")]
    BetaTooSmall { n: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, HwError>;
