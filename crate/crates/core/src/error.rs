use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    Asymmetric(f64),

    #[error("matrix is rank deficient: required {required}, achieved {achieved}")]
    RankDeficient { required: usize, achieved: usize },

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.6e}): {context}")]
    NotHurwitz { abscissa: f64, context: String },

    #[error("eigenvalue iteration did not converge for a {order}x{order} matrix")]
    EigenNonConvergence { order: usize },

    #[error("graph: {0}")]
    Graph(String),

    #[error("internal model: {0}")]
    InternalModel(String),

    #[error("{0}")]
    Assumption(String),

    #[error("trajectory divergence at t = {t:.4}; check K0/noise")]
    Divergence { t: f64 },

    #[error("iterate diverged (|P| = {norm:.3e} at iteration {iteration})")]
    IterateDivergence { norm: f64, iteration: usize },

    #[error("no convergence after {iterations} iterations (last delta {last_delta:.3e})")]
    NoConvergence { iterations: usize, last_delta: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),
}

pub type Result<T> = std::result::Result<T, Error>;
