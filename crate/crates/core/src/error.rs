use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("iteration matrix is not stable (spectral radius bound {radius})")]
    Unstable { radius: f64 },

    #[error("linear system is singular")]
    Singular,

    #[error("condition number is one (mu == L); certificates require mu < L")]
    KappaOne,

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("iterate diverged at step {k}")]
    Diverged { k: usize },

    #[error("invalid constraint set: {0}")]
    InvalidSet(String),

    #[error("argument out of domain: {0}")]
    OutOfDomain(String),

    #[error("parameters carry no P matrix certificate")]
    NoCertificate,

    #[error("budget infeasible: slack {slack} must be positive")]
    Infeasible { slack: f64 },

    #[error("noise covariance must satisfy Sigma < L^2 I (max eigenvalue {max_eigenvalue}, L^2 = {bound})")]
    NoiseTooLarge { max_eigenvalue: f64, bound: f64 },

    #[error("weighted norm degenerate: P(2,2) must be nonzero")]
    DegenerateWeight,

    #[error("degenerate matrix: {0}")]
    Degenerate(String),

    #[error("all {0} paths diverged")]
    AllDiverged(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
