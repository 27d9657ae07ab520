use thiserror::Error;

#[derive(Debug, Error)]
pub enum IbcError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} is singular (smallest/largest singular value ratio {ratio:.3e})")]
    Singular { what: String, ratio: f64 },

    #[error("coefficient condition cannot be met: {0}")]
    Unsatisfiable(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("elimination breakdown on link {link}, boundary node {node}: {reason}")]
    Elimination {
        link: usize,
        node: usize,
        reason: String,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("linear solve did not converge (relative residual {residual:.3e})")]
    Solver { residual: f64 },

    #[error("weighted operator is not Hermitian (relative defect {defect:.3e})")]
    NonHermitian { defect: f64 },

    #[error("eigen iteration stagnated after {iterations} iterations (residual {residual:.3e})")]
    Stagnation { iterations: usize, residual: f64 },

    #[error("coefficient conditions fail on link {link} (max defect {defect:.3e})")]
    Conditions { link: usize, defect: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IbcError {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            IbcError::Config(_) => 3,
            IbcError::Conditions { .. } | IbcError::NonHermitian { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, IbcError>;
