use thiserror::Error;

pub type Result<T> = std::result::Result<T, ShapError>;

#[derive(Debug, Error)]
pub enum ShapError {
    /// Malformed configuration document.
    #[error("SchemaError: {0}")]
    Schema(String),

    #[error("DimensionError: {0}")]
    Dimension(String),

    #[error("DomainError: {0}")]
    Domain(String),

    /// Overflow or NaN while evaluating the value function.
    #[error("NonFiniteError: value function returned {value} at coalition {coalition}")]
    NonFinite { value: f64, coalition: String },

    /// Enumeration would exceed the fixed player cap of an exact method.
    #[error("SizeGuard: {method} supports at most {cap} players, got {q}")]
    SizeGuard {
        method: &'static str,
        cap: usize,
        q: usize,
    },

    #[error("SingularMatrix: pivot {pivot:e} below threshold {threshold:e}")]
    SingularMatrix { pivot: f64, threshold: f64 },

    #[error("NoConvergence: Jacobi iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error(
        "RankDeficient: design matrix has rank {rank} < {required} after {attempts} attempt(s)"
    )]
    RankDeficient {
        rank: usize,
        required: usize,
        attempts: usize,
    },

    #[error("PartitionError: {0}")]
    Partition(String),

    #[error("SpecError: {0}")]
    Spec(String),

    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
}

impl ShapError {
    /// Short error name, as printed on stderr by the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            ShapError::Schema(_) => "SchemaError",
            ShapError::Dimension(_) => "DimensionError",
            ShapError::Domain(_) => "DomainError",
            ShapError::NonFinite { .. } => "NonFiniteError",
            ShapError::SizeGuard { .. } => "SizeGuard",
            ShapError::SingularMatrix { .. } => "SingularMatrix",
            ShapError::NoConvergence { .. } => "NoConvergence",
            ShapError::RankDeficient { .. } => "RankDeficient",
            ShapError::Partition(_) => "PartitionError",
            ShapError::Spec(_) => "SpecError",
            ShapError::Io(_) => "IoError",
        }
    }

    /// Process exit code: 2 for input and guard errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ShapError::NonFinite { .. }
            | ShapError::SingularMatrix { .. }
            | ShapError::NoConvergence { .. }
            | ShapError::RankDeficient { .. } => 3,
            _ => 2,
        }
    }
}
