use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("operator `{name}` is not Hermitian (max |A - A^H| = {deviation:e})")]
    NotHermitian { name: String, deviation: f64 },

    #[error("state is not normalized (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("state dimension must be at least 2, got {0}")]
    StateTooSmall(usize),

    #[error("expectation value has imaginary residual {0:e}")]
    ImaginaryResidual(f64),

    #[error("non-finite coefficient for term {term} (`{kind}` at a = {argument})")]
    NonFiniteCoefficient {
        term: usize,
        kind: String,
        argument: f64,
    },

    #[error("parameter index {index} out of range (model has {count} parameters)")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("eigendecomposition failed to converge")]
    EigenFailure,

    #[error("time grid is not uniform (step {step} differs by {deviation:e})")]
    NonUniformGrid { step: usize, deviation: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("control cannot influence the observable at step {step} (denominator {denominator:e})")]
    SingularControl { step: usize, denominator: f64 },

    #[error("no bracket for level {level} at sample {sample}: attainable range [{min}, {max}]")]
    NoBracket {
        sample: usize,
        level: f64,
        min: f64,
        max: f64,
    },

    #[error("point ({0}, {1}) lies outside the mesh")]
    OutOfHull(f64, f64),

    #[error("root finder did not converge: {0}")]
    RootNotFound(String),

    #[error("mesh node ({i}, {j}) failed: {source}")]
    MeshNode {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
