use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("mass matrix E is not invertible (condition estimate {cond:e})")]
    NonInvertibleE { cond: f64 },

    #[error("poles {i} and {j} coincide (distance {distance:e}); semi-simple poles required")]
    RepeatedPole { i: usize, j: usize, distance: f64 },

    #[error("pole {re} + {im}i is not in the open left half-plane")]
    Unstable { re: f64, im: f64 },

    #[error("evaluation point {re} + {im}i coincides with a pole")]
    EvalAtPole { re: f64, im: f64 },

    #[error("model is not conjugate-closed (not a real system)")]
    NonRealModel,

    #[error("sum expected to be real has imaginary part {imag:e}")]
    NonRealSum { imag: f64 },

    #[error("squared norm evaluated to {value:e}")]
    NegativeNormSquared { value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("tangential direction {index} vanished")]
    DegenerateDirections { index: usize },

    #[error("objective evaluated to a non-finite value")]
    NonFiniteObjective,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("i/o: {0}")]
    Io(String),

    #[error("outer iteration {iteration}: {source}")]
    Outer {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_outer(self, iteration: usize) -> Self {
        Error::Outer {
            iteration,
            source: Box::new(self),
        }
    }
}
