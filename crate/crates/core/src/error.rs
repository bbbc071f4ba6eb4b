use thiserror::Error;

/// Failures while evaluating an expression or its jet.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{op} is undefined at {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("jet order {order} exceeds the maximum {max}")]
    OrderTooHigh { order: usize, max: usize },
    #[error("point {point:?} lies outside the domain box")]
    OutsideDomain { point: Vec<f64> },
    #[error("arity mismatch: expected {expected} arguments, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("non-finite value produced")]
    NonFinite,
}

/// Failures of smooth-map construction and composition.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MapError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("image of {point:?} is {image:?}, outside the target domain")]
    Containment { point: Vec<f64>, image: Vec<f64> },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Failures of generalized-scalar operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("singular net: non-finite value at index {n}")]
    Singular { n: u64 },
    #[error("incompatible quotient structures: scales {left} and {right}")]
    ScaleMismatch { left: String, right: String },
    #[error("division by negligible representative")]
    Negligible,
    #[error("ordering is undefined for complex generalized numbers")]
    ComplexOrdering,
    #[error("window needs at least {min} sample indices, got {got}")]
    WindowTooSmall { min: usize, got: usize },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("polynomial needs a non-empty coefficient list of degree ≥ 1")]
    DegeneratePolynomial,
}

/// Failures of generalized-function operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GFuncError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("level {level}: image escapes the target domain at {point:?}")]
    Containment { level: u64, point: Vec<f64> },
    #[error("level {level}: {source}")]
    Level { level: u64, source: EvalError },
    #[error("level {level}: no sign change of f − r on the bracket")]
    NoSignChange { level: u64 },
    #[error("level {level}: point {point:?} escapes the domain")]
    PointOutsideDomain { level: u64, point: Vec<f64> },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Failures while building or embedding distributions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("support is not compact in the domain: {0}")]
    NotCompact(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("infeasible cutoff geometry: {0}")]
    Geometry(String),
    #[error("invalid mollifier parameters: {0}")]
    Mollifier(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    GFunc(#[from] GFuncError),
}

/// Failures of the piecewise / homotopy constructions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("continuity certificate failed: pieces disagree by {deviation:e} at {point:?}")]
    Discontinuous { point: Vec<f64>, deviation: f64 },
    #[error("point {point:?} is outside the cube")]
    OutsideCube { point: Vec<f64> },
    #[error("point {point:?} is not covered by any piece")]
    Uncovered { point: Vec<f64> },
    #[error("unsupported dimension {0}")]
    Dimension(usize),
    #[error("endpoint mismatch: |α(1) − β(0)| = {0:e}")]
    Endpoints(f64),
    #[error("incompatible boundary data: max deviation {0:e}")]
    Incompatible(f64),
    #[error("invalid piece: {0}")]
    InvalidPiece(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    GFunc(#[from] GFuncError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Crate-level error.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    GFunc(#[from] GFuncError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Parse(#[from] crate::parse::ParseError),
}
