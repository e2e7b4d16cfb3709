use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid boundary subset: {0}")]
    InvalidBoundarySpec(String),
    #[error("fractional order {value} at node {node} lies outside (0, 1)")]
    InvalidOrder { node: usize, value: f64 },
    #[error("density {value} at node {node} is not positive")]
    InvalidDensity { node: usize, value: f64 },
    #[error("potential {value} at node {node} is negative")]
    InvalidPotential { node: usize, value: f64 },
    #[error("coefficient expression error: {0}")]
    Expression(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("boundary lifting failed: {0}")]
    LiftingFailure(String),
    #[error("shift p = {re} + {im}i lies on the branch cut (-inf, 0]")]
    BranchCutError { re: f64, im: f64 },
    #[error("linear solve failed (relative residual {residual:e})")]
    SolveFailure { residual: f64 },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("resolvent estimate unbounded: sin(alpha * beta) vanishes at beta = {beta}")]
    UnboundedEstimate { beta: f64 },
    #[error("norm estimate did not converge after {iterations} iterations")]
    EstimateFailure { iterations: usize },
    #[error("contour error: {0}")]
    ContourError(String),
    #[error("imaginary residual {imag:e} exceeds tolerance {tol:e}")]
    RealnessViolation { imag: f64, tol: f64 },
    #[error("Mittag-Leffler evaluation failed: {0}")]
    EvaluationError(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("step budget exceeded: {steps} steps requested, cap is {cap}")]
    BudgetError { steps: usize, cap: usize },
    #[error("invalid boundary drive: {0}")]
    InvalidDrive(String),
    #[error("Laplace horizon too short: truncation estimate {estimate:e} exceeds {tol:e}")]
    HorizonError { estimate: f64, tol: f64 },
    #[error("potential fit failed: {0}")]
    FitFailure(String),
    #[error("pointwise extraction failed at node {node}: {reason}")]
    ExtractionError { node: usize, reason: String },
    #[error("analytic extension failed: interpolation residual {residual:e} exceeds {tol:e}")]
    AnalyticExtensionError { residual: f64, tol: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
