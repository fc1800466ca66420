use thiserror::Error;

#[derive(Debug, Error)]
pub enum MuskatError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),

    #[error("degenerate diffeomorphism: min J = {min_j:.6e} <= j_min = {j_min}")]
    DiffeoDegenerate { min_j: f64, j_min: f64 },

    #[error("pressure system is singular or indefinite: {0}")]
    NonSpdSystem(String),

    #[error("iterative solver stalled at relative residual {residual:.3e} after {iterations} iterations")]
    SolverDivergence { residual: f64, iterations: usize },

    #[error("fixed-point iteration does not contract (update ratio {ratio:.3}, iteration {iteration})")]
    NoContraction { ratio: f64, iteration: usize },

    #[error("interface too close to permeability curve at t = {t}: min gap {min_gap:.6e} <= {gap_tol}")]
    GapViolation { t: f64, min_gap: f64, gap_tol: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MuskatError> = std::result::Result<T, E>;
