//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small: need at least 3 nodes per axis, got {nx}x{ny}")]
    GridTooSmall { nx: usize, ny: usize },

    #[error("invalid grid spacing hx={hx}, hy={hy}: spacings must be positive and finite")]
    BadSpacing { hx: f64, hy: f64 },

    #[error("field has {got} values but the grid has {want} nodes")]
    FieldLength { got: usize, want: usize },

    #[error("operand grids do not match")]
    GridMismatch,

    #[error("non-finite value in `{field}` at node ({i}, {j}): {value}")]
    NonFinite {
        field: &'static str,
        i: usize,
        j: usize,
        value: f64,
    },

    #[error("matrix field must be symmetric here")]
    NonSymmetricMatrix,

    #[error("norm exponent must be >= 1 (or infinity), got {p}")]
    BadExponent { p: f64 },

    #[error("mask selects no nodes")]
    EmptyMask,

    #[error("parameter `{name}` = {value} violates the constraint: {constraint}")]
    BadParameter {
        name: &'static str,
        value: f64,
        constraint: String,
    },

    #[error(
        "conductivity eigenvalue {eig} below 1 - 1e-12 at node ({i}, {j}) with m = ({m1}, {m2})"
    )]
    EigenvalueBelowOne {
        i: usize,
        j: usize,
        m1: f64,
        m2: f64,
        eig: f64,
    },

    #[error(
        "conjugate gradient stalled after {iters} iterations: relative residual {residual:.3e}, \
         last residuals {history:?}"
    )]
    SolverStalled {
        iters: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("implicit conductance solve failed at step {step}: {source}")]
    ImplicitSolve {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "non-finite state in `{field}` at step {step} (t = {t}); try a smaller time step"
    )]
    NonFiniteState {
        field: &'static str,
        step: usize,
        t: f64,
    },

    #[error("time {t} lies outside the recorded trajectory [0, {t_final}]")]
    TimeOutsideTrajectory { t: f64, t_final: f64 },

    #[error(
        "ball of radius {radius} at ({x0}, {y0}) is not contained in the grid domain"
    )]
    BallOutsideDomain { x0: f64, y0: f64, radius: f64 },

    #[error("no grid nodes fall inside the ball of radius {radius} at ({x0}, {y0})")]
    EmptyBall { x0: f64, y0: f64, radius: f64 },

    #[error("fit needs at least {need} usable points, got {got}")]
    DegenerateFit { need: usize, got: usize },

    #[error("time t = {t} must be positive")]
    NonPositiveTime { t: f64 },

    #[error("forcing must be sampled at two or more times covering [0, t]; got {got} samples")]
    InsufficientTimeSamples { got: usize },

    #[error("{path}:{line}: {msg}")]
    Config {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("missing required configuration key `{key}` for mode `{mode}`")]
    MissingKey { key: &'static str, mode: String },

    #[error("snapshot file {path}: {msg}")]
    Snapshot { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
