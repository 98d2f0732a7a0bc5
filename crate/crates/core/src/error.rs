//! Error type shared by the whole crate.

use thiserror::Error;

/// Errors produced by model construction, simulation and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is rank deficient (singular values: {singular_values:?})")]
    RankDeficient { singular_values: Vec<f64> },

    #[error("matrix not positive definite in {context} (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { context: &'static str, min_eig: f64 },

    #[error("singular matrix in {context}")]
    Singular { context: &'static str },

    #[error("non-finite state at step {step} (replica {replica}): simulation blew up")]
    BlowUp { step: usize, replica: u32 },

    #[error("non-finite value produced by {context}")]
    NonFinite { context: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coarse diffusion is state dependent: max deviation {deviation:.3e} exceeds tol {tol:.3e}")]
    StateDependentCgDiffusion { deviation: f64, tol: f64 },

    #[error(
        "friction transform inconsistent: residual {residual:.3e} exceeds tol {tol:.3e} \
         (the coarse map does not transport the microscopic friction)"
    )]
    FrictionInconsistent { residual: f64, tol: f64 },

    #[error("normal matrix ill-conditioned (cond {cond:.3e} > {limit:.3e}); near-dependent basis pairs: {pairs:?}")]
    IllConditioned {
        cond: f64,
        limit: f64,
        pairs: Vec<(usize, usize)>,
    },

    #[error("zero denominator in {context}")]
    ZeroDenominator { context: &'static str },

    #[error("descent did not converge after {iterations} iterations (last gradient norm {grad_norm:.3e})")]
    MaxIterations { iterations: usize, grad_norm: f64 },

    #[error("quadrature refinement did not converge (error estimate {err:.3e})")]
    UnconvergedQuadrature { err: f64 },

    #[error("unstable drift matrix: eigenvalue with real part {real_part:.3e}")]
    UnstableDrift { real_part: f64 },

    #[error("empty input in {context}")]
    EmptyInput { context: &'static str },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
