//! Path-space variational inference for coarse-graining stochastic dynamics.
//!
//! This crate simulates microscopic SDEs (general diffusions and Langevin
//! pairs), projects them through linear coarse-graining maps, and fits
//! optimal coarse drift parameters by minimizing the path-space relative
//! entropy rate — which, for linear drift families, is a weighted
//! force-matching least-squares problem. The same machinery covers the
//! finite-time (non-stationary) regime, discrete-scheme objectives for the
//! Euler and BBK kernels, and maximum-likelihood fits on coarse time series.
//!
//! Modules:
//!
//! - [`model`]: SDE and Langevin models, parametric drift families.
//! - [`integrate`]: Euler–Maruyama and BBK schemes, reproducible ensembles.
//! - [`cgmap`]: coarse-graining maps, right inverses, coarse coefficients,
//!   reconstructed drifts.
//! - [`metrics`]: relative entropy rate and finite-time estimators, discrete
//!   objectives, path likelihoods, CKP bounds.
//! - [`inference`]: force-matching and maximum-likelihood fits, descent,
//!   CG-map comparison.
//! - [`oracle`]: independent analytic/brute-force ground truth used by the
//!   validation suite.
//! - [`validate`]: the acceptance battery run by `pathcg validate` and the
//!   acceptance test target.

pub mod cgmap;
pub mod error;
pub mod inference;
pub mod integrate;
pub mod io;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod stats;
pub mod validate;

pub use error::{Error, Result};
pub use model::{DiffusionField, GibbsSpec, LangevinModel, ParametricDriftFamily, SdeModel};

pub use cgmap::{CgMap, CgMapKind, FrictionOption, PhaseCgMap};
pub use integrate::{BbkConvention, Dynamics, Ensemble, RngSpec, Scheme, Trajectory};
pub use metrics::{EstimatorMode, RerReport, WeightedNorm};
