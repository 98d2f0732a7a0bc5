//! Path-space information functionals.
//!
//! The central quantity is the relative entropy rate between the microscopic
//! path law and a reconstructed coarse path law with matched diffusion,
//!
//! ```text
//!   RER = E_mu[ 1/2 ‖b(X) − b̃(X; θ)‖²_Ξ ],      Ξ(x) = (σᵀσ)⁻¹ σᵀ,
//! ```
//!
//! its finite-time counterpart (a time integral along paths plus the initial
//! divergence), and the discrete-scheme objectives induced by the Euler and
//! BBK transition kernels. The CKP inequality and plain observable
//! discrepancies are provided as transferability checks and baselines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_chacha::ChaCha12Rng;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::integrate::{gaussian_increment, BbkConvention, Ensemble, Trajectory};
use crate::model::{DiffusionField, LangevinModel, MatrixFn, ParametricDriftFamily};
use crate::stats::{mean_and_batch_se, DEFAULT_BATCHES};

/// `Ξ = (σᵀσ)⁻¹ σᵀ`, the left inverse of σ used by every weighted norm.
pub fn xi_matrix(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = sigma.transpose() * sigma;
    let chol = gram
        .cholesky()
        .ok_or(Error::Singular { context: "xi_matrix (sigma^T sigma)" })?;
    Ok(chol.solve(&sigma.transpose()))
}

/// Phase-space variant for Langevin systems: `Ξ⁽²⁾ = (σᵀσ)⁻¹ σ₀ᵀ` with
/// `σ₀ = (0, σ)ᵀ`, which applies Ξ to the momentum block and annihilates
/// the position block.
pub fn xi_matrix_langevin(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dof = sigma.nrows();
    let xi = xi_matrix(sigma)?;
    let mut out = DMatrix::zeros(dof, 2 * dof);
    out.view_mut((0, dof), (dof, dof)).copy_from(&xi);
    Ok(out)
}

/// Which weighted norm a [`WeightedNorm`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// `‖z‖²_Ξ = |Ξ(x) z|²` on the microscopic space.
    Xi,
    /// `‖z‖²_{Π♯Ξ} = |Ξ(x) Π♯ z|²` on the coarse space.
    CgXi,
}

/// Weighted norm `‖z‖² = |G(x) z|²` with `G = Ξ` or `G = Ξ Π♯`.
#[derive(Clone)]
pub struct WeightedNorm {
    mode: NormMode,
    weight: MatrixFn,
}

impl WeightedNorm {
    /// Microscopic norm from the diffusion field. For state-dependent σ the
    /// weight is recomputed per state; σᵀσ must stay invertible wherever the
    /// norm is evaluated.
    pub fn xi(sigma: &DiffusionField) -> Result<Self> {
        match sigma {
            DiffusionField::Constant(s) => {
                let xi = xi_matrix(s)?;
                Ok(Self::from_weight(xi, NormMode::Xi))
            }
            DiffusionField::StateDependent { field, .. } => {
                let field = Arc::clone(field);
                let weight: MatrixFn = Arc::new(move |x: &DVector<f64>| {
                    xi_matrix(&field(x)).expect("sigma^T sigma singular inside WeightedNorm")
                });
                Ok(Self { mode: NormMode::Xi, weight })
            }
        }
    }

    /// Coarse-space norm `‖·‖_{Π♯Ξ}` for a given right inverse.
    pub fn cg_xi(sigma: &DiffusionField, right_inverse: &DMatrix<f64>) -> Result<Self> {
        let ri = right_inverse.clone();
        match sigma {
            DiffusionField::Constant(s) => {
                let g = xi_matrix(s)? * &ri;
                Ok(Self::from_weight(g, NormMode::CgXi))
            }
            DiffusionField::StateDependent { field, .. } => {
                let field = Arc::clone(field);
                let weight: MatrixFn = Arc::new(move |x: &DVector<f64>| {
                    xi_matrix(&field(x)).expect("sigma^T sigma singular inside WeightedNorm") * &ri
                });
                Ok(Self { mode: NormMode::CgXi, weight })
            }
        }
    }

    pub fn from_weight(g: DMatrix<f64>, mode: NormMode) -> Self {
        Self {
            mode,
            weight: Arc::new(move |_| g.clone()),
        }
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    /// The weight matrix `G(x)`; `x` is the state at which the norm is
    /// evaluated (relevant only for state-dependent diffusions).
    pub fn weight_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.weight)(x)
    }

    pub fn norm_sq(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
        ((self.weight)(x) * z).norm_squared()
    }
}

impl std::fmt::Debug for WeightedNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "WeightedNorm({:?})", self.mode)
    }
}

/// Which estimator produced a [`RerReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    Stationary,
    FiniteTime,
    Discrete,
}

impl EstimatorMode {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorMode::Stationary => "stationary",
            EstimatorMode::FiniteTime => "finite_time",
            EstimatorMode::Discrete => "discrete",
        }
    }
}

/// Monte Carlo estimate of an information functional with its error bar.
#[derive(Debug, Clone, Copy)]
pub struct RerReport {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub mode: EstimatorMode,
}

impl std::fmt::Display for RerReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "value={:.17e} se={:.17e} n={} mode={}",
            self.value,
            self.std_error,
            self.n_samples,
            self.mode.name()
        )
    }
}

fn report_from_series(series: &[f64], mode: EstimatorMode) -> RerReport {
    let (value, std_error) = mean_and_batch_se(series, DEFAULT_BATCHES);
    RerReport {
        value,
        std_error,
        n_samples: series.len(),
        mode,
    }
}

/// Stationary RER estimate `E_mu[ ½ ‖b(X) − b̃(X)‖²_norm ]` over samples
/// that are assumed (caller's burn-in) to be approximately stationary.
pub fn rer_stationary(
    samples: &[DVector<f64>],
    b: impl Fn(&DVector<f64>) -> DVector<f64>,
    b_tilde: impl Fn(&DVector<f64>) -> DVector<f64>,
    norm: &WeightedNorm,
) -> Result<RerReport> {
    if samples.is_empty() {
        return Err(Error::EmptyInput { context: "rer_stationary samples" });
    }
    let series: Vec<f64> = samples
        .iter()
        .map(|x| 0.5 * norm.norm_sq(x, &(b(x) - b_tilde(x))))
        .collect();
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "rer_stationary integrand" });
    }
    Ok(report_from_series(&series, EstimatorMode::Stationary))
}

/// Finite-time relative entropy over `[0, T]`: the left-endpoint rectangle
/// rule of `½ ∫₀ᵀ ‖b − b̃‖² ds` averaged over replicas, plus the caller's
/// initial divergence `R(μ₀|ν₀)`.
///
/// Grows linearly in `T` for stationary input; the error bar is across
/// replicas.
pub fn re_finite_time(
    paths: &Ensemble,
    b: impl Fn(&DVector<f64>) -> DVector<f64>,
    b_tilde: impl Fn(&DVector<f64>) -> DVector<f64>,
    norm: &WeightedNorm,
    initial_divergence: f64,
) -> Result<RerReport> {
    let h = paths.step();
    if paths.len() < 2 {
        return Err(Error::EmptyInput { context: "re_finite_time (need at least one increment)" });
    }
    let per_path: Vec<f64> = paths
        .trajectories()
        .iter()
        .map(|traj| {
            let mut acc = 0.0;
            for x in &traj.states()[..traj.len() - 1] {
                acc += 0.5 * norm.norm_sq(x, &(b(x) - b_tilde(x))) * h;
            }
            acc
        })
        .collect();
    if per_path.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "re_finite_time integrand" });
    }
    let mut report = report_from_series(&per_path, EstimatorMode::FiniteTime);
    report.value += initial_divergence;
    Ok(report)
}

/// θ-dependent pieces of the Euler-scheme discrete RER: the argmin of
/// `H(P|Qᶿ)` coincides with the argmin of `A(θ)/h + B(θ)` where
///
/// ```text
///   A(θ) = ½ E_mu[ −log|ΠΣΠᵀ Σ̄⁻¹| + Tr(ΠΣΠᵀ Σ̄⁻¹) ]
///   B(θ) = ½ E_mu[ (Πb − b̄)ᵀ Σ̄⁻¹ (Πb − b̄) ]
/// ```
///
/// up to θ-independent additive constants that cancel from gradients.
#[derive(Debug, Clone)]
pub struct DiscreteRerPieces {
    pub a: RerReport,
    pub b: RerReport,
    pub h: f64,
}

impl DiscreteRerPieces {
    /// `A/h + B`, the quantity whose argmin matches the discrete RER.
    pub fn objective(&self) -> f64 {
        self.a.value / self.h + self.b.value
    }
}

/// Estimates `A(θ)` and `B(θ)` for the Euler-discretized overdamped pair.
/// For the fixed-diffusion family `Σ̄ = ΠΣΠᵀ` the `A` piece is exactly
/// `m/2` per sample and the objective reduces to the force-matching part.
pub fn discrete_rer_overdamped(
    samples: &[DVector<f64>],
    micro_drift: impl Fn(&DVector<f64>) -> DVector<f64>,
    micro_sigma: &DiffusionField,
    pi: &DMatrix<f64>,
    cg_drift: impl Fn(&DVector<f64>) -> DVector<f64>,
    cg_sigma_sq: impl Fn(&DVector<f64>) -> DMatrix<f64>,
    h: f64,
) -> Result<DiscreteRerPieces> {
    if samples.is_empty() {
        return Err(Error::EmptyInput { context: "discrete_rer_overdamped samples" });
    }
    let m = pi.nrows();
    let mut a_series = Vec::with_capacity(samples.len());
    let mut b_series = Vec::with_capacity(samples.len());
    for x in samples {
        let xbar = pi * x;
        let sigma_bar = cg_sigma_sq(&xbar);
        let chol = sigma_bar
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { context: "discrete_rer_overdamped Sigma_bar", min_eig: f64::NAN })?;
        let s = micro_sigma.at(x);
        let micro_cg = pi * (&s * s.transpose()) * pi.transpose();

        // -log|PiSigmaPi^T Sigma_bar^{-1}| + Tr(PiSigmaPi^T Sigma_bar^{-1})
        let solved = chol.solve(&micro_cg);
        let trace = solved.trace();
        let logdet_micro = log_det_spd(&micro_cg, "discrete_rer_overdamped Pi Sigma Pi^T")?;
        let logdet_bar = 2.0 * chol.l().diagonal().map(|d| d.ln()).sum();
        a_series.push(0.5 * (-(logdet_micro - logdet_bar) + trace));

        let r = pi * micro_drift(x) - cg_drift(&xbar);
        let w = chol.solve(&r);
        b_series.push(0.5 * r.dot(&w));
        let _ = m;
    }
    Ok(DiscreteRerPieces {
        a: report_from_series(&a_series, EstimatorMode::Discrete),
        b: report_from_series(&b_series, EstimatorMode::Discrete),
        h,
    })
}

fn log_det_spd(a: &DMatrix<f64>, context: &'static str) -> Result<f64> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { context, min_eig: f64::NAN })?;
    Ok(2.0 * chol.l().diagonal().map(|d| d.ln()).sum())
}

/// θ-dependent pieces of the BBK-scheme discrete RER together with their
/// analytic θ-gradients (for linear families):
///
/// ```text
///   C(θ)   = ¼ E_mu[ |σ⁻¹(ΠF(q) − F̄(Πq; θ))|² ]
///   D_h(θ) =    E_mu[ ∫ P^h(q′|q,p) |σ⁻¹(ΠF(q′) − F̄(Πq′; θ))|² dq′ ]
/// ```
///
/// The position kernel `P^h(q′|q,p)` concentrates at `q` as `h → 0`, so
/// `D_h → 4C` and `∇(C + D_h) → 5 ∇C`.
#[derive(Debug, Clone)]
pub struct BbkRerPieces {
    pub c: RerReport,
    pub d_h: RerReport,
    pub grad_c: DVector<f64>,
    pub grad_d: DVector<f64>,
}

impl BbkRerPieces {
    pub fn objective(&self) -> f64 {
        self.c.value + self.d_h.value
    }
}

/// Estimates `C(θ)` and `D_h(θ)` for the BBK-discretized Langevin pair.
///
/// Requires scalar friction and noise with all particle masses equal, which
/// is the regime where the two-factor Gaussian kernel has the closed form
/// used here. `D_h` is sampled with `inner_draws` positions per state drawn
/// from the one-step position kernel
/// `q′ ~ N(q + (h/m)(p + F(q)h/2 − γ M⁻¹ p h/2), σ²h³/(2m²) I)`.
#[allow(clippy::too_many_arguments)]
pub fn discrete_rer_bbk(
    samples_qp: &[DVector<f64>],
    model: &LangevinModel,
    pi: &DMatrix<f64>,
    family: &ParametricDriftFamily,
    theta: &DVector<f64>,
    h: f64,
    inner_draws: usize,
    rng: &mut ChaCha12Rng,
    convention: BbkConvention,
) -> Result<BbkRerPieces> {
    if samples_qp.is_empty() {
        return Err(Error::EmptyInput { context: "discrete_rer_bbk samples" });
    }
    let (gamma, sigma) = scalar_friction_noise(model)?;
    let mass = equal_mass(model)?;
    let n = model.dof();
    let k = family.n_basis();
    let sign = convention.force_sign();

    // orthogonal projection required by the two-factor kernel factorization
    let gram_defect = (pi * pi.transpose() - DMatrix::identity(pi.nrows(), pi.nrows())).amax();
    if gram_defect > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "discrete_rer_bbk needs an orthogonal projection map (Pi Pi^T defect {gram_defect:.3e})"
        )));
    }

    let inner = inner_draws.max(1);
    let kernel_sd = (sigma * h * h.sqrt()) / (mass * (2.0f64).sqrt());
    let inv_sigma_sq = 1.0 / (sigma * sigma);

    let mut c_series = Vec::with_capacity(samples_qp.len());
    let mut d_series = Vec::with_capacity(samples_qp.len());
    let mut grad_c = DVector::zeros(k);
    let mut grad_d = DVector::zeros(k);
    for x in samples_qp {
        if x.len() != 2 * n {
            return Err(Error::DimensionMismatch {
                context: "discrete_rer_bbk phase state",
                expected: 2 * n,
                got: x.len(),
            });
        }
        let q = x.rows(0, n).into_owned();
        let p = x.rows(n, n).into_owned();

        let qbar = pi * &q;
        let r = pi * model.force(&q) - family.eval_with(theta, &qbar)?;
        c_series.push(0.25 * inv_sigma_sq * r.norm_squared());
        let basis = family.basis_matrix(&qbar)?;
        grad_c.axpy(-0.5 * inv_sigma_sq / samples_qp.len() as f64, &basis.tr_mul(&r), 1.0);

        let mean_q = &q
            + (&p * (1.0 - gamma * h / (2.0 * mass)) + model.force(&q) * (sign * h / 2.0)) * (h / mass);
        let mut d_acc = 0.0;
        for _ in 0..inner {
            let qp = &mean_q + gaussian_increment(rng, n, kernel_sd);
            let qpbar = pi * &qp;
            let rp = pi * model.force(&qp) - family.eval_with(theta, &qpbar)?;
            d_acc += inv_sigma_sq * rp.norm_squared();
            let basis_p = family.basis_matrix(&qpbar)?;
            grad_d.axpy(
                -2.0 * inv_sigma_sq / (samples_qp.len() * inner) as f64,
                &basis_p.tr_mul(&rp),
                1.0,
            );
        }
        d_series.push(d_acc / inner as f64);
    }

    Ok(BbkRerPieces {
        c: report_from_series(&c_series, EstimatorMode::Discrete),
        d_h: report_from_series(&d_series, EstimatorMode::Discrete),
        grad_c,
        grad_d,
    })
}

fn scalar_friction_noise(model: &LangevinModel) -> Result<(f64, f64)> {
    let n = model.dof();
    let gamma = model.friction()[(0, 0)];
    let sigma = model.noise()[(0, 0)];
    let gd = (model.friction() - DMatrix::identity(n, n) * gamma).amax();
    let sd = (model.noise() - DMatrix::identity(n, n) * sigma).amax();
    if gd > 1e-12 || sd > 1e-12 {
        return Err(Error::InvalidArgument(
            "scalar friction and noise required for the BBK kernel".into(),
        ));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument("BBK kernel needs sigma > 0".into()));
    }
    Ok((gamma, sigma))
}

fn equal_mass(model: &LangevinModel) -> Result<f64> {
    let m0 = model.masses()[0];
    if model.masses().iter().any(|&m| (m - m0).abs() > 1e-12 * m0) {
        return Err(Error::InvalidArgument(
            "equal particle masses required for the BBK kernel".into(),
        ));
    }
    Ok(m0)
}

/// Scheme-induced Gaussian transition kernel of the coarse chain.
#[derive(Debug, Clone)]
pub enum TransitionKernel {
    /// Euler kernel: mean `x̄ + b̄(x̄; θ) h`, covariance `Σ̄ h`.
    EulerGaussian { sigma_sq: DMatrix<f64>, h: f64 },
    /// BBK two-factor kernel on `(q̄, p̄)` with scalar coefficients.
    BbkGaussian {
        gamma: f64,
        sigma: f64,
        mass: f64,
        h: f64,
        convention: BbkConvention,
    },
}

struct PreparedKernel<'a> {
    kernel: &'a TransitionKernel,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl TransitionKernel {
    fn prepare(&self) -> Result<PreparedKernel<'_>> {
        let chol = match self {
            TransitionKernel::EulerGaussian { sigma_sq, .. } => Some(
                sigma_sq
                    .clone()
                    .cholesky()
                    .ok_or(Error::NotPositiveDefinite { context: "transition kernel covariance", min_eig: f64::NAN })?,
            ),
            TransitionKernel::BbkGaussian { sigma, h, mass, .. } => {
                if *sigma <= 0.0 || *h <= 0.0 || *mass <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "BBK kernel needs positive sigma, h and mass".into(),
                    ));
                }
                None
            }
        };
        Ok(PreparedKernel { kernel: self, chol })
    }
}

impl PreparedKernel<'_> {
    /// Log-density and θ-gradient of one transition under a linear family.
    fn log_density_grad(
        &self,
        family: &ParametricDriftFamily,
        theta: &DVector<f64>,
        from: &DVector<f64>,
        to: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>)> {
        match self.kernel {
            TransitionKernel::EulerGaussian { sigma_sq, h } => {
                let m = sigma_sq.nrows();
                let chol = self.chol.as_ref().expect("prepared Euler kernel");
                let drift = family.eval_with(theta, from)?;
                let r = to - from - drift * *h;
                let w = chol.solve(&r);
                let logdet = 2.0 * chol.l().diagonal().map(|d| d.ln()).sum();
                let logp = -0.5 * m as f64 * (2.0 * std::f64::consts::PI * h).ln()
                    - 0.5 * logdet
                    - r.dot(&w) / (2.0 * h);
                // d logp / d theta_k = phi_k(from)^T Sigma_bar^{-1} r
                let basis = family.basis_matrix(from)?;
                let grad = basis.tr_mul(&w);
                Ok((logp, grad))
            }
            TransitionKernel::BbkGaussian { gamma, sigma, mass, h, convention } => {
                let m = family.cg_dim();
                if from.len() != 2 * m || to.len() != 2 * m {
                    return Err(Error::DimensionMismatch {
                        context: "BBK kernel phase state",
                        expected: 2 * m,
                        got: from.len(),
                    });
                }
                let sign = convention.force_sign();
                let q0 = from.rows(0, m).into_owned();
                let p0 = from.rows(m, m).into_owned();
                let q1 = to.rows(0, m).into_owned();
                let p1 = to.rows(m, m).into_owned();

                let var_q = sigma * sigma * h.powi(3) / (2.0 * mass * mass);
                let var_p = sigma * sigma * h / 2.0;
                let c = 1.0 + gamma * h / (2.0 * mass);

                let f0 = family.eval_with(theta, &q0)?;
                let mean_q = &q0 + (&p0 * (1.0 - gamma * h / (2.0 * mass)) + &f0 * (sign * h / 2.0)) * (h / mass);
                let rq = &q1 - &mean_q;

                let f1 = family.eval_with(theta, &q1)?;
                let mean_p = (&q1 - &q0) * (mass / h) + &f1 * (sign * h / 2.0);
                let rp = &p1 * c - &mean_p;

                let logp = -0.5 * m as f64 * (2.0 * std::f64::consts::PI * var_q).ln()
                    - rq.norm_squared() / (2.0 * var_q)
                    + m as f64 * c.ln()
                    - 0.5 * m as f64 * (2.0 * std::f64::consts::PI * var_p).ln()
                    - rp.norm_squared() / (2.0 * var_p);

                let basis0 = family.basis_matrix(&q0)?;
                let basis1 = family.basis_matrix(&q1)?;
                let grad = basis0.tr_mul(&rq) * (sign * h * h / (2.0 * mass) / var_q)
                    + basis1.tr_mul(&rp) * (sign * h / 2.0 / var_p);
                Ok((logp, grad))
            }
        }
    }
}

/// Stationary path log-likelihood `L_s(θ) = Σᵢ log p̄ᶿ(X̄ᵢ, X̄ᵢ₊₁)` of a
/// coarse series under a scheme-induced Gaussian kernel, together with its
/// analytic θ-gradient.
pub fn path_log_likelihood(
    series: &Trajectory,
    kernel: &TransitionKernel,
    family: &ParametricDriftFamily,
    theta: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    if series.len() < 2 {
        return Err(Error::EmptyInput { context: "path_log_likelihood transitions" });
    }
    let prepared = kernel.prepare()?;
    let mut logl = 0.0;
    let mut grad = DVector::zeros(family.n_basis());
    for w in series.states().windows(2) {
        let (lp, g) = prepared.log_density_grad(family, theta, &w[0], &w[1])?;
        logl += lp;
        grad += g;
    }
    Ok((logl, grad))
}

/// Two sides of the CKP bound `|E_P[φ] − E_Q[φ]| ≤ ‖φ‖_∞ √(2R)`.
#[derive(Debug, Clone, Copy)]
pub struct CkpReport {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_se: f64,
    pub sup_norm: f64,
    /// True when `‖φ‖_∞` was estimated as the empirical sup over the samples.
    pub sup_is_empirical: bool,
    pub holds: bool,
}

impl std::fmt::Display for CkpReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "lhs={:.6e} rhs={:.6e} lhs_se={:.3e} sup={:.6e}{} holds={}",
            self.lhs,
            self.rhs,
            self.lhs_se,
            self.sup_norm,
            if self.sup_is_empirical { " (empirical sup)" } else { "" },
            self.holds
        )
    }
}

/// Evaluates both sides of the CKP inequality for one observable, with the
/// divergence (an RER or RE value) supplied by the caller. `holds` allows
/// three standard errors of Monte Carlo slack on the left side.
pub fn ckp_bound(
    phi: impl Fn(&DVector<f64>) -> f64,
    samples_p: &[DVector<f64>],
    samples_q: &[DVector<f64>],
    divergence: f64,
    sup_norm: Option<f64>,
) -> Result<CkpReport> {
    if samples_p.is_empty() || samples_q.is_empty() {
        return Err(Error::EmptyInput { context: "ckp_bound samples" });
    }
    let vp: Vec<f64> = samples_p.iter().map(&phi).collect();
    let vq: Vec<f64> = samples_q.iter().map(&phi).collect();
    let (mp, sep) = mean_and_batch_se(&vp, DEFAULT_BATCHES);
    let (mq, seq) = mean_and_batch_se(&vq, DEFAULT_BATCHES);
    let lhs = (mp - mq).abs();
    let lhs_se = (sep * sep + seq * seq).sqrt();
    let (sup, empirical) = match sup_norm {
        Some(s) => (s, false),
        None => {
            let sup = vp
                .iter()
                .chain(vq.iter())
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            (sup, true)
        }
    };
    let rhs = sup * (2.0 * divergence.max(0.0)).sqrt();
    Ok(CkpReport {
        lhs,
        rhs,
        lhs_se,
        sup_norm: sup,
        sup_is_empirical: empirical,
        holds: lhs <= rhs + 3.0 * lhs_se,
    })
}

/// One observable's contribution to the discrepancy baseline.
#[derive(Debug, Clone, Copy)]
pub struct ObservableDiff {
    pub diff: f64,
    pub std_error: f64,
}

/// `Σᵢ |E_P[φᵢ] − E_Q[φᵢ]|²` with a delta-method error bar; the baseline
/// comparator for observable-targeted parametrizations.
#[derive(Debug, Clone)]
pub struct DiscrepancyReport {
    pub value: f64,
    pub std_error: f64,
    pub per_observable: Vec<ObservableDiff>,
}

pub fn observable_discrepancy<F>(
    phis: &[F],
    samples_p: &[DVector<f64>],
    samples_q: &[DVector<f64>],
) -> Result<DiscrepancyReport>
where
    F: Fn(&DVector<f64>) -> f64,
{
    if samples_p.is_empty() || samples_q.is_empty() {
        return Err(Error::EmptyInput { context: "observable_discrepancy samples" });
    }
    let mut value = 0.0;
    let mut var = 0.0;
    let mut per = Vec::with_capacity(phis.len());
    for phi in phis {
        let vp: Vec<f64> = samples_p.iter().map(phi).collect();
        let vq: Vec<f64> = samples_q.iter().map(phi).collect();
        let (mp, sep) = mean_and_batch_se(&vp, DEFAULT_BATCHES);
        let (mq, seq) = mean_and_batch_se(&vq, DEFAULT_BATCHES);
        let d = mp - mq;
        let se = (sep * sep + seq * seq).sqrt();
        value += d * d;
        var += (2.0 * d * se).powi(2) + 2.0 * se.powi(4);
        per.push(ObservableDiff { diff: d, std_error: se });
    }
    Ok(DiscrepancyReport {
        value,
        std_error: var.sqrt(),
        per_observable: per,
    })
}
