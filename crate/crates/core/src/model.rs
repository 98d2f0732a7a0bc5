//! Dynamical models: general SDEs, Langevin systems and parametric drift
//! families.
//!
//! A microscopic system is either a general diffusion
//! `dX = b(X) dt + σ(X) dB` or a Langevin pair `(q, p)` with
//! `dq = M⁻¹ p dt`, `dp = F(q) dt − γ M⁻¹ p dt + σ dB`. Coarse drifts are
//! parametrized linearly, `b̄(x̄; θ) = Σ_k θ_k φ_k(x̄)`, which keeps every
//! downstream fit a strictly convex least-squares problem.
//!
//! All types are immutable after construction and safe to share across
//! threads. Drift, force and diffusion callables must be pure functions of
//! their input; this is a documented contract, not something the library can
//! enforce.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Vector field callable `ℝⁿ → ℝⁿ` (drift, force, basis function, ...).
pub type StateFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Matrix-valued callable `ℝⁿ → ℝ^{n×k}`.
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Scalar callable `ℝⁿ → ℝ` (potential energy, observable, ...).
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Relative tolerance for numerical rank decisions: a singular value counts
/// as nonzero when it exceeds `RANK_TOL * (largest singular value)`.
pub const RANK_TOL: f64 = 1e-10;

/// Diffusion coefficient field σ(x), constant in the common case.
///
/// For state-dependent σ the divergence correction that appears in
/// overdamped drifts must be supplied analytically by whoever builds the
/// drift; for constant σ it vanishes.
#[derive(Clone)]
pub enum DiffusionField {
    Constant(DMatrix<f64>),
    StateDependent { noise_dim: usize, field: MatrixFn },
}

impl DiffusionField {
    pub fn noise_dim(&self) -> usize {
        match self {
            DiffusionField::Constant(m) => m.ncols(),
            DiffusionField::StateDependent { noise_dim, .. } => *noise_dim,
        }
    }

    pub fn state_dim(&self) -> Option<usize> {
        match self {
            DiffusionField::Constant(m) => Some(m.nrows()),
            DiffusionField::StateDependent { .. } => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, DiffusionField::Constant(_))
    }

    pub fn at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            DiffusionField::Constant(m) => m.clone(),
            DiffusionField::StateDependent { field, .. } => field(x),
        }
    }
}

impl std::fmt::Debug for DiffusionField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DiffusionField::Constant(m) => write!(f, "DiffusionField::Constant({}x{})", m.nrows(), m.ncols()),
            DiffusionField::StateDependent { noise_dim, .. } => {
                write!(f, "DiffusionField::StateDependent(k={noise_dim})")
            }
        }
    }
}

/// General diffusion `dX = b(X) dt + σ(X) dB` on ℝⁿ with k ≤ n noise channels.
#[derive(Clone)]
pub struct SdeModel {
    dim: usize,
    drift: StateFn,
    diffusion: DiffusionField,
}

impl SdeModel {
    pub fn new(dim: usize, drift: StateFn, diffusion: DiffusionField) -> Result<Self> {
        let k = diffusion.noise_dim();
        if k > dim {
            return Err(Error::DimensionMismatch {
                context: "SdeModel noise dimension (k must be <= n)",
                expected: dim,
                got: k,
            });
        }
        if let Some(n) = diffusion.state_dim() {
            if n != dim {
                return Err(Error::DimensionMismatch {
                    context: "SdeModel diffusion rows",
                    expected: dim,
                    got: n,
                });
            }
        }
        Ok(Self { dim, drift, diffusion })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.diffusion.noise_dim()
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn drift_fn(&self) -> StateFn {
        Arc::clone(&self.drift)
    }

    pub fn diffusion(&self) -> &DiffusionField {
        &self.diffusion
    }

    pub fn diffusion_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.diffusion.at(x)
    }

    /// Checks the model invariants at one state: finite drift/diffusion and
    /// full column rank of σ(x) (smallest singular value above
    /// `RANK_TOL`-scaled largest).
    pub fn validate_at(&self, x: &DVector<f64>) -> Result<()> {
        let b = self.drift(x);
        if b.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "drift output",
                expected: self.dim,
                got: b.len(),
            });
        }
        if !b.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "drift" });
        }
        let s = self.diffusion_at(x);
        if !s.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "diffusion" });
        }
        let svals = s.singular_values();
        let smax = svals.max();
        let smin = svals.min();
        if smin <= RANK_TOL * smax {
            return Err(Error::RankDeficient {
                singular_values: svals.iter().copied().collect(),
            });
        }
        Ok(())
    }
}

impl std::fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SdeModel(n={}, k={})", self.dim, self.noise_dim())
    }
}

/// Langevin system of `n_particles` in `space_dim` dimensions.
///
/// Friction γ and noise σ are constant matrices on the momentum space
/// (dof × dof, dof = n_particles * space_dim). `conservative` records whether
/// the force was declared a negative potential gradient; nothing in the
/// fitting pipeline requires it.
#[derive(Clone)]
pub struct LangevinModel {
    n_particles: usize,
    space_dim: usize,
    masses: Vec<f64>,
    force: StateFn,
    friction: DMatrix<f64>,
    noise: DMatrix<f64>,
    beta: f64,
    conservative: bool,
}

impl LangevinModel {
    pub fn new(
        n_particles: usize,
        space_dim: usize,
        masses: Vec<f64>,
        force: StateFn,
        friction: DMatrix<f64>,
        noise: DMatrix<f64>,
        beta: f64,
        conservative: bool,
    ) -> Result<Self> {
        if n_particles == 0 || space_dim == 0 {
            return Err(Error::InvalidArgument(
                "Langevin model needs at least one particle and one spatial dimension".into(),
            ));
        }
        if masses.len() != n_particles {
            return Err(Error::DimensionMismatch {
                context: "masses length",
                expected: n_particles,
                got: masses.len(),
            });
        }
        if masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument("masses must be strictly positive".into()));
        }
        let dof = n_particles * space_dim;
        for (name, m) in [("friction", &friction), ("noise", &noise)] {
            if m.nrows() != dof || m.ncols() != dof {
                return Err(Error::DimensionMismatch {
                    context: if name == "friction" {
                        "friction matrix"
                    } else {
                        "noise matrix"
                    },
                    expected: dof,
                    got: m.nrows().max(m.ncols()),
                });
            }
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidArgument("beta must be positive".into()));
        }
        let probe = force(&DVector::zeros(dof));
        if probe.len() != dof {
            return Err(Error::DimensionMismatch {
                context: "force output",
                expected: dof,
                got: probe.len(),
            });
        }
        Ok(Self {
            n_particles,
            space_dim,
            masses,
            force,
            friction,
            noise,
            beta,
            conservative,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn space_dim(&self) -> usize {
        self.space_dim
    }

    /// Momentum-space degrees of freedom (`n_particles * space_dim`).
    pub fn dof(&self) -> usize {
        self.n_particles * self.space_dim
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Per-coordinate mass vector: each particle mass repeated `space_dim` times.
    pub fn mass_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dof());
        for (i, &m) in self.masses.iter().enumerate() {
            for d in 0..self.space_dim {
                v[i * self.space_dim + d] = m;
            }
        }
        v
    }

    pub fn force(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.force)(q)
    }

    pub fn force_fn(&self) -> StateFn {
        Arc::clone(&self.force)
    }

    pub fn friction(&self) -> &DMatrix<f64> {
        &self.friction
    }

    pub fn noise(&self) -> &DMatrix<f64> {
        &self.noise
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_conservative(&self) -> bool {
        self.conservative
    }
}

impl std::fmt::Debug for LangevinModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "LangevinModel(N={}, d={}, beta={}, conservative={})",
            self.n_particles, self.space_dim, self.beta, self.conservative
        )
    }
}

/// True iff `σσᵀ = 2β⁻¹γ` entrywise within `tol`.
pub fn check_fluctuation_dissipation(model: &LangevinModel, tol: f64) -> bool {
    let lhs = model.noise() * model.noise().transpose();
    let rhs = model.friction() * (2.0 / model.beta());
    (lhs - rhs).amax() <= tol
}

/// Writes the Langevin pair as a single SDE on phase space `x = (q, p)`:
/// drift `(M⁻¹p, F(q) − γM⁻¹p)` and constant diffusion `σ₀ = (0, σ)ᵀ` of
/// shape `2·dof × dof`.
pub fn make_langevin_sde(model: &LangevinModel) -> Result<SdeModel> {
    let dof = model.dof();
    let probe = model.force(&DVector::zeros(dof));
    if probe.len() != dof {
        return Err(Error::DimensionMismatch {
            context: "force output",
            expected: dof,
            got: probe.len(),
        });
    }
    let m = model.clone();
    let drift: StateFn = Arc::new(move |x: &DVector<f64>| {
        let dof = m.dof();
        let q = x.rows(0, dof).into_owned();
        let p = x.rows(dof, dof).into_owned();
        let mass = m.mass_vector();
        let minv_p = DVector::from_fn(dof, |i, _| p[i] / mass[i]);
        let f = m.force(&q);
        let dp = f - m.friction() * &minv_p;
        let mut out = DVector::zeros(2 * dof);
        out.rows_mut(0, dof).copy_from(&minv_p);
        out.rows_mut(dof, dof).copy_from(&dp);
        out
    });
    let mut sigma0 = DMatrix::zeros(2 * dof, dof);
    sigma0.view_mut((dof, 0), (dof, dof)).copy_from(model.noise());
    SdeModel::new(2 * dof, drift, DiffusionField::Constant(sigma0))
}

/// Overdamped Langevin `dX = −½ Σ ∇U(X) dt + σ dB` with constant σ
/// (the ½∇·Σ correction vanishes).
pub fn make_overdamped_sde(grad_potential: StateFn, sigma: DMatrix<f64>) -> Result<SdeModel> {
    let n = sigma.nrows();
    let big_sigma = &sigma * sigma.transpose();
    let drift: StateFn = Arc::new(move |x: &DVector<f64>| -0.5 * (&big_sigma * grad_potential(x)));
    SdeModel::new(n, drift, DiffusionField::Constant(sigma))
}

/// Drift family linear in the coefficients, `b̄(x̄; θ) = Σ_k θ_k φ_k(x̄)`
/// with vector-valued basis functions `φ_k : ℝᵐ → ℝᵐ`.
#[derive(Clone)]
pub struct ParametricDriftFamily {
    cg_dim: usize,
    basis: Vec<StateFn>,
    theta: DVector<f64>,
}

impl ParametricDriftFamily {
    pub fn new(cg_dim: usize, basis: Vec<StateFn>, theta: DVector<f64>) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::EmptyInput { context: "drift family basis" });
        }
        if theta.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                context: "theta length",
                expected: basis.len(),
                got: theta.len(),
            });
        }
        Ok(Self { cg_dim, basis, theta })
    }

    /// Family with all coefficients zero.
    pub fn with_zero_theta(cg_dim: usize, basis: Vec<StateFn>) -> Result<Self> {
        let k = basis.len();
        Self::new(cg_dim, basis, DVector::zeros(k))
    }

    pub fn cg_dim(&self) -> usize {
        self.cg_dim
    }

    pub fn n_basis(&self) -> usize {
        self.basis.len()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn with_theta(&self, theta: DVector<f64>) -> Result<Self> {
        Self::new(self.cg_dim, self.basis.clone(), theta)
    }

    /// Basis functions stacked as columns: an `m × K` matrix `[φ_1(x̄) … φ_K(x̄)]`.
    pub fn basis_matrix(&self, xbar: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.cg_dim, self.basis.len());
        for (k, phi) in self.basis.iter().enumerate() {
            let col = phi(xbar);
            if col.len() != self.cg_dim {
                return Err(Error::DimensionMismatch {
                    context: "basis function output",
                    expected: self.cg_dim,
                    got: col.len(),
                });
            }
            out.set_column(k, &col);
        }
        Ok(out)
    }

    /// `Σ_k θ_k φ_k(x̄)` with the stored coefficients.
    pub fn eval(&self, xbar: &DVector<f64>) -> Result<DVector<f64>> {
        self.eval_with(&self.theta, xbar)
    }

    /// `Σ_k θ_k φ_k(x̄)` with caller-supplied coefficients.
    pub fn eval_with(&self, theta: &DVector<f64>, xbar: &DVector<f64>) -> Result<DVector<f64>> {
        if theta.len() != self.basis.len() {
            return Err(Error::DimensionMismatch {
                context: "theta length",
                expected: self.basis.len(),
                got: theta.len(),
            });
        }
        let mut acc = DVector::zeros(self.cg_dim);
        for (k, phi) in self.basis.iter().enumerate() {
            let col = phi(xbar);
            if col.len() != self.cg_dim {
                return Err(Error::DimensionMismatch {
                    context: "basis function output",
                    expected: self.cg_dim,
                    got: col.len(),
                });
            }
            acc.axpy(theta[k], &col, 1.0);
        }
        Ok(acc)
    }

    /// Closure form of the drift at fixed coefficients, for building SDE
    /// models. Panics on basis dimension mismatch; validate the family with
    /// [`ParametricDriftFamily::eval`] first.
    pub fn drift_fn(&self, theta: &DVector<f64>) -> StateFn {
        let basis = self.basis.clone();
        let theta = theta.clone();
        let m = self.cg_dim;
        Arc::new(move |xbar: &DVector<f64>| {
            let mut acc = DVector::zeros(m);
            for (k, phi) in basis.iter().enumerate() {
                acc.axpy(theta[k], &phi(xbar), 1.0);
            }
            acc
        })
    }
}

impl std::fmt::Debug for ParametricDriftFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ParametricDriftFamily(m={}, K={})", self.cg_dim, self.basis.len())
    }
}

/// Gibbs specification `μ(dq) ∝ exp{−β U(q)} dq`.
///
/// Only used for equilibrium diagnostics; the fitting pipeline never
/// evaluates a Gibbs density (the estimators sample the stationary state
/// instead), which is what makes driven systems tractable.
#[derive(Clone)]
pub struct GibbsSpec {
    potential: ScalarFn,
    beta: f64,
}

impl GibbsSpec {
    pub fn new(potential: ScalarFn, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidArgument("beta must be positive".into()));
        }
        Ok(Self { potential, beta })
    }

    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        (self.potential)(q)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Largest relative deviation of `F` from `−∇U` over the given points,
/// with the gradient taken by central differences.
pub fn conservative_force_residual(
    force: &StateFn,
    gibbs: &GibbsSpec,
    points: &[DVector<f64>],
) -> f64 {
    let mut worst: f64 = 0.0;
    for q in points {
        let n = q.len();
        let f = force(q);
        let scale = f.amax().max(1.0);
        for i in 0..n {
            let h = 6e-6 * q[i].abs().max(1.0);
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let grad_i = (gibbs.potential(&qp) - gibbs.potential(&qm)) / (2.0 * h);
            worst = worst.max((f[i] + grad_i).abs() / scale);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_particle(n: usize) -> LangevinModel {
        LangevinModel::new(
            n,
            1,
            vec![1.0; n],
            Arc::new(|q: &DVector<f64>| DVector::zeros(q.len())),
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, n),
            1.0,
            true,
        )
        .unwrap()
    }

    #[test]
    fn langevin_sde_free_particle_drift() {
        // N=1, F=0, gamma=0: drift(q, p) = (p/m, 0)
        let model = LangevinModel::new(
            1,
            1,
            vec![2.0],
            Arc::new(|q: &DVector<f64>| DVector::zeros(q.len())),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            1.0,
            true,
        )
        .unwrap();
        let sde = make_langevin_sde(&model).unwrap();
        let b = sde.drift(&DVector::from_vec(vec![0.3, 4.0]));
        assert_eq!(b[0], 2.0);
        assert_eq!(b[1], 0.0);
    }

    #[test]
    fn langevin_sde_harmonic_oscillator_drift() {
        // N=1, F(q) = -q, gamma = 1, m = 1: drift(q, p) = (p, -q - p)
        let model = LangevinModel::new(
            1,
            1,
            vec![1.0],
            Arc::new(|q: &DVector<f64>| -q.clone()),
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1) * (2.0f64).sqrt(),
            1.0,
            false,
        )
        .unwrap();
        let sde = make_langevin_sde(&model).unwrap();
        let b = sde.drift(&DVector::from_vec(vec![0.7, -0.2]));
        assert!((b[0] - (-0.2)).abs() < 1e-15);
        assert!((b[1] - (-0.7 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn langevin_sde_noise_block_has_full_rank() {
        let n = 3;
        let mut model = free_particle(n);
        model = LangevinModel::new(
            n,
            1,
            model.masses().to_vec(),
            model.force_fn(),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n) * 1.3,
            1.0,
            true,
        )
        .unwrap();
        let sde = make_langevin_sde(&model).unwrap();
        let s = sde.diffusion_at(&DVector::zeros(2 * n));
        assert_eq!(s.nrows(), 2 * n);
        assert_eq!(s.ncols(), n);
        assert_eq!(s.rank(1e-12), n);
    }

    #[test]
    fn position_block_of_langevin_drift_is_minv_p() {
        let n = 4;
        let masses = vec![0.5, 1.0, 2.0, 4.0];
        let model = LangevinModel::new(
            n,
            1,
            masses.clone(),
            Arc::new(|q: &DVector<f64>| q.map(|v| v.sin())),
            DMatrix::identity(n, n) * 0.7,
            DMatrix::identity(n, n),
            2.0,
            false,
        )
        .unwrap();
        let sde = make_langevin_sde(&model).unwrap();
        let x = DVector::from_fn(2 * n, |i, _| (i as f64 - 3.0) * 0.37);
        let b = sde.drift(&x);
        for i in 0..n {
            assert_eq!(b[i], x[n + i] / masses[i]);
        }
    }

    #[test]
    fn fluctuation_dissipation_examples() {
        let make = |sigma_scale: f64, beta: f64| {
            LangevinModel::new(
                2,
                1,
                vec![1.0, 1.0],
                Arc::new(|q: &DVector<f64>| DVector::zeros(q.len())),
                DMatrix::identity(2, 2),
                DMatrix::identity(2, 2) * sigma_scale,
                beta,
                true,
            )
            .unwrap()
        };
        // sigma = sqrt(2) I, gamma = I, beta = 1: sigma sigma^T = 2 I = 2 beta^{-1} gamma
        assert!(check_fluctuation_dissipation(&make((2.0f64).sqrt(), 1.0), 1e-12));
        // sigma = I, gamma = I, beta = 1: 1 != 2
        assert!(!check_fluctuation_dissipation(&make(1.0, 1.0), 1e-12));
        // sigma = sqrt(2 / beta) I for any beta
        for beta in [0.25f64, 1.0, 7.5] {
            assert!(check_fluctuation_dissipation(&make((2.0 / beta).sqrt(), beta), 1e-12));
        }
    }

    #[test]
    fn parametric_family_trivial_values() {
        let basis: Vec<StateFn> = vec![
            Arc::new(|x: &DVector<f64>| x.clone()),
            Arc::new(|x: &DVector<f64>| x.map(|v| v * v * v)),
        ];
        let fam = ParametricDriftFamily::with_zero_theta(2, basis).unwrap();
        let x = DVector::from_vec(vec![1.5, -0.5]);
        assert_eq!(fam.eval(&x).unwrap(), DVector::zeros(2));

        // single basis phi(x) = x, theta = -2 -> -2x
        let fam1 = ParametricDriftFamily::new(
            2,
            vec![Arc::new(|x: &DVector<f64>| x.clone()) as StateFn],
            DVector::from_vec(vec![-2.0]),
        )
        .unwrap();
        assert_eq!(fam1.eval(&x).unwrap(), -2.0 * &x);

        // theta = e_j -> phi_j
        let fam2 = fam1
            .with_theta(DVector::from_vec(vec![1.0]))
            .unwrap();
        assert_eq!(fam2.eval(&x).unwrap(), x);
    }

    #[test]
    fn basis_dimension_mismatch_is_reported() {
        let fam = ParametricDriftFamily::new(
            2,
            vec![Arc::new(|_: &DVector<f64>| DVector::zeros(3)) as StateFn],
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        assert!(fam.eval(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn force_output_dimension_checked() {
        let bad = LangevinModel::new(
            2,
            1,
            vec![1.0, 1.0],
            Arc::new(|_: &DVector<f64>| DVector::zeros(5)),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            1.0,
            false,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn conservative_residual_detects_gradient_force() {
        let k = 1.7;
        let gibbs = GibbsSpec::new(
            Arc::new(move |q: &DVector<f64>| 0.5 * k * q.norm_squared()),
            1.0,
        )
        .unwrap();
        let force: StateFn = Arc::new(move |q: &DVector<f64>| -k * q);
        let pts: Vec<DVector<f64>> = (0..10)
            .map(|i| DVector::from_fn(3, |j, _| ((i * 3 + j) as f64 * 0.21).sin()))
            .collect();
        assert!(conservative_force_residual(&force, &gibbs, &pts) < 1e-5);

        let driven: StateFn = Arc::new(move |q: &DVector<f64>| -k * q + DVector::from_element(3, 0.5));
        assert!(conservative_force_residual(&driven, &gibbs, &pts) > 1e-2);
    }

    #[test]
    fn overdamped_drift_is_half_sigma_sq_grad() {
        let sigma = DMatrix::identity(2, 2) * (2.0f64).sqrt();
        let grad: StateFn = Arc::new(|x: &DVector<f64>| 2.0 * x);
        let sde = make_overdamped_sde(grad, sigma).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0]);
        // b = -1/2 * 2 I * 2x = -2x
        assert!((sde.drift(&x) + 2.0 * &x).amax() < 1e-12);
    }

    #[test]
    fn validate_rejects_rank_deficient_diffusion() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let sde = SdeModel::new(
            2,
            Arc::new(|x: &DVector<f64>| x.clone()),
            DiffusionField::Constant(sigma),
        )
        .unwrap();
        assert!(matches!(
            sde.validate_at(&DVector::zeros(2)),
            Err(Error::RankDeficient { .. })
        ));
    }
}
