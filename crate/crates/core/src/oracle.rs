//! Independent ground truth for the test suite: Lyapunov solves for
//! Ornstein–Uhlenbeck stationary laws, closed-form optimal coefficients for
//! linear fits under Gaussian measures, brute-force quadrature, and the
//! exact discretized-OU maximum-likelihood estimator.
//!
//! Nothing here shares code with the estimators it certifies; that is the
//! point of the module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::integrate::Trajectory;
use crate::model::{DiffusionField, SdeModel};

/// Linear test-bed model `dX = −A X dt + σ dB` with stable `A`.
#[derive(Debug, Clone)]
pub struct OuModel {
    a: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl OuModel {
    pub fn new(a: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || sigma.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                context: "OuModel drift/diffusion",
                expected: a.nrows(),
                got: sigma.nrows(),
            });
        }
        let eigs = a.complex_eigenvalues();
        for e in eigs.iter() {
            if e.re <= 0.0 {
                return Err(Error::UnstableDrift { real_part: e.re });
            }
        }
        Ok(Self { a, sigma })
    }

    pub fn scalar(a: f64, sigma: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, sigma))
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn noise_covariance(&self) -> DMatrix<f64> {
        &self.sigma * self.sigma.transpose()
    }

    /// Stationary covariance from `A C + C Aᵀ = σσᵀ`.
    pub fn stationary_covariance(&self) -> Result<DMatrix<f64>> {
        lyapunov_solve(&self.a, &self.noise_covariance())
    }

    /// The same model as a simulatable SDE.
    pub fn sde_model(&self) -> SdeModel {
        let a = self.a.clone();
        SdeModel::new(
            self.dim(),
            std::sync::Arc::new(move |x: &DVector<f64>| -(&a * x)),
            DiffusionField::Constant(self.sigma.clone()),
        )
        .expect("OuModel dimensions are validated on construction")
    }
}

/// Solves `A X + X Aᵀ = Q` for symmetric `X` by a direct solve on the
/// upper-triangle parameterization. The residual is certified to
/// `1e-12 · ‖Q‖` and `X` is required to be positive definite.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "lyapunov_solve",
            expected: n,
            got: q.nrows(),
        });
    }
    let m = n * (n + 1) / 2;
    let idx = |i: usize, j: usize| -> usize {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        // row-major upper triangle
        r * n - r * (r + 1) / 2 + c
    };

    let mut system = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for i in 0..n {
        for j in i..n {
            let row = idx(i, j);
            rhs[row] = q[(i, j)];
            for k in 0..n {
                // A_ik X_kj term
                system[(row, idx(k, j))] += a[(i, k)];
                // X_ik A_jk term
                system[(row, idx(i, k))] += a[(j, k)];
            }
        }
    }
    let lu = system.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or(Error::Singular { context: "lyapunov_solve linear system" })?;

    let mut x = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            x[(i, j)] = sol[idx(i, j)];
            x[(j, i)] = sol[idx(i, j)];
        }
    }

    let residual = (a * &x + &x * a.transpose() - q).norm();
    let tol = 1e-12 * q.norm().max(1e-300);
    if residual > tol {
        return Err(Error::InvalidArgument(format!(
            "Lyapunov residual {residual:.3e} exceeds {tol:.3e}; drift likely unstable"
        )));
    }
    let min_eig = x.clone().symmetric_eigen().eigenvalues.min();
    if min_eig <= 0.0 {
        return Err(Error::NotPositiveDefinite { context: "lyapunov_solve", min_eig });
    }
    Ok(x)
}

/// Closed-form optimal coefficient matrix for the full linear family
/// `b̄(x̄) = Θ x̄` fit against `Π b` under the stationary Gaussian law:
/// `Θ* = −(Π A C Πᵀ)(Π C Πᵀ)⁻¹` with `C` the stationary covariance.
/// For a full linear basis the weighting matrix cancels, so Θ* is the same
/// for every right inverse and every (invertible) norm weight.
pub fn ou_optimal_theta(ou: &OuModel, pi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if pi.ncols() != ou.dim() {
        return Err(Error::DimensionMismatch {
            context: "ou_optimal_theta map",
            expected: ou.dim(),
            got: pi.ncols(),
        });
    }
    let c = ou.stationary_covariance()?;
    let cross = pi * ou.a() * &c * pi.transpose();
    let gram = pi * &c * pi.transpose();
    let chol = gram
        .cholesky()
        .ok_or(Error::Singular { context: "ou_optimal_theta Gram matrix" })?;
    // Θ* = −cross · gram⁻¹, solve gramᵀ Xᵀ = crossᵀ
    let xt = chol.solve(&cross.transpose());
    Ok(-xt.transpose())
}

/// Scalar convenience for one-dimensional coarse spaces.
pub fn ou_optimal_theta_scalar(ou: &OuModel, pi: &DMatrix<f64>) -> Result<f64> {
    let th = ou_optimal_theta(ou, pi)?;
    if th.nrows() != 1 {
        return Err(Error::DimensionMismatch {
            context: "ou_optimal_theta_scalar",
            expected: 1,
            got: th.nrows(),
        });
    }
    Ok(th[(0, 0)])
}

/// Transient mean and covariance of the OU law started at a point mass,
/// integrated with RK4: `dm/dt = −A m`, `dC/dt = −A C − C Aᵀ + σσᵀ`.
pub fn ou_transient_moments(
    ou: &OuModel,
    x0: &DVector<f64>,
    t_max: f64,
    dt: f64,
) -> Vec<(f64, DVector<f64>, DMatrix<f64>)> {
    let q = ou.noise_covariance();
    let a = ou.a();
    let steps = (t_max / dt).round() as usize;
    let mut m = x0.clone();
    let mut c = DMatrix::zeros(ou.dim(), ou.dim());
    let mut out = Vec::with_capacity(steps + 1);
    out.push((0.0, m.clone(), c.clone()));
    let f_m = |m: &DVector<f64>| -(a * m);
    let f_c = |c: &DMatrix<f64>| -(a * c) - c * a.transpose() + &q;
    for i in 0..steps {
        let k1m = f_m(&m);
        let k1c = f_c(&c);
        let k2m = f_m(&(&m + &k1m * (dt / 2.0)));
        let k2c = f_c(&(&c + &k1c * (dt / 2.0)));
        let k3m = f_m(&(&m + &k2m * (dt / 2.0)));
        let k3c = f_c(&(&c + &k2c * (dt / 2.0)));
        let k4m = f_m(&(&m + &k3m * dt));
        let k4c = f_c(&(&c + &k3c * dt));
        m += (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (dt / 6.0);
        c += (k1c + k2c * 2.0 + k3c * 2.0 + k4c) * (dt / 6.0);
        out.push(((i + 1) as f64 * dt, m.clone(), c.clone()));
    }
    out
}

/// Time-averaged optimal linear coefficients over a finite horizon `[0, T]`
/// starting from a point mass: `Θ*(T) = −(Π A S̄ Πᵀ)(Π S̄ Πᵀ)⁻¹` with
/// `S̄ = ∫₀ᵀ E[X_t X_tᵀ] dt` accumulated by the trapezoid rule on the RK4
/// moment grid. The `T → 0` limit is the pointwise fit at `x0`.
pub fn ou_finite_time_theta(
    ou: &OuModel,
    pi: &DMatrix<f64>,
    x0: &DVector<f64>,
    t_horizon: f64,
    dt: f64,
) -> Result<DMatrix<f64>> {
    let moments = ou_transient_moments(ou, x0, t_horizon, dt);
    let n = ou.dim();
    let mut s_bar = DMatrix::zeros(n, n);
    for w in moments.windows(2) {
        let (_, m0, c0) = &w[0];
        let (_, m1, c1) = &w[1];
        let s0 = c0 + m0 * m0.transpose();
        let s1 = c1 + m1 * m1.transpose();
        s_bar += (s0 + s1) * (dt / 2.0);
    }
    if t_horizon == 0.0 {
        s_bar = x0 * x0.transpose();
    }
    let cross = pi * ou.a() * &s_bar * pi.transpose();
    let gram = pi * &s_bar * pi.transpose();
    let chol = gram
        .cholesky()
        .ok_or(Error::Singular { context: "ou_finite_time_theta Gram matrix" })?;
    let xt = chol.solve(&cross.transpose());
    Ok(-xt.transpose())
}

/// Tensor-grid specification for brute-force expectations.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: usize,
    /// Refinement must agree to this tolerance (absolute + relative mix).
    pub tol: f64,
}

impl QuadratureGrid {
    /// `[−10σ, 10σ]` per axis with 2001 points: Gaussian tails beyond the
    /// box are below 1e-20.
    pub fn gaussian(dim: usize, sigma: f64) -> Self {
        Self {
            lo: vec![-10.0 * sigma; dim],
            hi: vec![10.0 * sigma; dim],
            points: 2001,
            tol: 1e-8,
        }
    }
}

/// Trapezoid-rule expectation `∫ density(x) integrand(x) dx` on a tensor
/// grid of dimension 1 or 2, with one refinement doubling as the error
/// estimate. Fails if the refinement does not converge.
pub fn quadrature_expectation(
    density: impl Fn(&DVector<f64>) -> f64,
    integrand: impl Fn(&DVector<f64>) -> f64,
    grid: &QuadratureGrid,
) -> Result<(f64, f64)> {
    let dim = grid.lo.len();
    if dim == 0 || dim > 2 || grid.hi.len() != dim {
        return Err(Error::InvalidArgument(
            "quadrature supports dimensions 1 and 2".into(),
        ));
    }
    if grid.points < 3 {
        return Err(Error::InvalidArgument("quadrature needs at least 3 points".into()));
    }
    let eval = |points: usize| -> f64 {
        match dim {
            1 => {
                let (lo, hi) = (grid.lo[0], grid.hi[0]);
                let dx = (hi - lo) / (points - 1) as f64;
                let mut acc = 0.0;
                for i in 0..points {
                    let x = DVector::from_element(1, lo + i as f64 * dx);
                    let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
                    acc += w * density(&x) * integrand(&x);
                }
                acc * dx
            }
            _ => {
                let (lo0, hi0) = (grid.lo[0], grid.hi[0]);
                let (lo1, hi1) = (grid.lo[1], grid.hi[1]);
                let dx0 = (hi0 - lo0) / (points - 1) as f64;
                let dx1 = (hi1 - lo1) / (points - 1) as f64;
                let mut acc = 0.0;
                let mut x = DVector::zeros(2);
                for i in 0..points {
                    let wi = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
                    x[0] = lo0 + i as f64 * dx0;
                    for j in 0..points {
                        let wj = if j == 0 || j == points - 1 { 0.5 } else { 1.0 };
                        x[1] = lo1 + j as f64 * dx1;
                        acc += wi * wj * density(&x) * integrand(&x);
                    }
                }
                acc * dx0 * dx1
            }
        }
    };
    let coarse = eval(grid.points);
    let fine = eval(2 * grid.points - 1);
    let err = (fine - coarse).abs();
    if err > grid.tol * fine.abs().max(1.0) {
        return Err(Error::UnconvergedQuadrature { err });
    }
    Ok((fine, err))
}

/// Closed-form discrete-MLE estimate for a 1D Euler-discretized linear
/// drift `b̄(x) = θ x`.
#[derive(Debug, Clone, Copy)]
pub struct OuMleEstimate {
    pub theta_hat: f64,
    pub std_error: f64,
}

/// `θ̂ = Σ xᵢ (xᵢ₊₁ − xᵢ) / (h Σ xᵢ²)`, the exact weighted-least-squares
/// solution of the Gaussian increment likelihood, with its asymptotic
/// standard error `sqrt(σ̂² / (h Σ xᵢ²))` from the residual variance.
pub fn discrete_ou_mle(series: &Trajectory) -> Result<OuMleEstimate> {
    if series.dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "discrete_ou_mle input",
            expected: 1,
            got: series.dim(),
        });
    }
    if series.len() < 2 {
        return Err(Error::EmptyInput { context: "discrete_ou_mle increments" });
    }
    let h = series.step();
    let xs = series.component(0);
    let n = xs.len() - 1;
    let mut sum_x_dx = 0.0;
    let mut sum_x2 = 0.0;
    for i in 0..n {
        sum_x_dx += xs[i] * (xs[i + 1] - xs[i]);
        sum_x2 += xs[i] * xs[i];
    }
    if sum_x2 <= 1e-300 * n as f64 {
        return Err(Error::ZeroDenominator { context: "discrete_ou_mle (constant series)" });
    }
    let theta_hat = sum_x_dx / (h * sum_x2);
    let mut rss = 0.0;
    for i in 0..n {
        let r = xs[i + 1] - xs[i] - theta_hat * xs[i] * h;
        rss += r * r;
    }
    let sigma2_hat = rss / (n as f64 * h);
    let std_error = (sigma2_hat / (h * sum_x2)).sqrt();
    Ok(OuMleEstimate { theta_hat, std_error })
}
