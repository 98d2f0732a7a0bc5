//! Linear coarse-graining maps, their right inverses, coarse coefficients
//! and reconstructed drifts.
//!
//! A CG map is a full-rank matrix `Π ∈ ℝ^{m×n}` with cached right inverse
//! `Π♯ = Πᵀ(ΠΠᵀ)⁻¹`, so `ΠΠ♯ = I_m`. Phase-space maps pair a position map
//! `Π_q` with the momentum map `Π_p = M̄ Π_q M⁻¹`, whose right inverse is
//! `Π♯_p = M Π♯_q M̄⁻¹`. Coarse diffusions are `Σ̄ = Π Σ Πᵀ` and coarse
//! frictions come in two flavours: transporting the microscopic friction
//! (`γ̄ Π_q = Π_p γ`) or enforcing fluctuation–dissipation on the coarse
//! space (`γ̄ = Π_p γ Π_pᵀ`).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::integrate::{simulate_ensemble, Dynamics, Ensemble, RngSpec, Scheme, Trajectory};
use crate::model::{DiffusionField, LangevinModel, ParametricDriftFamily, StateFn, RANK_TOL};
use crate::stats::mean_and_batch_se;

/// How a map was constructed; only affects reporting and serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgMapKind {
    CenterOfMass,
    Projection,
    General,
}

impl CgMapKind {
    pub fn name(&self) -> &'static str {
        match self {
            CgMapKind::CenterOfMass => "center_of_mass",
            CgMapKind::Projection => "projection",
            CgMapKind::General => "general",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "center_of_mass" => Ok(CgMapKind::CenterOfMass),
            "projection" => Ok(CgMapKind::Projection),
            "general" => Ok(CgMapKind::General),
            other => Err(Error::Parse(format!("unknown cg map kind '{other}'"))),
        }
    }
}

/// Tolerance on `ΠΠ♯ − I` for constructed maps.
pub const RIGHT_INVERSE_TOL: f64 = 1e-12;

/// Full-rank linear CG map with cached right inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct CgMap {
    matrix: DMatrix<f64>,
    right_inverse: DMatrix<f64>,
    kind: CgMapKind,
}

impl CgMap {
    pub fn new(matrix: DMatrix<f64>, kind: CgMapKind) -> Result<Self> {
        let ri = right_inverse(&matrix)?;
        let defect = (&matrix * &ri - DMatrix::identity(matrix.nrows(), matrix.nrows())).amax();
        if defect > RIGHT_INVERSE_TOL {
            return Err(Error::InvalidArgument(format!(
                "right inverse defect {defect:.3e} exceeds {RIGHT_INVERSE_TOL:.1e}"
            )));
        }
        Ok(Self { matrix, right_inverse: ri, kind })
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn kind(&self) -> CgMapKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn right_inverse(&self) -> &DMatrix<f64> {
        &self.right_inverse
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
}

/// `Π♯ = Πᵀ(ΠΠᵀ)⁻¹` for a full-rank `Π`; rejects rank-deficient input with
/// the singular values attached.
pub fn right_inverse(pi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = pi.nrows();
    let n = pi.ncols();
    if m == 0 || n == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "CG map must be m x n with 1 <= m <= n, got {m} x {n}"
        )));
    }
    let svals = pi.singular_values();
    let smax = svals.max();
    if svals.min() <= RANK_TOL * smax {
        return Err(Error::RankDeficient {
            singular_values: svals.iter().copied().collect(),
        });
    }
    let gram = pi * pi.transpose();
    let chol = gram
        .cholesky()
        .ok_or(Error::Singular { context: "right_inverse Gram matrix" })?;
    // solve (Π Πᵀ) X = Π, then Π♯ = Xᵀ
    let x = chol.solve(pi);
    Ok(x.transpose())
}

/// Phase-space CG map: positions via `Π_q`, momenta via `Π_p = M̄ Π_q M⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCgMap {
    pos: CgMap,
    mom: DMatrix<f64>,
    mom_right_inverse: DMatrix<f64>,
    micro_masses: Vec<f64>,
    cg_masses: Vec<f64>,
    space_dim: usize,
}

impl PhaseCgMap {
    pub fn new(
        pos_matrix: DMatrix<f64>,
        kind: CgMapKind,
        micro_masses: Vec<f64>,
        cg_masses: Vec<f64>,
        space_dim: usize,
    ) -> Result<Self> {
        if space_dim == 0 {
            return Err(Error::InvalidArgument("space_dim must be >= 1".into()));
        }
        let n_dof = pos_matrix.ncols();
        let m_dof = pos_matrix.nrows();
        if n_dof != micro_masses.len() * space_dim {
            return Err(Error::DimensionMismatch {
                context: "phase map columns vs micro masses",
                expected: micro_masses.len() * space_dim,
                got: n_dof,
            });
        }
        if m_dof != cg_masses.len() * space_dim {
            return Err(Error::DimensionMismatch {
                context: "phase map rows vs cg masses",
                expected: cg_masses.len() * space_dim,
                got: m_dof,
            });
        }
        if micro_masses.iter().chain(cg_masses.iter()).any(|&m| !(m > 0.0)) {
            return Err(Error::InvalidArgument("masses must be strictly positive".into()));
        }
        let pos = CgMap::new(pos_matrix, kind)?;

        let micro_m = per_coordinate(&micro_masses, space_dim);
        let cg_m = per_coordinate(&cg_masses, space_dim);

        // Π_p = M̄ Π_q M⁻¹ and Π♯_p = M Π♯_q M̄⁻¹, exact diagonal scalings.
        let mut mom = pos.matrix().clone();
        for i in 0..m_dof {
            for j in 0..n_dof {
                mom[(i, j)] *= cg_m[i] / micro_m[j];
            }
        }
        let mut mom_ri = pos.right_inverse().clone();
        for i in 0..n_dof {
            for j in 0..m_dof {
                mom_ri[(i, j)] *= micro_m[i] / cg_m[j];
            }
        }
        let defect = (&mom * &mom_ri - DMatrix::identity(m_dof, m_dof)).amax();
        if defect > RIGHT_INVERSE_TOL {
            return Err(Error::InvalidArgument(format!(
                "momentum right inverse defect {defect:.3e}"
            )));
        }
        Ok(Self {
            pos,
            mom,
            mom_right_inverse: mom_ri,
            micro_masses,
            cg_masses,
            space_dim,
        })
    }

    pub fn pos(&self) -> &CgMap {
        &self.pos
    }

    pub fn mom(&self) -> &DMatrix<f64> {
        &self.mom
    }

    pub fn mom_right_inverse(&self) -> &DMatrix<f64> {
        &self.mom_right_inverse
    }

    pub fn micro_masses(&self) -> &[f64] {
        &self.micro_masses
    }

    pub fn cg_masses(&self) -> &[f64] {
        &self.cg_masses
    }

    pub fn space_dim(&self) -> usize {
        self.space_dim
    }

    /// Coarse degrees of freedom (rows of `Π_q`).
    pub fn m_dof(&self) -> usize {
        self.pos.m()
    }

    /// Microscopic degrees of freedom (columns of `Π_q`).
    pub fn n_dof(&self) -> usize {
        self.pos.n()
    }

    /// Per-coordinate CG mass vector.
    pub fn cg_mass_vector(&self) -> DVector<f64> {
        DVector::from_vec(per_coordinate(&self.cg_masses, self.space_dim))
    }

    /// Block-diagonal phase-space map `diag(Π_q, Π_p)` acting on `(q, p)`.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let (m, n) = (self.m_dof(), self.n_dof());
        let mut full = DMatrix::zeros(2 * m, 2 * n);
        full.view_mut((0, 0), (m, n)).copy_from(self.pos.matrix());
        full.view_mut((m, n), (m, n)).copy_from(&self.mom);
        full
    }

    /// Block-diagonal right inverse `diag(Π♯_q, Π♯_p)`.
    pub fn full_right_inverse(&self) -> DMatrix<f64> {
        let (m, n) = (self.m_dof(), self.n_dof());
        let mut full = DMatrix::zeros(2 * n, 2 * m);
        full.view_mut((0, 0), (n, m)).copy_from(self.pos.right_inverse());
        full.view_mut((n, m), (n, m)).copy_from(&self.mom_right_inverse);
        full
    }
}

fn per_coordinate(masses: &[f64], space_dim: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(masses.len() * space_dim);
    for &m in masses {
        for _ in 0..space_dim {
            v.push(m);
        }
    }
    v
}

/// Maps each particle group to its center of mass. `groups[j]` lists the
/// particles of CG particle `j`; the groups must partition `0..N`. The CG
/// mass is the group's total mass, which makes every entry of `Π_p` equal to
/// one on the group membership pattern.
pub fn make_center_of_mass_map(
    masses: &[f64],
    groups: &[Vec<usize>],
    space_dim: usize,
) -> Result<PhaseCgMap> {
    let n = masses.len();
    if groups.is_empty() {
        return Err(Error::EmptyInput { context: "center-of-mass groups" });
    }
    let mut seen = vec![false; n];
    for g in groups {
        if g.is_empty() {
            return Err(Error::InvalidArgument("empty center-of-mass group".into()));
        }
        for &i in g {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "particle index {i} out of range (N = {n})"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidArgument(format!(
                    "particle {i} assigned to more than one group"
                )));
            }
            seen[i] = true;
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::InvalidArgument(
            "groups do not cover all particles".into(),
        ));
    }

    let m = groups.len();
    let mut zeta = DMatrix::zeros(m, n);
    let mut cg_masses = Vec::with_capacity(m);
    for (j, g) in groups.iter().enumerate() {
        let total: f64 = g.iter().map(|&i| masses[i]).sum();
        cg_masses.push(total);
        for &i in g {
            zeta[(j, i)] = masses[i] / total;
        }
    }
    let pos = zeta.kronecker(&DMatrix::identity(space_dim, space_dim));
    PhaseCgMap::new(pos, CgMapKind::CenterOfMass, masses.to_vec(), cg_masses, space_dim)
}

/// 0/1 selection of a coordinate subset; `Π♯ = Πᵀ` by orthonormality.
pub fn make_projection_map(n: usize, kept: &[usize]) -> Result<CgMap> {
    if kept.is_empty() {
        return Err(Error::EmptyInput { context: "projection index set" });
    }
    let mut seen = std::collections::HashSet::new();
    for &i in kept {
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "kept index {i} out of range (n = {n})"
            )));
        }
        if !seen.insert(i) {
            return Err(Error::InvalidArgument(format!("kept index {i} repeated")));
        }
    }
    let mut pi = DMatrix::zeros(kept.len(), n);
    for (row, &i) in kept.iter().enumerate() {
        pi[(row, i)] = 1.0;
    }
    CgMap::new(pi, CgMapKind::Projection)
}

/// Phase-space projection onto a particle subset. Here `Π_p = Π_q` and the
/// CG masses are the kept particles' own masses.
pub fn make_projection_phase_map(
    masses: &[f64],
    kept_particles: &[usize],
    space_dim: usize,
) -> Result<PhaseCgMap> {
    let n = masses.len();
    let mut coords = Vec::with_capacity(kept_particles.len() * space_dim);
    let mut cg_masses = Vec::with_capacity(kept_particles.len());
    let mut seen = std::collections::HashSet::new();
    for &i in kept_particles {
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "kept particle {i} out of range (N = {n})"
            )));
        }
        if !seen.insert(i) {
            return Err(Error::InvalidArgument(format!("kept particle {i} repeated")));
        }
        cg_masses.push(masses[i]);
        for d in 0..space_dim {
            coords.push(i * space_dim + d);
        }
    }
    let sel = make_projection_map(n * space_dim, &coords)?;
    PhaseCgMap::new(
        sel.matrix().clone(),
        CgMapKind::Projection,
        masses.to_vec(),
        cg_masses,
        space_dim,
    )
}

/// Coarse diffusion `Σ̄ = Π Σ(x) Πᵀ` together with its symmetric square
/// root factor.
#[derive(Debug, Clone)]
pub struct CgDiffusion {
    /// `Σ̄ = σ̄ σ̄ᵀ`.
    pub covariance: DMatrix<f64>,
    /// Symmetric positive square root of the covariance.
    pub factor: DMatrix<f64>,
}

/// Computes `Σ̄ = Π Σ(x) Πᵀ`. For state-dependent σ the product must be
/// constant over the supplied samples within `tol`, otherwise the coarse
/// diffusion is not a function of the coarse state and the map is rejected.
pub fn cg_diffusion(
    sigma: &DiffusionField,
    pi: &DMatrix<f64>,
    samples: &[DVector<f64>],
    tol: f64,
) -> Result<CgDiffusion> {
    let covariance = match sigma {
        DiffusionField::Constant(s) => {
            let big = s * s.transpose();
            pi * big * pi.transpose()
        }
        DiffusionField::StateDependent { field, .. } => {
            let first = samples.first().ok_or(Error::EmptyInput {
                context: "cg_diffusion samples (state-dependent sigma)",
            })?;
            let project = |x: &DVector<f64>| {
                let s = field(x);
                pi * (&s * s.transpose()) * pi.transpose()
            };
            let reference = project(first);
            let scale = reference.amax().max(1e-300);
            let mut worst = 0.0f64;
            for x in samples.iter().skip(1) {
                let dev = (project(x) - &reference).amax() / scale;
                worst = worst.max(dev);
            }
            if worst > tol {
                return Err(Error::StateDependentCgDiffusion { deviation: worst, tol });
            }
            reference
        }
    };
    let factor = symmetric_sqrt(&covariance, "cg_diffusion")?;
    Ok(CgDiffusion { covariance, factor })
}

/// Symmetric positive square root via eigendecomposition.
pub fn symmetric_sqrt(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    let max_eig = eig.eigenvalues.max().max(0.0);
    if min_eig <= -1e-12 * max_eig.max(1.0) || max_eig <= 0.0 {
        return Err(Error::NotPositiveDefinite { context, min_eig });
    }
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut scaled = eig.eigenvectors.clone();
    for (j, s) in sqrt_vals.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    Ok(&scaled * eig.eigenvectors.transpose())
}

/// Which coarse friction to build.
///
/// `Transform` solves `γ̄ Π_q = Π_p γ` (the coarse friction transports the
/// microscopic friction forces); `FluctuationDissipation` takes
/// `γ̄ = Π_p γ Π_pᵀ`, which keeps `σ̄σ̄ᵀ = 2β⁻¹γ̄` whenever the microscopic
/// model satisfies fluctuation–dissipation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrictionOption {
    Transform,
    FluctuationDissipation,
}

impl FrictionOption {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "a" | "transform" => Ok(FrictionOption::Transform),
            "b" | "fluctuation_dissipation" => Ok(FrictionOption::FluctuationDissipation),
            other => Err(Error::Parse(format!("unknown friction option '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FrictionOption::Transform => "a",
            FrictionOption::FluctuationDissipation => "b",
        }
    }
}

/// Relative tolerance on the `γ̄ Π_q = Π_p γ` consistency residual.
pub const FRICTION_RESIDUAL_TOL: f64 = 1e-10;

/// Coarse friction matrix for the chosen option.
pub fn cg_friction(
    model: &LangevinModel,
    pm: &PhaseCgMap,
    option: FrictionOption,
) -> Result<DMatrix<f64>> {
    let gamma = model.friction();
    let pig = pm.mom() * gamma;
    match option {
        FrictionOption::Transform => {
            // gamma_bar = Pi_p gamma Pi_q^sharp, then verify the equation was solvable
            let gbar = &pig * pm.pos().right_inverse();
            let residual = (&gbar * pm.pos().matrix() - &pig).norm();
            let tol = FRICTION_RESIDUAL_TOL * pig.norm().max(1e-300);
            if residual > tol {
                return Err(Error::FrictionInconsistent { residual, tol });
            }
            Ok(gbar)
        }
        FrictionOption::FluctuationDissipation => Ok(&pig * pm.mom().transpose()),
    }
}

/// Reconstruction recipe: the CG map plus the θ-independent orthogonal part
/// `y⊥(x)` of the reconstructed drift.
#[derive(Clone)]
pub struct ReconstructionSpec {
    cg_map: CgMap,
    orthogonal_part: StateFn,
}

impl ReconstructionSpec {
    pub fn new(cg_map: CgMap, orthogonal_part: StateFn) -> Self {
        Self { cg_map, orthogonal_part }
    }

    /// Uses the microscopic drift itself as `y⊥`, so the reconstructed and
    /// microscopic drifts differ only inside the coarse directions and the
    /// stationary estimator carries no θ-independent offset.
    pub fn with_drift_complement(cg_map: CgMap, micro_drift: StateFn) -> Self {
        Self::new(cg_map, micro_drift)
    }

    pub fn cg_map(&self) -> &CgMap {
        &self.cg_map
    }

    pub fn orthogonal_part(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.orthogonal_part)(x)
    }

    /// Largest violation of `Π (I − Π♯Π) y⊥(x) = 0` over the samples.
    /// Zero up to roundoff for any `y⊥` by algebra; this is a numerical
    /// sanity check of the cached right inverse.
    pub fn orthogonality_defect(&self, samples: &[DVector<f64>]) -> f64 {
        let pi = self.cg_map.matrix();
        let ri = self.cg_map.right_inverse();
        samples
            .iter()
            .map(|x| {
                let y = self.orthogonal_part(x);
                let res = pi * (&y - ri * (pi * &y));
                res.amax()
            })
            .fold(0.0, f64::max)
    }
}

/// Reconstructed drift `b̃(x; θ) = Π♯ b̄(Πx; θ) + (I − Π♯Π) y⊥(x)`.
/// By construction `Π b̃ = b̄ ∘ Π`.
pub fn reconstruct_drift(
    family: &ParametricDriftFamily,
    theta: &DVector<f64>,
    spec: &ReconstructionSpec,
) -> StateFn {
    let cg_drift = family.drift_fn(theta);
    let pi = spec.cg_map.matrix().clone();
    let ri = spec.cg_map.right_inverse().clone();
    let y_perp = Arc::clone(&spec.orthogonal_part);
    Arc::new(move |x: &DVector<f64>| {
        let xbar = &pi * x;
        let y = y_perp(x);
        let lift = &ri * cg_drift(&xbar);
        let orth = &y - &ri * (&pi * &y);
        lift + orth
    })
}

/// Applies `Π` rowwise to every state; metadata (step, seed, replica) is
/// preserved and the dimension becomes `m`.
pub fn project_trajectory(traj: &Trajectory, pi: &DMatrix<f64>) -> Result<Trajectory> {
    if pi.ncols() != traj.dim() {
        return Err(Error::DimensionMismatch {
            context: "project_trajectory",
            expected: traj.dim(),
            got: pi.ncols(),
        });
    }
    let states = traj.states().iter().map(|s| pi * s).collect();
    Trajectory::new(pi.nrows(), traj.step(), states, traj.seed(), traj.replica())
}

/// Projects every replica of an ensemble.
pub fn project_ensemble(ens: &Ensemble, pi: &DMatrix<f64>) -> Result<Ensemble> {
    let projected: Result<Vec<Trajectory>> =
        ens.trajectories().iter().map(|t| project_trajectory(t, pi)).collect();
    Ensemble::new(projected?)
}

/// Mean/covariance comparison of `Π X_t` against `X̄_t` at one time.
#[derive(Debug, Clone)]
pub struct TimeComparison {
    pub time: f64,
    pub mean_diff: DVector<f64>,
    pub mean_se: DVector<f64>,
    pub cov_diff: DMatrix<f64>,
    pub cov_se: DMatrix<f64>,
    pub max_z: f64,
    pub pass: bool,
}

/// Result of [`verify_reconstruction`].
#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    pub comparisons: Vec<TimeComparison>,
    pub n_replicas: usize,
    pub pass: bool,
}

impl std::fmt::Display for ReconstructionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "reconstruction check ({} replicas)", self.n_replicas)?;
        for c in &self.comparisons {
            writeln!(
                f,
                "  t={:<6} max|dmean|={:.3e} max|dcov|={:.3e} max_z={:.2} {}",
                c.time,
                c.mean_diff.amax(),
                c.cov_diff.amax(),
                c.max_z,
                if c.pass { "pass" } else { "FAIL" }
            )?;
        }
        write!(f, "overall: {}", if self.pass { "pass" } else { "FAIL" })
    }
}

/// Simulates the microscopic and coarse processes and checks that `Π X_t`
/// and `X̄_t` agree in mean and covariance at the requested times, within
/// three standard errors componentwise.
///
/// The coarse initial condition is drawn by projecting fresh samples of the
/// microscopic initial sampler, so both sides start from the same coarse
/// law. Micro replica `r` uses stream `r`; coarse replica `r` uses stream
/// `n_replicas + r`.
#[allow(clippy::too_many_arguments)]
pub fn verify_reconstruction(
    micro: &Dynamics,
    micro_scheme: Scheme,
    cg: &Dynamics,
    cg_scheme: Scheme,
    pi_full: &DMatrix<f64>,
    x0_sampler: &(dyn Fn(&mut ChaCha12Rng) -> DVector<f64> + Sync),
    h: f64,
    times: &[f64],
    n_replicas: usize,
    rng: &RngSpec,
) -> Result<ReconstructionReport> {
    if times.is_empty() {
        return Err(Error::EmptyInput { context: "verify_reconstruction times" });
    }
    let t_max = times.iter().cloned().fold(0.0f64, f64::max);
    let steps = (t_max / h).round() as usize;

    let micro_ens = simulate_ensemble(micro, micro_scheme, x0_sampler, h, steps, n_replicas, 0, rng)?;
    let projected = project_ensemble(&micro_ens, pi_full)?;

    // shift streams so the coarse replicas are independent of the micro ones;
    // each replica keeps drawing from its own stream after sampling x0
    let offset = n_replicas as u32;
    let cg_ens = {
        let trajectories: Result<Vec<Trajectory>> = (0..n_replicas as u32)
            .map(|r| {
                let mut stream = rng.stream(offset + r);
                let x0 = pi_full * x0_sampler(&mut stream);
                crate::integrate::simulate_with_rng(
                    cg,
                    cg_scheme,
                    &x0,
                    h,
                    steps,
                    0,
                    &mut stream,
                    rng.master_seed,
                    offset + r,
                )
            })
            .collect();
        Ensemble::new(trajectories?)?
    };

    let m = projected.dim();
    let mut comparisons = Vec::with_capacity(times.len());
    let mut all_pass = true;
    for &t in times {
        let idx = (t / h).round() as usize;
        let a = projected.cross_section(idx);
        let b = cg_ens.cross_section(idx);

        let mut mean_diff = DVector::zeros(m);
        let mut mean_se = DVector::zeros(m);
        let mut max_z = 0.0f64;
        let mut mean_a = DVector::zeros(m);
        let mut mean_b = DVector::zeros(m);
        for j in 0..m {
            let va: Vec<f64> = a.iter().map(|s| s[j]).collect();
            let vb: Vec<f64> = b.iter().map(|s| s[j]).collect();
            let (ma, sa) = mean_and_batch_se(&va, 32);
            let (mb, sb) = mean_and_batch_se(&vb, 32);
            mean_a[j] = ma;
            mean_b[j] = mb;
            mean_diff[j] = ma - mb;
            mean_se[j] = (sa * sa + sb * sb).sqrt();
            if mean_se[j] > 0.0 {
                max_z = max_z.max(mean_diff[j].abs() / mean_se[j]);
            }
        }

        let mut cov_diff = DMatrix::zeros(m, m);
        let mut cov_se = DMatrix::zeros(m, m);
        for j in 0..m {
            for k in j..m {
                let pa: Vec<f64> = a.iter().map(|s| (s[j] - mean_a[j]) * (s[k] - mean_a[k])).collect();
                let pb: Vec<f64> = b.iter().map(|s| (s[j] - mean_b[j]) * (s[k] - mean_b[k])).collect();
                let (ca, sa) = mean_and_batch_se(&pa, 32);
                let (cb, sb) = mean_and_batch_se(&pb, 32);
                let d = ca - cb;
                let se = (sa * sa + sb * sb).sqrt();
                cov_diff[(j, k)] = d;
                cov_diff[(k, j)] = d;
                cov_se[(j, k)] = se;
                cov_se[(k, j)] = se;
                if se > 0.0 {
                    max_z = max_z.max(d.abs() / se);
                }
            }
        }

        let pass = max_z <= 3.0;
        all_pass &= pass;
        comparisons.push(TimeComparison {
            time: t,
            mean_diff,
            mean_se,
            cov_diff,
            cov_se,
            max_z,
            pass,
        });
    }

    Ok(ReconstructionReport {
        comparisons,
        n_replicas,
        pass: all_pass,
    })
}

/// Builds the coarse Langevin model induced by a phase map: fitted force
/// `F̄(·; θ)`, friction per the chosen option, noise from the symmetric
/// square root of `Π_p Σ Π_pᵀ`, masses and β inherited.
pub fn cg_langevin_model(
    micro: &LangevinModel,
    pm: &PhaseCgMap,
    family: &ParametricDriftFamily,
    theta: &DVector<f64>,
    option: FrictionOption,
) -> Result<LangevinModel> {
    let gamma_bar = cg_friction(micro, pm, option)?;
    let diff = cg_diffusion(
        &DiffusionField::Constant(micro.noise().clone()),
        pm.mom(),
        &[],
        0.0,
    )?;
    let force = family.drift_fn(theta);
    LangevinModel::new(
        pm.cg_masses().len(),
        pm.space_dim(),
        pm.cg_masses().to_vec(),
        force,
        gamma_bar,
        diff.factor,
        micro.beta(),
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::point_sampler;
    use crate::model::SdeModel;
    use nalgebra::dmatrix;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn right_inverse_of_selection_block() {
        // Pi = [I_m | 0] -> Pi# = [I_m; 0]
        let mut pi = DMatrix::zeros(2, 4);
        pi[(0, 0)] = 1.0;
        pi[(1, 1)] = 1.0;
        let ri = right_inverse(&pi).unwrap();
        assert_eq!(ri, pi.transpose());
    }

    #[test]
    fn right_inverse_of_random_wide_matrix() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let pi = DMatrix::from_fn(2, 5, |_, _| rng.gen::<f64>() - 0.5);
        let ri = right_inverse(&pi).unwrap();
        let defect = (&pi * &ri - DMatrix::identity(2, 2)).amax();
        assert!(defect <= 1e-12, "defect {defect}");
    }

    #[test]
    fn right_inverse_rejects_rank_deficiency() {
        let pi = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(right_inverse(&pi), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn com_map_two_equal_masses_single_group() {
        // N=2 equal masses, one group: Pi_q = [1/2, 1/2] (x) I_3,
        // Pi_p = [1, 1] (x) I_3
        let pm = make_center_of_mass_map(&[1.0, 1.0], &[vec![0, 1]], 3).unwrap();
        let half = dmatrix![0.5, 0.5].kronecker(&DMatrix::identity(3, 3));
        let ones = dmatrix![1.0, 1.0].kronecker(&DMatrix::identity(3, 3));
        assert_eq!(pm.pos().matrix(), &half);
        assert_eq!(pm.mom(), &ones);
        assert_eq!(pm.cg_masses(), &[2.0]);
        // Pi#_q = Pi_p^T for equal-mass centers of mass
        assert!((pm.pos().right_inverse() - ones.transpose()).amax() < 1e-14);
        // Pi#_p = M Pi#_q Mbar^{-1} = Pi_q^T here
        assert!((pm.mom_right_inverse() - half.transpose()).amax() < 1e-14);
    }

    #[test]
    fn com_map_single_particle_is_identity() {
        let pm = make_center_of_mass_map(&[1.5], &[vec![0]], 3).unwrap();
        assert_eq!(pm.pos().matrix(), &DMatrix::identity(3, 3));
        assert_eq!(pm.mom(), &DMatrix::identity(3, 3));
    }

    #[test]
    fn com_rows_sum_to_one_and_momentum_entries_are_unit() {
        let masses = [1.0, 2.5, 0.5, 3.0, 1.2];
        let groups = vec![vec![0, 2], vec![1, 3, 4]];
        let pm = make_center_of_mass_map(&masses, &groups, 2).unwrap();
        for i in 0..pm.pos().matrix().nrows() {
            let row_sum: f64 = pm.pos().matrix().row(i).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-14);
        }
        for (j, g) in groups.iter().enumerate() {
            for &i in g {
                for d in 0..2 {
                    assert!((pm.mom()[(j * 2 + d, i * 2 + d)] - 1.0).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn momentum_map_consistency_is_exact() {
        let masses = [1.0, 2.0, 4.0, 0.5];
        let pm = make_center_of_mass_map(&masses, &[vec![0, 1], vec![2, 3]], 3).unwrap();
        // Pi_p = Mbar Pi_q M^{-1} entrywise
        let micro = per_coordinate(&masses, 3);
        let cg = per_coordinate(pm.cg_masses(), 3);
        for i in 0..pm.mom().nrows() {
            for j in 0..pm.mom().ncols() {
                let expected = cg[i] * pm.pos().matrix()[(i, j)] / micro[j];
                assert_eq!(pm.mom()[(i, j)], expected);
            }
        }
        // Pi#_p = M Pi#_q Mbar^{-1} entrywise
        for i in 0..pm.mom_right_inverse().nrows() {
            for j in 0..pm.mom_right_inverse().ncols() {
                let expected = micro[i] * pm.pos().right_inverse()[(i, j)] / cg[j];
                assert!((pm.mom_right_inverse()[(i, j)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gram_constant_of_transpose_lift() {
        // Remark-style Gram identities: the plain transpose lift u -> Pi_p^T u
        // satisfies (Pi_p^T)^T (Pi_p^T) = (N/2) I per block for the M = 2
        // equal-mass center-of-mass map, and exactly I for projections.
        let n = 6;
        let groups = vec![(0..n / 2).collect::<Vec<_>>(), (n / 2..n).collect::<Vec<_>>()];
        let pm = make_center_of_mass_map(&vec![1.0; n], &groups, 1).unwrap();
        let gram = pm.mom() * pm.mom().transpose();
        let expected = DMatrix::identity(2, 2) * (n as f64 / 2.0);
        assert!((gram - expected).amax() < 1e-12);

        let proj = make_projection_map(5, &[1, 3]).unwrap();
        let gram_p = proj.matrix() * proj.matrix().transpose();
        assert!((gram_p - DMatrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn projection_map_examples() {
        let all = make_projection_map(3, &[0, 1, 2]).unwrap();
        assert_eq!(all.matrix(), &DMatrix::identity(3, 3));

        let one = make_projection_map(3, &[0]).unwrap();
        assert_eq!(one.matrix(), &DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]));
        assert_eq!(one.right_inverse(), &one.matrix().transpose());

        assert!(make_projection_map(3, &[5]).is_err());
        assert!(make_projection_map(3, &[1, 1]).is_err());
        assert!(make_projection_map(3, &[]).is_err());
    }

    #[test]
    fn cg_diffusion_scaled_identity() {
        let c = 1.7;
        let sigma = DiffusionField::Constant(DMatrix::identity(4, 4) * c);
        let pi = make_projection_map(4, &[0, 2]).unwrap();
        let d = cg_diffusion(&sigma, pi.matrix(), &[], 0.0).unwrap();
        assert!((&d.covariance - DMatrix::identity(2, 2) * (c * c)).amax() < 1e-14);
        assert!((&d.factor - DMatrix::identity(2, 2) * c).amax() < 1e-12);
    }

    #[test]
    fn cg_diffusion_com_momentum_map() {
        // M = 2 groups of N/2 particles each, sigma = c I: Sigma_bar = c^2 (N/2) I_6
        let n = 8;
        let c = 0.6;
        let groups = vec![(0..n / 2).collect::<Vec<_>>(), (n / 2..n).collect::<Vec<_>>()];
        let pm = make_center_of_mass_map(&vec![1.0; n], &groups, 3).unwrap();
        let sigma = DiffusionField::Constant(DMatrix::identity(3 * n, 3 * n) * c);
        let d = cg_diffusion(&sigma, pm.mom(), &[], 0.0).unwrap();
        let expected = DMatrix::identity(6, 6) * (c * c * n as f64 / 2.0);
        assert!((&d.covariance - expected).amax() < 1e-12);
    }

    #[test]
    fn cg_diffusion_identity_map_returns_sigma_sq() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.8]);
        let sigma = DiffusionField::Constant(s.clone());
        let pi = DMatrix::identity(2, 2);
        let d = cg_diffusion(&sigma, &pi, &[], 0.0).unwrap();
        assert!((&d.covariance - &s * s.transpose()).amax() < 1e-14);
        // factor is a genuine square root
        assert!((&d.factor * d.factor.transpose() - &d.covariance).amax() < 1e-12);
    }

    #[test]
    fn cg_diffusion_rejects_state_dependent_product() {
        let field: crate::model::MatrixFn =
            Arc::new(|x: &DVector<f64>| DMatrix::identity(2, 2) * (1.0 + x[0] * x[0]));
        let sigma = DiffusionField::StateDependent { noise_dim: 2, field };
        let pi = DMatrix::identity(2, 2);
        let samples = vec![DVector::zeros(2), DVector::from_element(2, 1.0)];
        assert!(matches!(
            cg_diffusion(&sigma, &pi, &samples, 1e-8),
            Err(Error::StateDependentCgDiffusion { .. })
        ));
    }

    fn toy_langevin(n: usize, gamma: DMatrix<f64>) -> LangevinModel {
        let dof = gamma.nrows();
        // noise chosen so the microscopic model satisfies
        // fluctuation-dissipation at beta = 1
        let noise = symmetric_sqrt(&(&gamma * 2.0), "test noise").unwrap();
        LangevinModel::new(
            n,
            dof / n,
            vec![1.0; n],
            Arc::new(|q: &DVector<f64>| DVector::zeros(q.len())),
            gamma,
            noise,
            1.0,
            true,
        )
        .unwrap()
    }

    #[test]
    fn cg_friction_scalar_gamma_projection() {
        let g = 0.8;
        let model = toy_langevin(4, DMatrix::identity(4, 4) * g);
        let pm = make_projection_phase_map(&[1.0; 4], &[0, 2], 1).unwrap();
        let a = cg_friction(&model, &pm, FrictionOption::Transform).unwrap();
        let b = cg_friction(&model, &pm, FrictionOption::FluctuationDissipation).unwrap();
        assert!((&a - DMatrix::identity(2, 2) * g).amax() < 1e-14);
        assert!((&b - DMatrix::identity(2, 2) * g).amax() < 1e-14);
    }

    #[test]
    fn cg_friction_com_option_b_scales_with_group_size() {
        let n = 6;
        let g = 1.3;
        let groups = vec![(0..3).collect::<Vec<_>>(), (3..6).collect::<Vec<_>>()];
        let pm = make_center_of_mass_map(&vec![1.0; n], &groups, 1).unwrap();
        let model = toy_langevin(n, DMatrix::identity(n, n) * g);
        let b = cg_friction(&model, &pm, FrictionOption::FluctuationDissipation).unwrap();
        assert!((&b - DMatrix::identity(2, 2) * (g * 3.0)).amax() < 1e-12);
        // option b satisfies coarse fluctuation-dissipation here
        let diff = cg_diffusion(
            &DiffusionField::Constant(model.noise().clone()),
            pm.mom(),
            &[],
            0.0,
        )
        .unwrap();
        let fd = 0.5 * model.beta() * &diff.covariance;
        assert!((fd - &b).amax() < 1e-10);
    }

    #[test]
    fn cg_friction_option_b_is_symmetric_psd() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let raw = DMatrix::from_fn(4, 4, |_, _| rng.gen::<f64>() - 0.3);
        let gamma = &raw * raw.transpose(); // PSD friction
        let model = toy_langevin(4, gamma);
        let pm = make_center_of_mass_map(&[1.0; 4], &[vec![0, 1], vec![2, 3]], 1).unwrap();
        let b = cg_friction(&model, &pm, FrictionOption::FluctuationDissipation).unwrap();
        assert!((&b - b.transpose()).amax() < 1e-12);
        let eig = b.symmetric_eigen();
        assert!(eig.eigenvalues.min() > -1e-12);
    }

    #[test]
    fn cg_friction_option_a_rejects_inconsistent_map() {
        let gamma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let model = toy_langevin(3, gamma);
        let pm = make_center_of_mass_map(&[1.0; 3], &[vec![0, 1, 2]], 1).unwrap();
        assert!(matches!(
            cg_friction(&model, &pm, FrictionOption::Transform),
            Err(Error::FrictionInconsistent { .. })
        ));
    }

    fn linear_family_1d() -> ParametricDriftFamily {
        ParametricDriftFamily::new(
            1,
            vec![Arc::new(|x: &DVector<f64>| x.clone()) as StateFn],
            DVector::from_element(1, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn reconstructed_drift_projects_to_cg_drift() {
        let pi = make_projection_map(3, &[1]).unwrap();
        let family = linear_family_1d();
        let theta = DVector::from_element(1, -1.4);
        let micro: StateFn = Arc::new(|x: &DVector<f64>| x.map(|v| v.sin() - 0.2 * v));
        let spec = ReconstructionSpec::with_drift_complement(pi.clone(), Arc::clone(&micro));
        let recon = reconstruct_drift(&family, &theta, &spec);
        let cg = family.drift_fn(&theta);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(17);
        for _ in 0..100 {
            let x = DVector::from_fn(3, |_, _| 2.0 * rng.gen::<f64>() - 1.0);
            let lhs = pi.project(&recon(&x));
            let rhs = cg(&pi.project(&x));
            assert!((lhs - rhs).amax() < 1e-12);
        }
        assert!(spec.orthogonality_defect(&[DVector::from_element(3, 0.7)]) < 1e-12);
    }

    #[test]
    fn perfect_cg_model_reconstructs_microscopic_drift() {
        // b(x) = -x, Pi keeps coordinate 0, family {xbar} at theta = -1:
        // b_bar(Pi x) = Pi b(x) pointwise, y_perp = b, so b_tilde = b.
        let pi = make_projection_map(2, &[0]).unwrap();
        let family = linear_family_1d();
        let theta = DVector::from_element(1, -1.0);
        let micro: StateFn = Arc::new(|x: &DVector<f64>| -x.clone());
        let spec = ReconstructionSpec::with_drift_complement(pi, Arc::clone(&micro));
        let recon = reconstruct_drift(&family, &theta, &spec);
        for v in [[0.3, -0.7], [1.5, 2.0], [0.0, 0.0]] {
            let x = DVector::from_vec(v.to_vec());
            assert!((recon(&x) - micro(&x)).amax() < 1e-14);
        }
    }

    #[test]
    fn zero_orthogonal_part_leaves_pure_lift() {
        let pi = make_projection_map(2, &[0]).unwrap();
        let family = linear_family_1d();
        let theta = DVector::from_element(1, -2.0);
        let zero: StateFn = Arc::new(|x: &DVector<f64>| DVector::zeros(x.len()));
        let spec = ReconstructionSpec::new(pi.clone(), zero);
        let recon = reconstruct_drift(&family, &theta, &spec);
        let x = DVector::from_vec(vec![0.5, 3.0]);
        let expected = pi.right_inverse() * family.drift_fn(&theta)(&pi.project(&x));
        assert!((recon(&x) - expected).amax() < 1e-14);
    }

    #[test]
    fn project_trajectory_examples() {
        let states = vec![
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0]),
        ];
        let traj = Trajectory::new(2, 0.1, states, 7, 1).unwrap();
        let ident = project_trajectory(&traj, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(ident.states(), traj.states());

        let keep1 = make_projection_map(2, &[0]).unwrap();
        let p = project_trajectory(&traj, keep1.matrix()).unwrap();
        assert_eq!(p.dim(), 1);
        assert_eq!(p.state(0)[0], 1.0);
        assert_eq!(p.state(1)[0], 3.0);
        assert_eq!(p.step(), traj.step());
        assert_eq!(p.replica(), traj.replica());

        let bad = DMatrix::identity(3, 3);
        assert!(project_trajectory(&traj, &bad).is_err());
    }

    #[test]
    fn com_projection_of_rigid_translation() {
        // all particles translate identically: the COM trajectory equals the
        // translation itself
        let n = 3;
        let pm = make_center_of_mass_map(&vec![1.0; n], &[vec![0, 1, 2]], 1).unwrap();
        let states: Vec<DVector<f64>> = (0..4)
            .map(|k| DVector::from_element(n, 0.5 * k as f64))
            .collect();
        let traj = Trajectory::new(n, 0.1, states, 0, 0).unwrap();
        let projected = project_trajectory(&traj, pm.pos().matrix()).unwrap();
        for k in 0..4 {
            assert!((projected.state(k)[0] - 0.5 * k as f64).abs() < 1e-14);
        }
    }

    fn ou_dynamics(a: f64, sigma: f64) -> Dynamics {
        Dynamics::Sde(
            SdeModel::new(
                1,
                Arc::new(move |x: &DVector<f64>| -a * x),
                DiffusionField::Constant(DMatrix::from_element(1, 1, sigma)),
            )
            .unwrap(),
        )
    }

    #[test]
    fn verify_reconstruction_identical_dynamics_passes() {
        let micro = ou_dynamics(1.0, 1.0);
        let cg = ou_dynamics(1.0, 1.0);
        let pi = DMatrix::identity(1, 1);
        let sampler = point_sampler(DVector::from_element(1, 1.0));
        let report = verify_reconstruction(
            &micro,
            Scheme::EulerMaruyama,
            &cg,
            Scheme::EulerMaruyama,
            &pi,
            &sampler,
            0.01,
            &[0.5, 1.0],
            4000,
            &RngSpec::new(100),
        )
        .unwrap();
        assert!(report.pass, "{report}");
    }

    #[test]
    fn verify_reconstruction_detects_drift_perturbation() {
        let micro = ou_dynamics(1.0, 1.0);
        // CG drift shifted by +1: mean drifts apart linearly in t, so t = 1 fails
        let cg = Dynamics::Sde(
            SdeModel::new(
                1,
                Arc::new(|x: &DVector<f64>| -x + DVector::from_element(1, 1.0)),
                DiffusionField::Constant(DMatrix::identity(1, 1)),
            )
            .unwrap(),
        );
        let pi = DMatrix::identity(1, 1);
        let sampler = point_sampler(DVector::from_element(1, 0.0));
        let report = verify_reconstruction(
            &micro,
            Scheme::EulerMaruyama,
            &cg,
            Scheme::EulerMaruyama,
            &pi,
            &sampler,
            0.01,
            &[1.0],
            4000,
            &RngSpec::new(5),
        )
        .unwrap();
        assert!(!report.pass);
        // the mean mismatch at t = 1 is about 1 - e^{-1}
        let dm = report.comparisons[0].mean_diff[0].abs();
        assert!((dm - 0.632).abs() < 0.1, "mean diff {dm}");
    }

    #[test]
    fn verify_reconstruction_time_zero_always_passes() {
        let micro = ou_dynamics(1.0, 1.0);
        let cg = ou_dynamics(2.0, 0.5); // different dynamics, same initial law
        let pi = DMatrix::identity(1, 1);
        let sampler = point_sampler(DVector::from_element(1, 0.3));
        let report = verify_reconstruction(
            &micro,
            Scheme::EulerMaruyama,
            &cg,
            Scheme::EulerMaruyama,
            &pi,
            &sampler,
            0.01,
            &[0.0],
            500,
            &RngSpec::new(1),
        )
        .unwrap();
        assert!(report.pass, "{report}");
    }
}
