//! Discrete-time integrators and trajectory containers.
//!
//! Two schemes are provided: Euler–Maruyama for general diffusions and the
//! BBK splitting (explicit half-kick, drift, implicit half-kick) for Langevin
//! pairs. Replica `r` of an ensemble draws all of its randomness from stream
//! `r` of a counter-based generator seeded by the master seed, so ensembles
//! are reproducible bit-for-bit per replica and replicas can run in parallel
//! without shared state.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{make_langevin_sde, LangevinModel, SdeModel};

/// Master seed plus the stream-derivation rule: replica `r` uses stream `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub master_seed: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Generator for one replica. Identical `(master_seed, replica)` pairs
    /// reproduce identical streams; distinct replicas are independent.
    pub fn stream(&self, replica: u32) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream(replica as u64);
        rng
    }
}

/// Draws a `N(0, scale² I_k)` vector, component order fixed.
pub fn gaussian_increment(rng: &mut ChaCha12Rng, k: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(k, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    })
}

/// Uniformly sampled path: `states[i]` is the state at time `i * step` after
/// burn-in, together with the seed and replica index that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    step: f64,
    states: Vec<DVector<f64>>,
    seed: u64,
    replica: u32,
}

impl Trajectory {
    pub fn new(dim: usize, step: f64, states: Vec<DVector<f64>>, seed: u64, replica: u32) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyInput { context: "trajectory states" });
        }
        if !(step > 0.0) {
            return Err(Error::InvalidArgument("trajectory step must be positive".into()));
        }
        for (i, s) in states.iter().enumerate() {
            if s.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "trajectory state",
                    expected: dim,
                    got: s.len(),
                });
            }
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::BlowUp { step: i, replica: 0 });
            }
        }
        Ok(Self { dim, step, states, seed, replica })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replica(&self) -> u32 {
        self.replica
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &DVector<f64> {
        &self.states[i]
    }

    /// Time of the i-th recorded state, counted from the end of burn-in.
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    /// One scalar component as a plain series.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[j]).collect()
    }

    /// Keeps every `k`-th state and scales the step accordingly.
    pub fn thin(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("thinning factor must be >= 1".into()));
        }
        let states: Vec<_> = self.states.iter().step_by(k).cloned().collect();
        Trajectory::new(self.dim, self.step * k as f64, states, self.seed, self.replica)
    }
}

/// Homogeneous collection of replicas: equal dim, step and length.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    trajectories: Vec<Trajectory>,
}

impl Ensemble {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories.first().ok_or(Error::EmptyInput { context: "ensemble" })?;
        let (dim, step, len) = (first.dim(), first.step(), first.len());
        for t in &trajectories {
            if t.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "ensemble dim",
                    expected: dim,
                    got: t.dim(),
                });
            }
            if t.len() != len {
                return Err(Error::DimensionMismatch {
                    context: "ensemble length",
                    expected: len,
                    got: t.len(),
                });
            }
            if (t.step() - step).abs() > f64::EPSILON * step.abs() {
                return Err(Error::InvalidArgument(format!(
                    "ensemble step mismatch: {} vs {}",
                    t.step(),
                    step
                )));
            }
        }
        Ok(Self { trajectories })
    }

    pub fn n_replicas(&self) -> usize {
        self.trajectories.len()
    }

    pub fn dim(&self) -> usize {
        self.trajectories[0].dim()
    }

    pub fn step(&self) -> f64 {
        self.trajectories[0].step()
    }

    pub fn len(&self) -> usize {
        self.trajectories[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// All states of all replicas in replica-major order.
    pub fn pooled_states(&self) -> Vec<DVector<f64>> {
        self.trajectories
            .iter()
            .flat_map(|t| t.states().iter().cloned())
            .collect()
    }

    /// States at one time index across replicas.
    pub fn cross_section(&self, i: usize) -> Vec<DVector<f64>> {
        self.trajectories.iter().map(|t| t.state(i).clone()).collect()
    }
}

/// Integration scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerMaruyama,
    Bbk,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "euler_maruyama",
            Scheme::Bbk => "bbk",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euler_maruyama" | "em" => Ok(Scheme::EulerMaruyama),
            "bbk" => Ok(Scheme::Bbk),
            other => Err(Error::Parse(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Sign convention for the BBK half-kicks.
///
/// `Standard` kicks with `+F`, consistent with the continuous system
/// `dp = F dt − γM⁻¹p dt + σ dB`. `PaperLiteral` reproduces the printed
/// scheme with `−F` in both half-kicks; useful only for cross-checking
/// against that exact discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BbkConvention {
    #[default]
    Standard,
    PaperLiteral,
}

impl BbkConvention {
    pub fn force_sign(&self) -> f64 {
        match self {
            BbkConvention::Standard => 1.0,
            BbkConvention::PaperLiteral => -1.0,
        }
    }
}

/// A simulatable system: either a general SDE or a Langevin pair with its
/// BBK convention.
#[derive(Debug, Clone)]
pub enum Dynamics {
    Sde(SdeModel),
    Langevin {
        model: LangevinModel,
        convention: BbkConvention,
    },
}

impl Dynamics {
    pub fn langevin(model: LangevinModel) -> Self {
        Dynamics::Langevin {
            model,
            convention: BbkConvention::Standard,
        }
    }

    /// State dimension of the simulated process (2·dof for Langevin pairs).
    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Sde(m) => m.dim(),
            Dynamics::Langevin { model, .. } => 2 * model.dof(),
        }
    }
}

/// One Euler–Maruyama update `x + b(x) h + σ(x) dW` for a caller-supplied
/// increment `dW ~ N(0, h I_k)`. Deterministic given `(x, dW)`.
pub fn euler_maruyama_step(
    model: &SdeModel,
    x: &DVector<f64>,
    h: f64,
    dw: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "euler_maruyama_step state",
            expected: model.dim(),
            got: x.len(),
        });
    }
    if dw.len() != model.noise_dim() {
        return Err(Error::DimensionMismatch {
            context: "euler_maruyama_step increment",
            expected: model.noise_dim(),
            got: dw.len(),
        });
    }
    let mut next = x + model.drift(x) * h;
    next += model.diffusion_at(x) * dw;
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFinite { context: "euler_maruyama_step" })
    }
}

/// Precomputed pieces of the BBK update for a fixed model and step.
struct BbkStepper<'a> {
    model: &'a LangevinModel,
    h: f64,
    sign: f64,
    minv: DVector<f64>,
    // LU factorization of (I + γM⁻¹ h/2) for the implicit half-kick.
    kick: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> BbkStepper<'a> {
    fn new(model: &'a LangevinModel, h: f64, convention: BbkConvention) -> Result<Self> {
        let dof = model.dof();
        let mass = model.mass_vector();
        let minv = mass.map(|m| 1.0 / m);
        let mut gm = model.friction().clone();
        for j in 0..dof {
            let scale = minv[j] * h / 2.0;
            for i in 0..dof {
                gm[(i, j)] *= scale;
            }
        }
        let a = DMatrix::identity(dof, dof) + gm;
        let kick = a.clone().lu();
        if kick.determinant().abs() < 1e-300 {
            return Err(Error::Singular { context: "BBK implicit half-kick (I + gamma M^-1 h/2)" });
        }
        Ok(Self {
            model,
            h,
            sign: convention.force_sign(),
            minv,
            kick,
        })
    }

    fn step(
        &self,
        q: &DVector<f64>,
        p: &DVector<f64>,
        dw1: &DVector<f64>,
        dw2: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let h = self.h;
        let minv_p = p.component_mul(&self.minv);
        let mut p_half = p + self.model.force(q) * (self.sign * h / 2.0);
        p_half -= self.model.friction() * minv_p * (h / 2.0);
        p_half += self.model.noise() * dw1;

        let q_next = q + p_half.component_mul(&self.minv) * h;

        let mut rhs = &p_half + self.model.force(&q_next) * (self.sign * h / 2.0);
        rhs += self.model.noise() * dw2;
        let p_next = self
            .kick
            .solve(&rhs)
            .ok_or(Error::Singular { context: "BBK implicit half-kick solve" })?;

        if q_next.iter().all(|v| v.is_finite()) && p_next.iter().all(|v| v.is_finite()) {
            Ok((q_next, p_next))
        } else {
            Err(Error::NonFinite { context: "bbk_step" })
        }
    }
}

/// One BBK update (half-kick, drift, implicit half-kick) for caller-supplied
/// increments `dW1, dW2 ~ N(0, (h/2) I)`.
pub fn bbk_step(
    model: &LangevinModel,
    q: &DVector<f64>,
    p: &DVector<f64>,
    h: f64,
    dw1: &DVector<f64>,
    dw2: &DVector<f64>,
    convention: BbkConvention,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let dof = model.dof();
    for (v, name) in [(q, "q"), (p, "p"), (dw1, "dW1"), (dw2, "dW2")] {
        if v.len() != dof {
            return Err(Error::DimensionMismatch {
                context: match name {
                    "q" => "bbk_step q",
                    "p" => "bbk_step p",
                    "dW1" => "bbk_step dW1",
                    _ => "bbk_step dW2",
                },
                expected: dof,
                got: v.len(),
            });
        }
    }
    BbkStepper::new(model, h, convention)?.step(q, p, dw1, dw2)
}

/// Simulates one path. `steps` states are recorded after `burn_in` steps are
/// discarded, so the result has `steps + 1` states (the first is the state
/// right after burn-in; with `burn_in = 0` it is `x0` itself).
pub fn simulate_trajectory(
    dynamics: &Dynamics,
    scheme: Scheme,
    x0: &DVector<f64>,
    h: f64,
    steps: usize,
    burn_in: usize,
    rng_spec: &RngSpec,
    replica: u32,
) -> Result<Trajectory> {
    let mut rng = rng_spec.stream(replica);
    simulate_with_rng(dynamics, scheme, x0, h, steps, burn_in, &mut rng, rng_spec.master_seed, replica)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate_with_rng(
    dynamics: &Dynamics,
    scheme: Scheme,
    x0: &DVector<f64>,
    h: f64,
    steps: usize,
    burn_in: usize,
    rng: &mut ChaCha12Rng,
    seed: u64,
    replica: u32,
) -> Result<Trajectory> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("step h must be positive".into()));
    }
    let dim = dynamics.dim();
    if x0.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: dim,
            got: x0.len(),
        });
    }

    let total = burn_in + steps;
    let mut recorded = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    if burn_in == 0 {
        recorded.push(x.clone());
    }

    match (dynamics, scheme) {
        (Dynamics::Sde(model), Scheme::EulerMaruyama) => {
            let k = model.noise_dim();
            let scale = h.sqrt();
            for i in 0..total {
                let dw = gaussian_increment(rng, k, scale);
                x = euler_maruyama_step(model, &x, h, &dw).map_err(|e| match e {
                    Error::NonFinite { .. } => Error::BlowUp { step: i, replica },
                    other => other,
                })?;
                if i + 1 >= burn_in {
                    recorded.push(x.clone());
                }
            }
        }
        (Dynamics::Langevin { model, convention }, Scheme::Bbk) => {
            let dof = model.dof();
            let stepper = BbkStepper::new(model, h, *convention)?;
            let scale = (h / 2.0).sqrt();
            let mut q = x.rows(0, dof).into_owned();
            let mut p = x.rows(dof, dof).into_owned();
            for i in 0..total {
                let dw1 = gaussian_increment(rng, dof, scale);
                let dw2 = gaussian_increment(rng, dof, scale);
                (q, p) = stepper.step(&q, &p, &dw1, &dw2).map_err(|e| match e {
                    Error::NonFinite { .. } => Error::BlowUp { step: i, replica },
                    other => other,
                })?;
                if i + 1 >= burn_in {
                    let mut state = DVector::zeros(2 * dof);
                    state.rows_mut(0, dof).copy_from(&q);
                    state.rows_mut(dof, dof).copy_from(&p);
                    recorded.push(state);
                }
            }
        }
        (Dynamics::Langevin { model, .. }, Scheme::EulerMaruyama) => {
            // Euler-Maruyama on the phase-space form of the Langevin system.
            let sde = make_langevin_sde(model)?;
            let k = sde.noise_dim();
            let scale = h.sqrt();
            for i in 0..total {
                let dw = gaussian_increment(rng, k, scale);
                x = euler_maruyama_step(&sde, &x, h, &dw).map_err(|e| match e {
                    Error::NonFinite { .. } => Error::BlowUp { step: i, replica },
                    other => other,
                })?;
                if i + 1 >= burn_in {
                    recorded.push(x.clone());
                }
            }
        }
        (Dynamics::Sde(_), Scheme::Bbk) => {
            return Err(Error::InvalidArgument(
                "the BBK scheme requires a Langevin model".into(),
            ));
        }
    }

    Trajectory::new(dim, h, recorded, seed, replica)
}

/// Simulates `n_replicas` independent paths in parallel. Replica `r` draws
/// its initial state and all path noise from stream `r`, so each replica is
/// reproducible from `(master_seed, r)` alone regardless of thread count.
#[allow(clippy::too_many_arguments)]
pub fn simulate_ensemble(
    dynamics: &Dynamics,
    scheme: Scheme,
    x0_sampler: &(dyn Fn(&mut ChaCha12Rng) -> DVector<f64> + Sync),
    h: f64,
    steps: usize,
    n_replicas: usize,
    burn_in: usize,
    rng_spec: &RngSpec,
) -> Result<Ensemble> {
    if n_replicas == 0 {
        return Err(Error::EmptyInput { context: "ensemble replicas" });
    }
    let trajectories: Result<Vec<Trajectory>> = (0..n_replicas as u32)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_spec.stream(r);
            let x0 = x0_sampler(&mut rng);
            simulate_with_rng(
                dynamics,
                scheme,
                &x0,
                h,
                steps,
                burn_in,
                &mut rng,
                rng_spec.master_seed,
                r,
            )
        })
        .collect();
    Ensemble::new(trajectories?)
}

/// Point-mass initial sampler.
pub fn point_sampler(x0: DVector<f64>) -> impl Fn(&mut ChaCha12Rng) -> DVector<f64> + Sync {
    move |_rng| x0.clone()
}

/// Isotropic Gaussian initial sampler `N(mean, sd² I)`.
pub fn gaussian_sampler(
    mean: DVector<f64>,
    sd: f64,
) -> impl Fn(&mut ChaCha12Rng) -> DVector<f64> + Sync {
    move |rng| {
        let noise = gaussian_increment(rng, mean.len(), sd);
        &mean + noise
    }
}
