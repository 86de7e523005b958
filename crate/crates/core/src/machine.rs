//! Fourth-order synchronous machine model (single machine, infinite bus).
//!
//! The state is `[δ, Δω, e_q′, e_d′]`: rotor angle (electrical rad), rotor
//! speed deviation (pu), and the q-/d-axis transient voltages (pu). Inputs are
//! mechanical torque `T_m` and field voltage `E_fd`. The single measurement is
//! the air-gap electrical torque `T_e`.
//!
//! The module also provides the generic [`PlantModel`] interface the filters
//! run against: a discrete-time state map `f`, a measurement map `h`, and
//! their Jacobians (finite-difference for `f`, analytic for `h`). The discrete
//! map is one fixed-step fourth-order Runge–Kutta step of the continuous
//! dynamics, and the exact same map drives both the truth simulation and the
//! filters — model mismatch enters only through [`ParamFault`] or noise
//! settings, never through a different integrator.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::linalg::{jacobian_fd, psd_sqrt};

/// Machine state: rotor angle, speed deviation, and transient voltages.
///
/// The rotor angle is kept unwrapped (it may run over multiple revolutions);
/// wrapping for display is a presentation concern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    /// Rotor angle δ (electrical rad).
    pub delta: f64,
    /// Rotor speed deviation Δω (pu).
    pub domega: f64,
    /// q-axis transient voltage e_q′ (pu).
    pub eq_prime: f64,
    /// d-axis transient voltage e_d′ (pu).
    pub ed_prime: f64,
}

impl StateVector {
    /// Number of state components.
    pub const DIM: usize = 4;

    pub fn new(delta: f64, domega: f64, eq_prime: f64, ed_prime: f64) -> Self {
        Self {
            delta,
            domega,
            eq_prime,
            ed_prime,
        }
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.delta, self.domega, self.eq_prime, self.ed_prime]
    }

    /// Build from a length-4 column vector.
    ///
    /// # Panics
    /// Panics if `v` does not have exactly 4 rows; callers converting from
    /// filter-space vectors are expected to keep dimensions consistent.
    pub fn from_vector(v: &DVector<f64>) -> Self {
        assert_eq!(v.len(), Self::DIM, "state vector must have 4 components");
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_column_slice(&self.to_array())
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

impl Add for StateVector {
    type Output = StateVector;
    fn add(self, rhs: StateVector) -> StateVector {
        StateVector::new(
            self.delta + rhs.delta,
            self.domega + rhs.domega,
            self.eq_prime + rhs.eq_prime,
            self.ed_prime + rhs.ed_prime,
        )
    }
}

impl Sub for StateVector {
    type Output = StateVector;
    fn sub(self, rhs: StateVector) -> StateVector {
        StateVector::new(
            self.delta - rhs.delta,
            self.domega - rhs.domega,
            self.eq_prime - rhs.eq_prime,
            self.ed_prime - rhs.ed_prime,
        )
    }
}

impl Mul<f64> for StateVector {
    type Output = StateVector;
    fn mul(self, s: f64) -> StateVector {
        StateVector::new(
            self.delta * s,
            self.domega * s,
            self.eq_prime * s,
            self.ed_prime * s,
        )
    }
}

/// Control inputs: mechanical torque and field voltage, both in pu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputVector {
    /// Mechanical torque T_m (pu); non-negative in every supported scenario.
    pub t_m: f64,
    /// Field voltage E_fd (pu).
    pub e_fd: f64,
}

impl InputVector {
    /// Number of input components.
    pub const DIM: usize = 2;

    pub fn new(t_m: f64, e_fd: f64) -> Self {
        Self { t_m, e_fd }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        assert_eq!(v.len(), Self::DIM, "input vector must have 2 components");
        Self::new(v[0], v[1])
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_column_slice(&[self.t_m, self.e_fd])
    }
}

/// Physical parameters of the machine and its grid connection.
///
/// Defaults are the benchmark values used by every bundled scenario preset:
/// a two-pole machine on a 60 Hz grid (ω₀ = 377 elec. rad/s) with terminal
/// voltage held at 1.02 pu. The transient reactances default to the pre-fault
/// value 0.375 pu; the reactance-fault scenario raises them to 0.475 pu.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineParams {
    /// Damping coefficient D (pu torque per pu speed deviation).
    pub d_damping: f64,
    /// Inertia constant J (s).
    pub j_inertia: f64,
    /// d-axis open-circuit transient time constant T_do′ (s).
    pub t_do_prime: f64,
    /// q-axis open-circuit transient time constant T_qo′ (s).
    pub t_qo_prime: f64,
    /// d-axis synchronous reactance x_d (pu).
    pub x_d: f64,
    /// q-axis synchronous reactance x_q (pu).
    pub x_q: f64,
    /// d-axis transient reactance x_d′ (pu).
    pub x_d_prime: f64,
    /// q-axis transient reactance x_q′ (pu).
    pub x_q_prime: f64,
    /// Terminal voltage magnitude V_t (pu), treated as constant.
    pub v_t: f64,
    /// Synchronous speed ω₀ (electrical rad/s).
    pub omega_0: f64,
}

impl Default for MachineParams {
    fn default() -> Self {
        Self {
            d_damping: 0.05,
            j_inertia: 10.0,
            t_do_prime: 0.13,
            t_qo_prime: 0.01,
            x_d: 2.06,
            x_q: 1.21,
            x_d_prime: 0.375,
            x_q_prime: 0.375,
            v_t: 1.02,
            omega_0: 377.0,
        }
    }
}

impl MachineParams {
    /// Check physical plausibility: positive time constants and inertia,
    /// transient reactances positive and no larger than the synchronous ones.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("j_inertia", self.j_inertia),
            ("t_do_prime", self.t_do_prime),
            ("t_qo_prime", self.t_qo_prime),
            ("x_d_prime", self.x_d_prime),
            ("x_q_prime", self.x_q_prime),
            ("v_t", self.v_t),
            ("omega_0", self.omega_0),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(Error::config(format!(
                    "machine parameter {name} must be positive, got {value}"
                )));
            }
        }
        if self.x_d < self.x_d_prime {
            return Err(Error::config(format!(
                "x_d ({}) must be at least x_d_prime ({})",
                self.x_d, self.x_d_prime
            )));
        }
        if self.x_q < self.x_q_prime {
            return Err(Error::config(format!(
                "x_q ({}) must be at least x_q_prime ({})",
                self.x_q, self.x_q_prime
            )));
        }
        Ok(())
    }
}

/// Electrical quantities derived from the current state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectricalOutputs {
    /// Air-gap electrical torque T_e (pu); also the measured output.
    pub t_e: f64,
    /// d-axis stator current i_d (pu).
    pub i_d: f64,
    /// q-axis stator current i_q (pu).
    pub i_q: f64,
}

/// Air-gap torque and stator currents as closed-form functions of the state.
///
/// `T_e = (V_t/x_d′)·e_q′·sin δ + (V_t²/2)·(1/x_q − 1/x_q′)·sin 2δ`,
/// `i_d = (e_q′ − V_t·cos δ)/x_d′`, `i_q = V_t·sin δ / x_q`.
pub fn electrical_outputs(x: StateVector, p: &MachineParams) -> ElectricalOutputs {
    let sin_d = x.delta.sin();
    let t_e = (p.v_t / p.x_d_prime) * x.eq_prime * sin_d
        + (p.v_t * p.v_t / 2.0) * (1.0 / p.x_q - 1.0 / p.x_q_prime) * (2.0 * x.delta).sin();
    let i_d = (x.eq_prime - p.v_t * x.delta.cos()) / p.x_d_prime;
    let i_q = p.v_t * sin_d / p.x_q;
    ElectricalOutputs { t_e, i_d, i_q }
}

/// The scalar measurement: electrical torque T_e.
///
/// This is by construction the same value as [`electrical_outputs`]`.t_e`
/// (single implementation, no drift between truth and filter models).
pub fn measure(x: StateVector, p: &MachineParams) -> f64 {
    electrical_outputs(x, p).t_e
}

/// Continuous-time state derivatives of the fourth-order machine model.
///
/// ```text
/// δ̇    = ω₀·Δω
/// Δω̇   = (T_m − T_e − D·Δω)/J
/// ė_q′ = (E_fd − e_q′ − (x_d − x_d′)·i_d)/T_do′
/// ė_d′ = (−e_d′ − (x_q − x_q′)·i_q)/T_qo′
/// ```
pub fn machine_derivatives(x: StateVector, u: InputVector, p: &MachineParams) -> StateVector {
    let out = electrical_outputs(x, p);
    StateVector {
        delta: p.omega_0 * x.domega,
        domega: (u.t_m - out.t_e - p.d_damping * x.domega) / p.j_inertia,
        eq_prime: (u.e_fd - x.eq_prime - (p.x_d - p.x_d_prime) * out.i_d) / p.t_do_prime,
        ed_prime: (-x.ed_prime - (p.x_q - p.x_q_prime) * out.i_q) / p.t_qo_prime,
    }
}

/// One fixed-step fourth-order Runge–Kutta step of [`machine_derivatives`]
/// with the input held constant over the step.
///
/// This map is the discrete-time transition `f(x_{k−1}, u_{k−1})` shared by
/// the truth simulation and all filters.
pub fn step_discrete(x: StateVector, u: InputVector, p: &MachineParams, dt: f64) -> Result<StateVector> {
    debug_assert!(dt > 0.0, "step size must be positive");
    let k1 = machine_derivatives(x, u, p);
    let k2 = machine_derivatives(x + k1 * (dt / 2.0), u, p);
    let k3 = machine_derivatives(x + k2 * (dt / 2.0), u, p);
    let k4 = machine_derivatives(x + k3 * dt, u, p);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if !next.is_finite() {
        return Err(Error::numerical(format!(
            "state became non-finite after integration step (from δ={}, Δω={})",
            x.delta, x.domega
        )));
    }
    Ok(next)
}

/// Abrupt parameter change at a fixed time: the truth simulation swaps to
/// `faulted_params` at `fault_time` while the filters keep the nominal set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamFault {
    /// Time (s) at and after which the replacement parameters apply.
    pub fault_time: f64,
    /// Full replacement parameter set.
    pub faulted_params: MachineParams,
}

/// Parameters in effect at time `t`: the faulted set once `t ≥ fault_time`,
/// the nominal set before.
pub fn apply_fault(p: MachineParams, fault: &ParamFault, t: f64) -> MachineParams {
    if t >= fault.fault_time {
        fault.faulted_params
    } else {
        p
    }
}

/// RNG sub-stream carrying process noise draws.
pub const PROCESS_NOISE_STREAM: u64 = 0;
/// RNG sub-stream carrying measurement noise draws.
pub const MEASUREMENT_NOISE_STREAM: u64 = 1;

/// Process and measurement noise description: covariances plus the seed that
/// derives both reproducible noise streams.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Process noise covariance (state_dim × state_dim), symmetric PSD.
    pub q_cov: DMatrix<f64>,
    /// Measurement noise covariance (meas_dim × meas_dim), symmetric PSD.
    pub r_cov: DMatrix<f64>,
    /// Base seed; process and measurement draws use separate sub-streams so
    /// they stay mutually independent.
    pub seed: u64,
}

impl NoiseSpec {
    /// Isotropic spec for the machine model: `q_cov = q_std²·I₄`,
    /// `r_cov = [r_std²]`.
    pub fn from_stddevs(q_std: f64, r_std: f64, seed: u64) -> Self {
        Self {
            q_cov: DMatrix::identity(StateVector::DIM, StateVector::DIM) * (q_std * q_std),
            r_cov: DMatrix::from_element(1, 1, r_std * r_std),
            seed,
        }
    }

    /// Verify both covariances factor (SPD, or PSD-diagonal).
    pub fn validate(&self) -> Result<()> {
        psd_sqrt(&self.q_cov).map_err(|e| prefix_config(e, "process noise"))?;
        psd_sqrt(&self.r_cov).map_err(|e| prefix_config(e, "measurement noise"))?;
        Ok(())
    }

    /// Seeded sampler for process noise draws.
    pub fn process_sampler(&self) -> Result<GaussianSampler> {
        GaussianSampler::new(&self.q_cov, self.seed, PROCESS_NOISE_STREAM)
            .map_err(|e| prefix_config(e, "process noise"))
    }

    /// Seeded sampler for measurement noise draws, independent of the process
    /// stream even under the same seed.
    pub fn measurement_sampler(&self) -> Result<GaussianSampler> {
        GaussianSampler::new(&self.r_cov, self.seed, MEASUREMENT_NOISE_STREAM)
            .map_err(|e| prefix_config(e, "measurement noise"))
    }
}

fn prefix_config(err: Error, what: &str) -> Error {
    match err {
        Error::Config(msg) => Error::config(format!("{what}: {msg}")),
        other => other,
    }
}

/// Reproducible zero-mean Gaussian vector source with a fixed covariance.
///
/// Draws are `L·z` with `z` i.i.d. standard normal from a counter-based
/// stream cipher RNG, so a `(seed, stream)` pair fully determines the
/// sequence and distinct streams never overlap.
pub struct GaussianSampler {
    factor: DMatrix<f64>,
    rng: ChaCha8Rng,
}

impl GaussianSampler {
    pub fn new(cov: &DMatrix<f64>, seed: u64, stream: u64) -> Result<Self> {
        let factor = psd_sqrt(cov)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self { factor, rng })
    }

    /// Dimension of each draw.
    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Next noise vector in the stream.
    pub fn sample(&mut self) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(&mut self.rng));
        &self.factor * z
    }
}

type DynMap = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type DynJac = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Generic discrete-time nonlinear plant the filters operate on:
/// `x_k = f(x_{k−1}, u_{k−1}) + w`, `y_k = h(x_k, u_k) + v`.
///
/// Jacobians fall back to central finite differences on `f`/`h` when no
/// analytic closure is attached.
pub struct PlantModel {
    state_dim: usize,
    meas_dim: usize,
    f: DynMap,
    h: DynMap,
    jac_f: Option<DynJac>,
    jac_h: Option<DynJac>,
}

impl PlantModel {
    pub fn new(
        state_dim: usize,
        meas_dim: usize,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        h: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_dim,
            meas_dim,
            f: Box::new(f),
            h: Box::new(h),
            jac_f: None,
            jac_h: None,
        }
    }

    /// Attach an analytic Jacobian of `f` (state_dim × state_dim).
    pub fn with_jac_f(
        mut self,
        jac: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jac_f = Some(Box::new(jac));
        self
    }

    /// Attach an analytic Jacobian of `h` (meas_dim × state_dim).
    pub fn with_jac_h(
        mut self,
        jac: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jac_h = Some(Box::new(jac));
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn meas_dim(&self) -> usize {
        self.meas_dim
    }

    /// Discrete state transition.
    pub fn f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.f)(x, u)
    }

    /// Measurement map.
    pub fn h(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.h)(x, u)
    }

    /// Jacobian ∂f/∂x at `(x, u)`; analytic when attached, otherwise central
    /// finite differences.
    pub fn jac_f(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        match &self.jac_f {
            Some(j) => j(x, u),
            None => jacobian_fd(|x| (self.f)(x, u), x, self.state_dim),
        }
    }

    /// Jacobian ∂h/∂x at `(x, u)`; analytic when attached, otherwise central
    /// finite differences.
    pub fn jac_h(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        match &self.jac_h {
            Some(j) => j(x, u),
            None => jacobian_fd(|x| (self.h)(x, u), x, self.meas_dim),
        }
    }
}

/// Analytic measurement Jacobian of the torque output:
/// `∂T_e/∂δ = (V_t/x_d′)·e_q′·cos δ + V_t²·(1/x_q − 1/x_q′)·cos 2δ`,
/// `∂T_e/∂e_q′ = (V_t/x_d′)·sin δ`, zero elsewhere.
pub fn torque_jacobian(x: StateVector, p: &MachineParams) -> DMatrix<f64> {
    let d_delta = (p.v_t / p.x_d_prime) * x.eq_prime * x.delta.cos()
        + p.v_t * p.v_t * (1.0 / p.x_q - 1.0 / p.x_q_prime) * (2.0 * x.delta).cos();
    let d_eq = (p.v_t / p.x_d_prime) * x.delta.sin();
    DMatrix::from_row_slice(1, StateVector::DIM, &[d_delta, 0.0, d_eq, 0.0])
}

/// The machine as a [`PlantModel`]: `f` is [`step_discrete`] at fixed `dt`,
/// `h` is [`measure`] (input-independent), `jac_h` is analytic and `jac_f`
/// uses the finite-difference fallback.
pub fn smib_plant(p: MachineParams, dt: f64) -> PlantModel {
    let p_f = p;
    let p_h = p;
    let p_jh = p;
    PlantModel::new(
        StateVector::DIM,
        1,
        move |x, u| {
            let x = StateVector::from_vector(x);
            let u = InputVector::from_vector(u);
            // The truth loop checks finiteness after every step; inside the
            // filters a non-finite state would poison every later matrix
            // operation anyway, so propagate the raw value here.
            step_discrete(x, u, &p_f, dt)
                .map(StateVector::to_vector)
                .unwrap_or_else(|_| DVector::from_element(StateVector::DIM, f64::NAN))
        },
        move |x, _u| DVector::from_element(1, measure(StateVector::from_vector(x), &p_h)),
    )
    .with_jac_h(move |x, _u| torque_jacobian(StateVector::from_vector(x), &p_jh))
}
