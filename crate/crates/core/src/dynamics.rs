//! Quadrotor translational dynamics with first-order attitude kinematics,
//! their RK4 discretization, finite-difference Jacobians and a plant simulator.

use nalgebra::{SMatrix, SVector, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{self, BodyRates, QuatNU};

pub const NX: usize = 10;
pub const NU: usize = 4;

pub type StateVec = SVector<f64, NX>;
pub type InputVec = SVector<f64, NU>;
pub type StateJacobian = SMatrix<f64, NX, NX>;
pub type InputJacobian = SMatrix<f64, NX, NU>;

/// `x = [p, v, q]`, all in the inertial frame except the orientation itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub q: QuatNU,
}

/// `u = [f, Ω]`: collective thrust (N) and body rates (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadInput {
    pub f: f64,
    pub omega: BodyRates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadParams {
    pub mass: f64,
    pub gravity: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub omega_min: [f64; 3],
    pub omega_max: [f64; 3],
}

impl Default for QuadParams {
    fn default() -> Self {
        let mass = 0.85;
        let gravity = 9.81;
        Self {
            mass,
            gravity,
            f_min: 0.0,
            f_max: 2.0 * mass * gravity,
            omega_min: [-3.0; 3],
            omega_max: [3.0; 3],
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !(self.gravity > 0.0) {
            return Err(Error::Config("mass and gravity must be positive".into()));
        }
        if !(self.f_min >= 0.0) || !(self.f_max > self.mass * self.gravity) {
            return Err(Error::Config(format!(
                "thrust bounds [{}, {}] must satisfy 0 <= f_min and f_max > m g",
                self.f_min, self.f_max
            )));
        }
        for i in 0..3 {
            if !(self.omega_min[i] < self.omega_max[i]) {
                return Err(Error::Config("body-rate bounds must satisfy min < max".into()));
            }
        }
        Ok(())
    }

    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn input_lower(&self) -> InputVec {
        InputVec::new(self.f_min, self.omega_min[0], self.omega_min[1], self.omega_min[2])
    }

    pub fn input_upper(&self) -> InputVec {
        InputVec::new(self.f_max, self.omega_max[0], self.omega_max[1], self.omega_max[2])
    }

    /// Clips an input into the actuator box.
    pub fn clamp_input(&self, u: &QuadInput) -> QuadInput {
        let lo = self.input_lower();
        let hi = self.input_upper();
        let v = u.as_vector();
        QuadInput::from_vector(&v.zip_zip_map(&lo, &hi, |x, l, h| x.clamp(l, h)))
    }

    pub fn input_within_bounds(&self, u: &QuadInput) -> bool {
        let v = u.as_vector();
        let lo = self.input_lower();
        let hi = self.input_upper();
        (0..NU).all(|i| v[i] >= lo[i] && v[i] <= hi[i])
    }
}

impl QuadState {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>, q: QuatNU) -> Self {
        Self { p, v, q }
    }

    /// At rest at `p`, level, zero yaw.
    pub fn hover_at(p: Vector3<f64>) -> Self {
        Self::new(p, Vector3::zeros(), QuatNU::IDENTITY)
    }

    pub fn to_vector(&self) -> StateVec {
        let mut x = StateVec::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x.fixed_rows_mut::<4>(6).copy_from(&self.q.as_vector());
        x
    }

    pub fn from_vector(x: &StateVec) -> Self {
        Self {
            p: x.fixed_rows::<3>(0).into(),
            v: x.fixed_rows::<3>(3).into(),
            q: QuatNU::from_vector(&x.fixed_rows::<4>(6).into()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

impl QuadInput {
    pub fn new(f: f64, omega: BodyRates) -> Self {
        Self { f, omega }
    }

    pub fn hover(params: &QuadParams) -> Self {
        Self::new(params.hover_thrust(), BodyRates::ZERO)
    }

    pub fn zero() -> Self {
        Self::new(0.0, BodyRates::ZERO)
    }

    pub fn as_vector(&self) -> InputVec {
        InputVec::new(self.f, self.omega.x, self.omega.y, self.omega.z)
    }

    pub fn from_vector(u: &InputVec) -> Self {
        Self::new(u[0], BodyRates::new(u[1], u[2], u[3]))
    }
}

fn rate(x: &StateVec, u: &InputVec, params: &QuadParams) -> Result<StateVec> {
    let q = QuatNU::from_vector(&x.fixed_rows::<4>(6).into());
    let omega = BodyRates::new(u[1], u[2], u[3]);
    let thrust_dir = so3::rotate_vector(&q, &Vector3::z())?;
    let acc = thrust_dir * (u[0] / params.mass) - Vector3::new(0.0, 0.0, params.gravity);
    let qdot = so3::quat_derivative(&q, &omega)?;
    let mut dx = StateVec::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&x.fixed_rows::<3>(3));
    dx.fixed_rows_mut::<3>(3).copy_from(&acc);
    dx.fixed_rows_mut::<4>(6).copy_from(&qdot);
    Ok(dx)
}

/// `ẋ = f(x, u)`: `ṗ = v`, `v̇ = (f/m) R e_z − g e_z`, `q̇ = ½ Λ(Ω) q`.
pub fn continuous_dynamics(x: &QuadState, u: &QuadInput, params: &QuadParams) -> Result<StateVec> {
    rate(&x.to_vector(), &u.as_vector(), params)
}

fn rk4_vec(x: &StateVec, u: &InputVec, dt: f64, params: &QuadParams) -> Result<StateVec> {
    let k1 = rate(x, u, params)?;
    let k2 = rate(&(x + k1 * (0.5 * dt)), u, params)?;
    let k3 = rate(&(x + k2 * (0.5 * dt)), u, params)?;
    let k4 = rate(&(x + k3 * dt), u, params)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// One classical RK4 step with the input held constant. The quaternion is not
/// renormalized between stages.
pub fn rk4_step(x: &QuadState, u: &QuadInput, dt: f64, params: &QuadParams) -> Result<QuadState> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    Ok(QuadState::from_vector(&rk4_vec(&x.to_vector(), &u.as_vector(), dt, params)?))
}

pub(crate) fn rk4_raw(x: &StateVec, u: &InputVec, dt: f64, params: &QuadParams) -> Result<StateVec> {
    rk4_vec(x, u, dt, params)
}

/// `[x0, x1, …, xN]` by chaining [`rk4_step`].
pub fn rollout(
    x0: &QuadState,
    inputs: &[QuadInput],
    dt: f64,
    params: &QuadParams,
) -> Result<Vec<QuadState>> {
    if inputs.is_empty() {
        return Err(Error::Dimension("rollout needs at least one input".into()));
    }
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(*x0);
    for u in inputs {
        let next = rk4_step(out.last().unwrap(), u, dt, params)?;
        out.push(next);
    }
    Ok(out)
}

/// RK4 integration of a time-varying input profile over `[t0, t0 + steps·dt]`,
/// sampling the input at the stage times.
pub fn integrate_profile<F>(
    x0: &QuadState,
    t0: f64,
    dt: f64,
    steps: usize,
    params: &QuadParams,
    input: F,
) -> Result<QuadState>
where
    F: Fn(f64) -> QuadInput,
{
    let mut x = x0.to_vector();
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let u0 = input(t).as_vector();
        let um = input(t + 0.5 * dt).as_vector();
        let u1 = input(t + dt).as_vector();
        let k1 = rate(&x, &u0, params)?;
        let k2 = rate(&(x + k1 * (0.5 * dt)), &um, params)?;
        let k3 = rate(&(x + k2 * (0.5 * dt)), &um, params)?;
        let k4 = rate(&(x + k3 * dt), &u1, params)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    Ok(QuadState::from_vector(&x))
}

fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// Jacobians of [`rk4_step`] with respect to state and input, by central differences.
pub fn linearize_discrete(
    x: &QuadState,
    u: &QuadInput,
    dt: f64,
    params: &QuadParams,
) -> Result<(StateJacobian, InputJacobian)> {
    linearize_raw(&x.to_vector(), &u.as_vector(), dt, params, 1.0)
}

pub(crate) fn linearize_raw(
    x: &StateVec,
    u: &InputVec,
    dt: f64,
    params: &QuadParams,
    step_scale: f64,
) -> Result<(StateJacobian, InputJacobian)> {
    let mut a = StateJacobian::zeros();
    let mut b = InputJacobian::zeros();
    for i in 0..NX {
        let h = fd_step(x[i]) * step_scale;
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += h;
        xm[i] -= h;
        let col = (rk4_vec(&xp, u, dt, params)? - rk4_vec(&xm, u, dt, params)?) / (2.0 * h);
        a.set_column(i, &col);
    }
    for i in 0..NU {
        let h = fd_step(u[i]) * step_scale;
        let mut up = *u;
        let mut um = *u;
        up[i] += h;
        um[i] -= h;
        let col = (rk4_vec(x, &up, dt, params)? - rk4_vec(x, &um, dt, params)?) / (2.0 * h);
        b.set_column(i, &col);
    }
    Ok((a, b))
}

/// Plant-side disturbances. The default is an exact model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    /// Standard deviation of the additive velocity disturbance per control period (m/s).
    pub noise_sigma: f64,
    /// Multiplier on the model mass used by the plant.
    pub mass_scale: f64,
    pub substeps: usize,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self { noise_sigma: 0.0, mass_scale: 1.0, substeps: 50 }
    }
}

/// Closed-loop "real" system: fine-step RK4 plus optional disturbances.
#[derive(Debug, Clone)]
pub struct Plant {
    params: QuadParams,
    config: PlantConfig,
    rng: ChaCha8Rng,
}

impl Plant {
    pub fn new(model: &QuadParams, config: PlantConfig, seed: u64) -> Result<Self> {
        if !(config.noise_sigma >= 0.0) || config.substeps == 0 {
            return Err(Error::Config("plant noise must be >= 0 and substeps >= 1".into()));
        }
        if !(0.95..=1.05).contains(&config.mass_scale) {
            return Err(Error::Config("plant mass perturbation is limited to ±5%".into()));
        }
        let mut params = *model;
        params.mass *= config.mass_scale;
        Ok(Self { params, config, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn params(&self) -> &QuadParams {
        &self.params
    }

    /// Advances one control period `dt`.
    pub fn step(&mut self, x: &QuadState, u: &QuadInput, dt: f64) -> Result<QuadState> {
        let h = dt / self.config.substeps as f64;
        let uv = u.as_vector();
        let mut xv = x.to_vector();
        for _ in 0..self.config.substeps {
            xv = rk4_vec(&xv, &uv, h, &self.params)?;
        }
        let mut next = QuadState::from_vector(&xv);
        if self.config.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.config.noise_sigma)
                .map_err(|e| Error::Config(e.to_string()))?;
            for i in 0..3 {
                next.v[i] += normal.sample(&mut self.rng);
            }
        }
        next.q = so3::rescale_guard(&next.q)?;
        Ok(next)
    }
}

/// Convenience wrapper over [`Plant::step`] for one-off use.
pub fn plant_step(
    x: &QuadState,
    u: &QuadInput,
    params: &QuadParams,
    config: PlantConfig,
    seed: u64,
    dt: f64,
) -> Result<QuadState> {
    Plant::new(params, config, seed)?.step(x, u, dt)
}

pub(crate) fn quat_of(x: &StateVec) -> QuatNU {
    QuatNU::from_vector(&Vector4::new(x[6], x[7], x[8], x[9]))
}
