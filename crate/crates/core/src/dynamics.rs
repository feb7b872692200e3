//! Motion models, rollouts and the kinematic tracking executive.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Planar rover pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl BodyState {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.y, self.heading]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self { x: s[0], y: s[1], heading: s[2] }
    }

    /// Coarse workspace point `g_c(x) = (x, y)`.
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Camera yaw (clockwise-positive, seen from above) and pitch, body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraState {
    pub yaw: f64,
    pub pitch: f64,
}

impl CameraState {
    pub fn new(yaw: f64, pitch: f64) -> Self {
        Self { yaw, pitch }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.yaw, self.pitch]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self { yaw: s[0], pitch: s[1] }
    }
}

/// Box on each control channel plus a cap on the per-step workspace displacement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub max_step: f64,
}

impl ControlBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, max_step: f64) -> Result<Self> {
        let b = Self { lower, upper, max_step };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(invalid("control bound channels differ"));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u)) {
            return Err(invalid("every control channel needs min < max"));
        }
        if !(self.max_step > 0.0) {
            return Err(invalid("max step must be positive"));
        }
        Ok(())
    }

    /// `|v| <= 0.3 m/s`, `|omega| <= 0.5 rad/s`, 0.3 m per step.
    pub fn body_default() -> Self {
        Self { lower: vec![-0.3, -0.5], upper: vec![0.3, 0.5], max_step: 0.3 }
    }

    /// `0.6 rad/s` on both axes; `max_step` is the diagonal reach at `dt`.
    pub fn camera_default(dt: f64) -> Self {
        let rate = 0.6;
        Self { lower: vec![-rate; 2], upper: vec![rate; 2], max_step: rate * dt * 2f64.sqrt() }
    }

    pub fn project(&self, u: &mut [f64]) {
        for ((ui, lo), hi) in u.iter_mut().zip(&self.lower).zip(&self.upper) {
            *ui = ui.clamp(*lo, *hi);
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter().zip(&self.lower).zip(&self.upper).all(|((ui, lo), hi)| lo <= ui && ui <= hi)
    }
}

/// Discrete-time kinematic models, explicit Euler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    /// `(x, y, heading)` driven by `(v, omega)`.
    Unicycle,
    /// `(yaw, pitch)` driven by their rates.
    SingleIntegrator,
}

impl Model {
    pub fn state_dim(self) -> usize {
        match self {
            Model::Unicycle => 3,
            Model::SingleIntegrator => 2,
        }
    }

    pub fn control_dim(self) -> usize {
        2
    }

    /// Dimension of the workspace point `g(x)`.
    pub fn workspace_dim(self) -> usize {
        2
    }

    /// `g(x)`: both models expose their first two state entries.
    pub fn workspace_point(self, x: &[f64]) -> &[f64] {
        &x[..2]
    }

    pub fn step_into(self, x: &[f64], u: &[f64], dt: f64, out: &mut [f64]) {
        match self {
            Model::Unicycle => {
                let (s, c) = x[2].sin_cos();
                out[0] = x[0] + dt * u[0] * c;
                out[1] = x[1] + dt * u[0] * s;
                out[2] = x[2] + dt * u[1];
            }
            Model::SingleIntegrator => {
                out[0] = x[0] + dt * u[0];
                out[1] = x[1] + dt * u[1];
            }
        }
    }

    pub fn step(self, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.step_into(x, u, dt, &mut out);
        out
    }

    /// Adds `(df/dx)^T w` to `gx` and `(df/du)^T w` to `gu`.
    pub fn step_vjp(self, x: &[f64], u: &[f64], dt: f64, w: &[f64], gx: &mut [f64], gu: &mut [f64]) {
        match self {
            Model::Unicycle => {
                let (s, c) = x[2].sin_cos();
                gx[0] += w[0];
                gx[1] += w[1];
                gx[2] += w[2] + dt * u[0] * (-s * w[0] + c * w[1]);
                gu[0] += dt * (c * w[0] + s * w[1]);
                gu[1] += dt * w[2];
            }
            Model::SingleIntegrator => {
                gx[0] += w[0];
                gx[1] += w[1];
                gu[0] += dt * w[0];
                gu[1] += dt * w[1];
            }
        }
    }

    /// Distance travelled by the workspace point under one control.
    pub fn step_length(self, u: &[f64], dt: f64) -> f64 {
        match self {
            Model::Unicycle => u[0].abs() * dt,
            Model::SingleIntegrator => (u[0] * u[0] + u[1] * u[1]).sqrt() * dt,
        }
    }
}

pub fn unicycle_step(s: BodyState, v: f64, omega: f64, dt: f64) -> BodyState {
    BodyState::from_slice(&Model::Unicycle.step(&s.to_vec(), &[v, omega], dt))
}

pub fn integrator_step(s: CameraState, yaw_rate: f64, pitch_rate: f64, dt: f64) -> CameraState {
    CameraState::from_slice(&Model::SingleIntegrator.step(&s.to_vec(), &[yaw_rate, pitch_rate], dt))
}

/// States `x_0 = s0, x_{t+1} = f(x_t, u_t)`; one state per control.
pub fn rollout(model: Model, s0: &[f64], controls: &[Vec<f64>], dt: f64) -> Result<Vec<Vec<f64>>> {
    if controls.is_empty() {
        return Err(invalid("rollout needs at least one control"));
    }
    if s0.len() != model.state_dim() {
        return Err(invalid("initial state dimension mismatch"));
    }
    let mut states = Vec::with_capacity(controls.len());
    states.push(s0.to_vec());
    for u in &controls[..controls.len() - 1] {
        let next = model.step(states.last().unwrap(), u, dt);
        states.push(next);
    }
    Ok(states)
}

/// Zero-mean Gaussian actuation noise, truncated at three standard deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActuationNoise {
    pub std: f64,
}

/// Outcome of executing a control sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Tracked {
    /// `T + 1` states: the start plus one per executed control.
    pub states: Vec<Vec<f64>>,
    pub path_length: f64,
}

/// Kinematic stand-in for the low-level controller.
#[derive(Clone, Debug)]
pub struct Tracker {
    pub model: Model,
    pub dt: f64,
    pub noise: ActuationNoise,
}

impl Tracker {
    pub fn new(model: Model, dt: f64) -> Self {
        Self { model, dt, noise: ActuationNoise::default() }
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.noise = ActuationNoise { std };
        self
    }

    /// Executes one control; returns the new state and the distance travelled.
    pub fn execute_step<R: Rng + ?Sized>(&self, x: &[f64], u: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
        let mut applied = u.to_vec();
        if self.noise.std > 0.0 {
            let normal = Normal::new(0.0, self.noise.std).expect("finite std");
            let cap = 3.0 * self.noise.std;
            // the unicycle slips in speed only; the gimbal jitters on both axes
            let noisy = match self.model {
                Model::Unicycle => 1,
                Model::SingleIntegrator => applied.len(),
            };
            for a in applied.iter_mut().take(noisy) {
                *a += normal.sample(rng).clamp(-cap, cap);
            }
        }
        let next = self.model.step(x, &applied, self.dt);
        (next, self.model.step_length(&applied, self.dt))
    }

    /// Runs every planned control from the plan's first state.
    pub fn track<R: Rng + ?Sized>(&self, start: &[f64], controls: &[Vec<f64>], rng: &mut R) -> Result<Tracked> {
        if controls.is_empty() {
            return Err(invalid("cannot track an empty plan"));
        }
        let mut states = vec![start.to_vec()];
        let mut path_length = 0.0;
        for u in controls {
            let (next, len) = self.execute_step(states.last().unwrap(), u, rng);
            path_length += len;
            states.push(next);
        }
        Ok(Tracked { states, path_length })
    }
}
