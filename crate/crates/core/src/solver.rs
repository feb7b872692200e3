//! Transcription-based ergodic trajectory optimizer.
//!
//! The decision vector stacks the free states and all controls,
//! `z = (x_1, ..., x_{T-1}, u_0, ..., u_{T-1})`, with `x_0` pinned. Dynamics
//! enter as equality constraints through an augmented Lagrangian; control
//! boxes are enforced by projection; the per-step displacement cap and
//! workspace containment use a logarithmic barrier whose weight shrinks
//! geometrically across the outer rounds. Each round is solved with a
//! projected limited-memory BFGS method and Armijo backtracking.
//!
//! The objective is rescaled internally so that the gradient of the initial
//! guess has unit max-norm; all tolerances refer to that scaled problem.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlBounds, Model};
use crate::ergodic::{CoefficientVector, CoverageHistory, FourierBasis, MetricKernel};
use crate::error::{invalid, Error, Result};

/// One ergodic trajectory optimization problem.
#[derive(Clone, Debug)]
pub struct ErgodicProblem {
    pub basis: FourierBasis,
    pub phi: CoefficientVector,
    /// Already executed points folded into the trajectory coefficients.
    pub history: Option<CoverageHistory>,
    pub model: Model,
    pub x0: Vec<f64>,
    pub horizon: usize,
    pub dt: f64,
    /// Row-major `m x m` control weight `R`.
    pub control_weight: Vec<f64>,
    pub bounds: ControlBounds,
}

impl ErgodicProblem {
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.model.state_dim(), self.model.control_dim());
        if self.horizon < 2 {
            return Err(invalid("horizon must be at least 2"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        if self.x0.len() != n {
            return Err(invalid(format!("initial state needs {n} entries")));
        }
        if self.basis.dims() != self.model.workspace_dim() {
            return Err(invalid("basis and model disagree on workspace dimension"));
        }
        if self.phi.len() != self.basis.len() {
            return Err(invalid("map coefficients do not match the basis"));
        }
        if let Some(h) = &self.history {
            if h.sums().len() != self.basis.len() {
                return Err(invalid("history does not match the basis"));
            }
        }
        self.bounds.validate()?;
        if self.bounds.lower.len() != m {
            return Err(invalid(format!("control bounds need {m} channels")));
        }
        if self.control_weight.len() != m * m {
            return Err(invalid(format!("control weight must be {m}x{m}")));
        }
        for i in 0..m {
            for j in 0..m {
                if (self.control_weight[i * m + j] - self.control_weight[j * m + i]).abs() > 1e-12 {
                    return Err(invalid("control weight must be symmetric"));
                }
            }
        }
        if !is_psd(&self.control_weight, m) {
            return Err(invalid("control weight must be positive semidefinite"));
        }
        if !self.basis.workspace().contains(self.model.workspace_point(&self.x0)) {
            return Err(Error::Infeasible(format!("initial state {:?} lies outside the workspace", self.x0)));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout { n: self.model.state_dim(), m: self.model.control_dim(), horizon: self.horizon }
    }

    fn control_cost(&self, u: &[f64]) -> f64 {
        let m = self.model.control_dim();
        let mut c = 0.0;
        for i in 0..m {
            for j in 0..m {
                c += u[i] * self.control_weight[i * m + j] * u[j];
            }
        }
        c
    }

    /// Adds `(R + R^T) u` scaled by `s`.
    fn add_control_gradient(&self, u: &[f64], s: f64, g: &mut [f64]) {
        let m = self.model.control_dim();
        for i in 0..m {
            for j in 0..m {
                g[i] += s * (self.control_weight[i * m + j] + self.control_weight[j * m + i]) * u[j];
            }
        }
    }

    /// Ergodic metric of the given states (history included).
    pub fn ergodic_cost(&self, states: &[Vec<f64>]) -> f64 {
        let points: Vec<f64> = states.iter().flat_map(|x| self.model.workspace_point(x).to_vec()).collect();
        MetricKernel::new(&self.basis, &self.phi.0, self.history.as_ref()).value(&points)
    }

    pub fn total_control_cost(&self, controls: &[Vec<f64>]) -> f64 {
        controls.iter().map(|u| self.control_cost(u)).sum()
    }
}

/// Sylvester-style check via a Cholesky attempt with a small shift.
fn is_psd(r: &[f64], m: usize) -> bool {
    let trace: f64 = (0..m).map(|i| r[i * m + i]).sum();
    let shift = 1e-12 * trace.abs().max(1e-300);
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = r[i * m + j] + if i == j { shift } else { 0.0 };
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                if s < 0.0 {
                    return false;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = if l[j * m + j] > 0.0 { s / l[j * m + j] } else { 0.0 };
            }
        }
    }
    true
}

/// Index map of the stacked decision vector.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        (self.horizon - 1) * self.n + self.horizon * self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Slot of `x_t`, `t >= 1`.
    pub fn state(&self, t: usize) -> std::ops::Range<usize> {
        debug_assert!(t >= 1 && t < self.horizon);
        (t - 1) * self.n..t * self.n
    }

    pub fn control(&self, t: usize) -> std::ops::Range<usize> {
        let base = (self.horizon - 1) * self.n;
        base + t * self.m..base + (t + 1) * self.m
    }

    pub fn pack(&self, states: &[Vec<f64>], controls: &[Vec<f64>]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.len());
        for x in &states[1..] {
            z.extend_from_slice(x);
        }
        for u in controls {
            z.extend_from_slice(u);
        }
        z
    }

    pub fn unpack(&self, x0: &[f64], z: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut states = vec![x0.to_vec()];
        states.extend((1..self.horizon).map(|t| z[self.state(t)].to_vec()));
        let controls = (0..self.horizon).map(|t| z[self.control(t)].to_vec()).collect();
        (states, controls)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub penalty_init: f64,
    pub warm_penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub max_outer: usize,
    pub barrier_init: f64,
    pub barrier_final: f64,
    pub inner_max_iter: usize,
    pub grad_tol: f64,
    /// Relative objective decrease below which an inner solve is considered stalled.
    pub ftol: f64,
    pub armijo: f64,
    pub max_line_search_failures: usize,
    pub defect_tol: f64,
    pub memory: usize,
    /// Weight of the l1 defect norm in the outer-loop merit function.
    pub merit_defect_weight: f64,
    /// Seeds a random perturbation of the cold-start guess.
    pub seed: Option<u64>,
    /// Perturbation size as a fraction of each control range.
    pub jitter: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            penalty_init: 10.0,
            warm_penalty_init: 1e4,
            penalty_growth: 10.0,
            penalty_max: 1e8,
            max_outer: 8,
            barrier_init: 1.0,
            barrier_final: 1e-4,
            inner_max_iter: 500,
            grad_tol: 1e-3,
            ftol: 2.2e-9,
            armijo: 1e-4,
            max_line_search_failures: 20,
            defect_tol: 1e-5,
            memory: 8,
            merit_defect_weight: 100.0,
            seed: None,
            jitter: 0.3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub outer_rounds: usize,
    pub converged: bool,
    /// Max dynamics defect of the returned trajectory.
    pub defect: f64,
    /// Max dynamics defect of the last accepted transcription iterate.
    pub transcription_defect: f64,
    /// Projected reduced-gradient max-norm of the scaled objective at the returned controls.
    pub optimality: f64,
    pub line_search_failures: usize,
    /// Objective of the (feasible) initial guess.
    pub initial_cost: f64,
    /// Merit after each accepted outer round, starting with the initial guess.
    pub merit_history: Vec<f64>,
    pub scale: f64,
    /// True when the initial guess was returned because the solve did not improve on it.
    pub fell_back: bool,
}

/// States and controls of one plan with its cost breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub model: Model,
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub ergodic_cost: f64,
    pub control_cost: f64,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn cost(&self) -> f64 {
        self.ergodic_cost + self.control_cost
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.states
            .iter()
            .map(|x| {
                let w = self.model.workspace_point(x);
                [w[0], w[1]]
            })
            .collect()
    }

    /// `max_t ||x_{t+1} - f(x_t, u_t)||_inf`.
    pub fn max_defect(&self) -> f64 {
        self.states
            .windows(2)
            .zip(&self.controls)
            .map(|(w, u)| {
                let f = self.model.step(&w[0], u, self.dt);
                w[1].iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Largest workspace displacement between consecutive states.
    pub fn max_step(&self) -> f64 {
        self.points()
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }
}

/// One inner iteration of the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub ergodic: f64,
    pub defect: f64,
    pub grad_norm: f64,
}

/// Writes `iter,J,E,defect_inf,grad_norm` rows.
pub fn write_trace_csv(rows: &[TraceRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "iter,J,E,defect_inf,grad_norm")?;
    for r in rows {
        writeln!(out, "{},{:e},{:e},{:e},{:e}", r.iter, r.objective, r.ergodic, r.defect, r.grad_norm)?;
    }
    Ok(())
}

/// `J = E + sum_t u_t^T R u_t` and its gradient with respect to `z`.
pub fn objective_and_gradient(problem: &ErgodicProblem, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    problem.validate()?;
    let lay = problem.layout();
    if z.len() != lay.len() {
        return Err(invalid(format!("decision vector has {} entries, expected {}", z.len(), lay.len())));
    }
    let mut ev = Evaluator::new(problem);
    let mut g = vec![0.0; z.len()];
    let w = Weights { scale: 1.0, mu: 0.0, lambda: &[], rho: 0.0 };
    let v = ev.eval(z, Some(&mut g), &w);
    Ok((v, g))
}

/// Drops the first step and repeats the last one; horizon is preserved.
pub fn shift_warm_start(prev: &Trajectory) -> Result<Trajectory> {
    if prev.horizon() < 2 {
        return Err(invalid("warm start needs at least two steps"));
    }
    let mut states = prev.states[1..].to_vec();
    states.push(prev.states.last().unwrap().clone());
    let mut controls = prev.controls[1..].to_vec();
    controls.push(prev.controls.last().unwrap().clone());
    Ok(Trajectory {
        model: prev.model,
        dt: prev.dt,
        states,
        controls,
        ergodic_cost: f64::NAN,
        control_cost: f64::NAN,
        diagnostics: Diagnostics::default(),
    })
}

/// Cold-start controls: half-speed straight line for the unicycle, rest for
/// the integrator, optionally perturbed from `settings.seed`.
pub fn initial_controls(problem: &ErgodicProblem, settings: &SolverSettings) -> Vec<Vec<f64>> {
    let b = &problem.bounds;
    let base = match problem.model {
        Model::Unicycle => vec![0.5 * b.upper[0], 0.0],
        Model::SingleIntegrator => vec![0.0, 0.0],
    };
    let mut controls = vec![base; problem.horizon];
    if let Some(seed) = settings.seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for u in controls.iter_mut() {
            for (i, ui) in u.iter_mut().enumerate() {
                // the unicycle keeps its cruise speed and only wanders in heading
                if problem.model == Model::Unicycle && i == 0 {
                    continue;
                }
                let half = 0.5 * (b.upper[i] - b.lower[i]);
                *ui += settings.jitter * half * rng.random_range(-1.0..=1.0);
            }
            b.project(u);
        }
    }
    controls
}

struct Weights<'a> {
    scale: f64,
    mu: f64,
    lambda: &'a [f64],
    rho: f64,
}

/// Value breakdown at one iterate.
#[derive(Clone, Copy, Debug, Default)]
struct Terms {
    ergodic: f64,
    control: f64,
    defect_inf: f64,
    defect_l1: f64,
}

struct Evaluator<'a> {
    p: &'a ErgodicProblem,
    kernel: MetricKernel<'a>,
    lay: Layout,
    states: Vec<f64>,
    points: Vec<f64>,
    gpoints: Vec<f64>,
    defects: Vec<f64>,
    fx: Vec<f64>,
    terms: Terms,
}

impl<'a> Evaluator<'a> {
    fn new(p: &'a ErgodicProblem) -> Self {
        let lay = p.layout();
        let t = p.horizon;
        Self {
            p,
            kernel: MetricKernel::new(&p.basis, &p.phi.0, p.history.as_ref()),
            lay,
            states: vec![0.0; t * lay.n],
            points: vec![0.0; t * 2],
            gpoints: vec![0.0; t * 2],
            defects: vec![0.0; (t - 1) * lay.n],
            fx: vec![0.0; lay.n],
            terms: Terms::default(),
        }
    }

    fn load(&mut self, z: &[f64]) {
        let n = self.lay.n;
        self.states[..n].copy_from_slice(&self.p.x0);
        self.states[n..].copy_from_slice(&z[..(self.p.horizon - 1) * n]);
        for t in 0..self.p.horizon {
            let w = self.p.model.workspace_point(&self.states[t * n..(t + 1) * n]);
            self.points[2 * t..2 * t + 2].copy_from_slice(w);
        }
    }

    /// Barrier value, or `None` when an iterate leaves the strict interior.
    fn barrier(&self) -> Option<f64> {
        let ws = self.p.basis.workspace();
        let mut b = 0.0;
        for t in 1..self.p.horizon {
            for i in 0..2 {
                let w = self.points[2 * t + i];
                let (lo, hi) = (w - ws.lower(i), ws.upper(i) - w);
                if !(lo > 0.0 && hi > 0.0) {
                    return None;
                }
                let l = ws.lengths()[i];
                b -= (lo / l).ln() + (hi / l).ln();
            }
        }
        let d2 = self.p.bounds.max_step * self.p.bounds.max_step;
        for t in 0..self.p.horizon - 1 {
            let q = self.step_sq(t) / d2;
            if !(q < 1.0) {
                return None;
            }
            b -= (1.0 - q).ln();
        }
        Some(b)
    }

    fn step_sq(&self, t: usize) -> f64 {
        let dx = self.points[2 * t + 2] - self.points[2 * t];
        let dy = self.points[2 * t + 3] - self.points[2 * t + 1];
        dx * dx + dy * dy
    }

    fn eval(&mut self, z: &[f64], grad: Option<&mut [f64]>, w: &Weights) -> f64 {
        self.load(z);
        let (n, lay, model, dt) = (self.lay.n, self.lay, self.p.model, self.p.dt);
        let barrier = if w.mu > 0.0 {
            match self.barrier() {
                Some(b) => b,
                None => return f64::INFINITY,
            }
        } else {
            0.0
        };
        let ergodic = if grad.is_some() {
            self.kernel.value_and_gradient(&self.points, &mut self.gpoints)
        } else {
            self.kernel.value(&self.points)
        };
        let control: f64 = (0..self.p.horizon).map(|t| self.p.control_cost(&z[lay.control(t)])).sum();
        let (mut dinf, mut dl1, mut al) = (0.0f64, 0.0, 0.0);
        for t in 0..self.p.horizon - 1 {
            model.step_into(&self.states[t * n..(t + 1) * n], &z[lay.control(t)], dt, &mut self.fx);
            for i in 0..n {
                let c = self.states[(t + 1) * n + i] - self.fx[i];
                self.defects[t * n + i] = c;
                dinf = dinf.max(c.abs());
                dl1 += c.abs();
                if w.rho > 0.0 || !w.lambda.is_empty() {
                    let l = w.lambda.get(t * n + i).copied().unwrap_or(0.0);
                    al += l * c + 0.5 * w.rho * c * c;
                }
            }
        }
        self.terms = Terms { ergodic, control, defect_inf: dinf, defect_l1: dl1 };
        let value = w.scale * (ergodic + control) + w.mu * barrier + al;
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            for t in 1..self.p.horizon {
                let r = lay.state(t);
                g[r.start] += w.scale * self.gpoints[2 * t];
                g[r.start + 1] += w.scale * self.gpoints[2 * t + 1];
            }
            for t in 0..self.p.horizon {
                let r = lay.control(t);
                let u = z[r.clone()].to_vec();
                self.p.add_control_gradient(&u, w.scale, &mut g[r]);
            }
            if w.mu > 0.0 {
                let ws = self.p.basis.workspace();
                for t in 1..self.p.horizon {
                    let s = lay.state(t).start;
                    for i in 0..2 {
                        let p = self.points[2 * t + i];
                        g[s + i] += w.mu * (-1.0 / (p - ws.lower(i)) + 1.0 / (ws.upper(i) - p));
                    }
                }
                let d2 = self.p.bounds.max_step * self.p.bounds.max_step;
                for t in 0..self.p.horizon - 1 {
                    let q = self.step_sq(t) / d2;
                    let coef = w.mu * 2.0 / (d2 * (1.0 - q));
                    let dx = coef * (self.points[2 * t + 2] - self.points[2 * t]);
                    let dy = coef * (self.points[2 * t + 3] - self.points[2 * t + 1]);
                    let s1 = lay.state(t + 1).start;
                    g[s1] += dx;
                    g[s1 + 1] += dy;
                    if t >= 1 {
                        let s0 = lay.state(t).start;
                        g[s0] -= dx;
                        g[s0 + 1] -= dy;
                    }
                }
            }
            if w.rho > 0.0 || !w.lambda.is_empty() {
                let mut mult = vec![0.0; n];
                let mut gx = vec![0.0; n];
                for t in 0..self.p.horizon - 1 {
                    for i in 0..n {
                        let l = w.lambda.get(t * n + i).copied().unwrap_or(0.0);
                        mult[i] = -(l + w.rho * self.defects[t * n + i]);
                    }
                    let s1 = lay.state(t + 1);
                    for i in 0..n {
                        g[s1.start + i] -= mult[i];
                    }
                    gx.iter_mut().for_each(|v| *v = 0.0);
                    let ur = lay.control(t);
                    let (xt, ut) = (&self.states[t * n..(t + 1) * n], &z[ur.clone()]);
                    let mut gu = [0.0; 2];
                    model.step_vjp(xt, ut, dt, &mult, &mut gx, &mut gu);
                    if t >= 1 {
                        let s0 = lay.state(t).start;
                        for i in 0..n {
                            g[s0 + i] += gx[i];
                        }
                    }
                    g[ur.start] += gu[0];
                    g[ur.start + 1] += gu[1];
                }
            }
        }
        value
    }
}

/// Projected gradient for simple bounds.
fn projected_gradient(z: &[f64], g: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]) {
    for i in 0..z.len() {
        out[i] = if (z[i] <= lo[i] && g[i] > 0.0) || (z[i] >= hi[i] && g[i] < 0.0) { 0.0 } else { g[i] };
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct InnerOutcome {
    iterations: usize,
    converged: bool,
    failures: usize,
    stalled: bool,
}

/// Projected L-BFGS with Armijo backtracking on a box.
fn minimize_box(
    f: &mut dyn FnMut(&[f64], Option<&mut [f64]>) -> f64,
    z: &mut [f64],
    lo: &[f64],
    hi: &[f64],
    settings: &SolverSettings,
    mut on_iter: impl FnMut(usize, &[f64], f64, f64),
) -> InnerOutcome {
    let n = z.len();
    let mut g = vec![0.0; n];
    let mut fz = f(z, Some(&mut g));
    let mut pg = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(settings.memory);
    let mut alpha_hist = vec![0.0; settings.memory];
    let (mut failures, mut consecutive) = (0, 0);
    let mut first_scale = true;
    for iter in 0..settings.inner_max_iter {
        projected_gradient(z, &g, lo, hi, &mut pg);
        let pg_norm = inf_norm(&pg);
        on_iter(iter, z, fz, pg_norm);
        if pg_norm < settings.grad_tol {
            return InnerOutcome { iterations: iter, converged: true, failures, stalled: false };
        }
        // two-loop recursion on the free variables
        d.copy_from_slice(&pg);
        for (k, (s, y, rho)) in mem.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_hist[k] = a;
            for i in 0..n {
                d[i] -= a * y[i];
            }
        }
        if let Some((s, y, _)) = mem.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        } else if first_scale {
            let s = 1.0 / pg_norm.max(1.0);
            d.iter_mut().for_each(|v| *v *= s);
        }
        for (k, (s, y, rho)) in mem.iter().enumerate() {
            let b = rho * dot(y, &d);
            for i in 0..n {
                d[i] += s[i] * (alpha_hist[k] - b);
            }
        }
        for i in 0..n {
            d[i] = -d[i];
            if (z[i] <= lo[i] && d[i] < 0.0) || (z[i] >= hi[i] && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        if dot(&d, &pg) >= 0.0 {
            mem.clear();
            for i in 0..n {
                d[i] = -pg[i] / pg_norm.max(1.0);
            }
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = (z[i] + alpha * d[i]).clamp(lo[i], hi[i]);
            }
            let ft = f(&trial, None);
            let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - z[i])).sum();
            if ft.is_finite() && ft <= fz + settings.armijo * decrease && decrease < 0.0 {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            failures += 1;
            consecutive += 1;
            if consecutive >= settings.max_line_search_failures || mem.is_empty() {
                return InnerOutcome { iterations: iter + 1, converged: false, failures, stalled: true };
            }
            mem.clear();
            continue;
        }
        consecutive = 0;
        first_scale = false;
        let ft = f(&trial, Some(&mut gt));
        let s: Vec<f64> = (0..n).map(|i| trial[i] - z[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if mem.len() == settings.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        z.copy_from_slice(&trial);
        g.copy_from_slice(&gt);
        let stalled = (fz - ft) <= settings.ftol * fz.abs().max(ft.abs()).max(1.0);
        fz = ft;
        if stalled {
            return InnerOutcome { iterations: iter + 1, converged: true, failures, stalled: false };
        }
    }
    projected_gradient(z, &g, lo, hi, &mut pg);
    let converged = inf_norm(&pg) < settings.grad_tol;
    InnerOutcome { iterations: settings.inner_max_iter, converged, failures, stalled: false }
}

/// Rolls the controls out from `x0`, shrinking any control whose step would
/// leave the workspace interior or exceed the displacement cap.
fn restore(problem: &ErgodicProblem, controls: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let ws = problem.basis.workspace();
    let model = problem.model;
    let strictly_inside = |w: &[f64]| (0..2).all(|i| w[i] > ws.lower(i) && w[i] < ws.upper(i));
    let mut states = vec![problem.x0.clone()];
    let mut out = Vec::with_capacity(controls.len());
    for (t, u) in controls.iter().enumerate() {
        let mut u = u.clone();
        problem.bounds.project(&mut u);
        if t + 1 == controls.len() {
            out.push(u);
            break;
        }
        let x = states.last().unwrap().clone();
        let mut next = model.step(&x, &u, problem.dt);
        let mut shrinks = 0;
        loop {
            let (a, b) = (model.workspace_point(&x), model.workspace_point(&next));
            let step = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let inside = strictly_inside(b) || step == 0.0;
            if inside && step <= problem.bounds.max_step {
                break;
            }
            shrinks += 1;
            if shrinks > 60 {
                u.iter_mut().for_each(|v| *v = 0.0);
            } else {
                u.iter_mut().for_each(|v| *v *= 0.5);
            }
            next = model.step(&x, &u, problem.dt);
        }
        states.push(next);
        out.push(u);
    }
    (states, out)
}

/// Pulls states strictly inside the barrier domain, keeping them close to the input.
fn interior_states(problem: &ErgodicProblem, states: &mut [Vec<f64>]) {
    let ws = problem.basis.workspace();
    let cap = problem.bounds.max_step * (1.0 - 1e-3);
    for t in 1..states.len() {
        let prev = [states[t - 1][0], states[t - 1][1]];
        let x = &mut states[t];
        for i in 0..2 {
            let margin = 1e-6 * ws.lengths()[i];
            x[i] = x[i].clamp(ws.lower(i) + margin, ws.upper(i) - margin);
        }
        let (dx, dy) = (x[0] - prev[0], x[1] - prev[1]);
        let len = (dx * dx + dy * dy).sqrt();
        if len >= cap {
            let s = cap / len;
            x[0] = prev[0] + dx * s;
            x[1] = prev[1] + dy * s;
        }
    }
}

/// Projected reduced gradient of `scale * J(rollout(u))` with respect to the controls.
fn reduced_optimality(problem: &ErgodicProblem, controls: &[Vec<f64>], scale: f64) -> f64 {
    let (n, t_len) = (problem.model.state_dim(), problem.horizon);
    let states = crate::dynamics::rollout(problem.model, &problem.x0, controls, problem.dt).expect("valid rollout");
    let points: Vec<f64> = states.iter().flat_map(|x| problem.model.workspace_point(x).to_vec()).collect();
    let mut gp = vec![0.0; points.len()];
    MetricKernel::new(&problem.basis, &problem.phi.0, problem.history.as_ref()).value_and_gradient(&points, &mut gp);
    let mut adj = vec![0.0; n];
    adj[0] = gp[2 * (t_len - 1)];
    adj[1] = gp[2 * (t_len - 1) + 1];
    let mut worst: f64 = 0.0;
    let mut check = |u: &[f64], g: &[f64]| {
        for i in 0..u.len() {
            let gi = scale * g[i];
            let blocked = (u[i] <= problem.bounds.lower[i] && gi > 0.0) || (u[i] >= problem.bounds.upper[i] && gi < 0.0);
            if !blocked {
                worst = worst.max(gi.abs());
            }
        }
    };
    let mut gl = vec![0.0; 2];
    problem.add_control_gradient(&controls[t_len - 1], 1.0, &mut gl);
    check(&controls[t_len - 1], &gl);
    for t in (0..t_len - 1).rev() {
        let mut gx = vec![0.0; n];
        let mut gu = vec![0.0; 2];
        problem.model.step_vjp(&states[t], &controls[t], problem.dt, &adj, &mut gx, &mut gu);
        problem.add_control_gradient(&controls[t], 1.0, &mut gu);
        check(&controls[t], &gu);
        gx[0] += gp[2 * t];
        gx[1] += gp[2 * t + 1];
        adj = gx;
    }
    worst
}

#[derive(Clone, Debug, Default)]
pub struct Solver {
    pub settings: SolverSettings,
}

impl Solver {
    pub fn new(settings: SolverSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&self, problem: &ErgodicProblem, warm_start: Option<&Trajectory>) -> Result<Trajectory> {
        self.solve_traced(problem, warm_start, None)
    }

    /// As [`Solver::solve`], appending one [`TraceRow`] per inner iteration to `trace`.
    pub fn solve_traced(
        &self,
        problem: &ErgodicProblem,
        warm_start: Option<&Trajectory>,
        mut trace: Option<&mut Vec<TraceRow>>,
    ) -> Result<Trajectory> {
        problem.validate()?;
        let st = &self.settings;
        let lay = problem.layout();
        let guess_controls = match warm_start {
            Some(w) => {
                if w.horizon() != problem.horizon || w.controls.len() != problem.horizon || w.model != problem.model {
                    return Err(invalid("warm start does not match the problem horizon or model"));
                }
                w.controls.clone()
            }
            None => initial_controls(problem, st),
        };
        let (guess_states, guess_controls) = restore(problem, &guess_controls);
        let guess = self.finish(problem, guess_states.clone(), guess_controls.clone());

        // a shifted plan's duplicated tail breaks the dynamics, so states always come from the rollout
        let mut start_states = guess_states;
        interior_states(problem, &mut start_states);
        let mut z = lay.pack(&start_states, &guess_controls);

        let mut ev = Evaluator::new(problem);
        let mut g = vec![0.0; z.len()];
        let plain = Weights { scale: 1.0, mu: 0.0, lambda: &[], rho: 0.0 };
        // scale at the unperturbed default guess, so tolerances do not depend on the start
        let reference = {
            let plain_settings = SolverSettings { seed: None, ..st.clone() };
            let (s, u) = restore(problem, &initial_controls(problem, &plain_settings));
            lay.pack(&s, &u)
        };
        ev.eval(&reference, Some(&mut g), &plain);
        let scale = 1.0 / inf_norm(&g).max(1e-300);
        let scale = if scale.is_finite() { scale } else { 1.0 };

        let (mut lo, mut hi) = (vec![f64::NEG_INFINITY; z.len()], vec![f64::INFINITY; z.len()]);
        for t in 0..problem.horizon {
            for (k, i) in lay.control(t).enumerate() {
                lo[i] = problem.bounds.lower[k];
                hi[i] = problem.bounds.upper[k];
                z[i] = z[i].clamp(lo[i], hi[i]);
            }
        }

        let merit = |ev: &mut Evaluator, z: &[f64]| {
            ev.eval(z, None, &plain);
            scale * (ev.terms.ergodic + ev.terms.control) + st.merit_defect_weight * ev.terms.defect_l1
        };
        let mut merit_history = vec![merit(&mut ev, &z)];
        let mut lambda = vec![0.0; (problem.horizon - 1) * lay.n];
        // a warm start is nearly feasible, so loose penalties would only undo it
        let mut rho = if warm_start.is_some() { st.warm_penalty_init } else { st.penalty_init };
        let mut prev_defect = ev.terms.defect_inf.max(1e-300);
        let mut transcription_defect = ev.terms.defect_inf;
        let (mut iterations, mut failures, mut rounds) = (0, 0, 0);
        let mut last_converged = false;
        let mut trace_iter = 0usize;
        for r in 0..st.max_outer {
            rounds = r + 1;
            let frac = if st.max_outer > 1 { r as f64 / (st.max_outer - 1) as f64 } else { 1.0 };
            // a warm start already sits near a barrier-free optimum
            let mu = if warm_start.is_some() {
                st.barrier_final
            } else {
                st.barrier_init * (st.barrier_final / st.barrier_init).powf(frac)
            };
            let mut candidate = z.clone();
            let outcome = {
                let lam = lambda.clone();
                let w = Weights { scale, mu, lambda: &lam, rho };
                let mut ev_inner = Evaluator::new(problem);
                let mut ev_trace = Evaluator::new(problem);
                let mut f = |x: &[f64], g: Option<&mut [f64]>| ev_inner.eval(x, g, &w);
                let tr = &mut trace;
                let ti = &mut trace_iter;
                minimize_box(&mut f, &mut candidate, &lo, &hi, st, |_, x, fx, pgn| {
                    if let Some(rows) = tr.as_deref_mut() {
                        ev_trace.eval(x, None, &plain);
                        let t = ev_trace.terms;
                        rows.push(TraceRow {
                            iter: *ti,
                            objective: t.ergodic + t.control,
                            ergodic: t.ergodic,
                            defect: t.defect_inf,
                            grad_norm: pgn,
                        });
                        let _ = fx;
                        *ti += 1;
                    }
                })
            };
            iterations += outcome.iterations;
            failures += outcome.failures;
            last_converged = outcome.converged;
            let m_new = merit(&mut ev, &candidate);
            let defect = ev.terms.defect_inf;
            if m_new <= *merit_history.last().unwrap() {
                z = candidate;
                merit_history.push(m_new);
                transcription_defect = defect;
                for (l, c) in lambda.iter_mut().zip(&ev.defects) {
                    *l += rho * c;
                }
                if defect > 0.25 * prev_defect {
                    rho = (rho * st.penalty_growth).min(st.penalty_max);
                }
                prev_defect = defect.max(1e-300);
            } else {
                rho = (rho * st.penalty_growth).min(st.penalty_max);
            }
            if outcome.stalled && failures >= st.max_line_search_failures {
                break;
            }
            if outcome.converged && transcription_defect <= st.defect_tol && mu <= st.barrier_final {
                break;
            }
        }

        let (_, controls) = lay.unpack(&problem.x0, &z);
        let (states, controls) = restore(problem, &controls);
        let mut best = self.finish(problem, states, controls);
        let fell_back = best.cost() > guess.cost();
        if fell_back {
            best = guess.clone();
        }
        let optimality = reduced_optimality(problem, &best.controls, scale);
        best.diagnostics = Diagnostics {
            iterations,
            outer_rounds: rounds,
            converged: last_converged && transcription_defect <= st.defect_tol.max(1e-3) && !fell_back,
            defect: best.max_defect(),
            transcription_defect,
            optimality,
            line_search_failures: failures,
            initial_cost: guess.cost(),
            merit_history,
            scale,
            fell_back,
        };
        Ok(best)
    }

    fn finish(&self, problem: &ErgodicProblem, states: Vec<Vec<f64>>, controls: Vec<Vec<f64>>) -> Trajectory {
        let ergodic_cost = problem.ergodic_cost(&states);
        let control_cost = problem.total_control_cost(&controls);
        Trajectory {
            model: problem.model,
            dt: problem.dt,
            states,
            controls,
            ergodic_cost,
            control_cost,
            diagnostics: Diagnostics::default(),
        }
    }
}

/// Straight cold-start guess as a feasible trajectory (no optimization).
pub fn initial_guess(problem: &ErgodicProblem, settings: &SolverSettings) -> Result<Trajectory> {
    problem.validate()?;
    let (states, controls) = restore(problem, &initial_controls(problem, settings));
    Ok(Solver::default().finish(problem, states, controls))
}
