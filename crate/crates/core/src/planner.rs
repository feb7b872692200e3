//! Bi-level executive: coarse body plans, fine camera sweeps, imaging and
//! map updates on a simulated mission clock.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{BodyState, CameraState, ControlBounds, Model, Tracker};
use crate::ergodic::{CoefficientVector, CoverageHistory, FourierBasis, Workspace};
use crate::error::{Error, Result};
use crate::infomap::{
    project_to_fine, BodyPose, BumpParams, CameraAngles, DetectionEvent, Epicenter, FineUpdate, InfoMap, Label,
};
use crate::solver::{shift_warm_start, ErgodicProblem, Solver, SolverSettings, TraceRow, Trajectory};
use crate::world::{CameraModel, Scenario};

/// How the camera is pointed while the body follows its coarse plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Ergodic camera sweeps planned on the fine map.
    BlEto,
    /// One image per body step at a fixed forward pose.
    EtoFixedCamera,
    /// Uniformly random camera poses, as many per step as a planned sweep.
    EtoRandomCamera,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::BlEto, Method::EtoFixedCamera, Method::EtoRandomCamera];

    pub fn name(self) -> &'static str {
        match self {
            Method::BlEto => "bl-eto",
            Method::EtoFixedCamera => "eto-fixed-camera",
            Method::EtoRandomCamera => "eto-random-camera",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Simulated seconds charged per action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeCharges {
    pub coarse_plan: f64,
    pub fine_plan: f64,
    pub image: f64,
}

impl Default for TimeCharges {
    fn default() -> Self {
        Self { coarse_plan: 2.0, fine_plan: 0.5, image: 0.139 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiLevelConfig {
    /// Field size in meters; the origin is the lower-left corner.
    pub field: [f64; 2],
    pub coarse_grid: [usize; 2],
    pub coarse_modes: usize,
    pub coarse_horizon: usize,
    pub body_dt: f64,
    pub body_bounds: ControlBounds,
    /// Diagonal of the body control weight.
    pub body_control_weight: [f64; 2],
    pub start: [f64; 3],
    pub epicenters: Vec<Epicenter>,
    pub coarse_bump: BumpParams,

    /// Fine grid over (yaw, pitch).
    pub fine_grid: [usize; 2],
    pub fine_modes: usize,
    pub fine_horizon: usize,
    pub camera_dt: f64,
    /// Per-axis gimbal rate limit in rad/s.
    pub camera_rate: f64,
    pub camera_control_weight: [f64; 2],
    /// Pitch interval of the fine workspace in radians.
    pub pitch_bounds: [f64; 2],
    pub fine_update: FineUpdate,
    /// Camera angles at the start of a mission.
    pub camera_start: [f64; 2],
    /// Number of past sweeps the fine planner remembers.
    pub fine_memory: usize,
    /// Cap on detection-triggered fine replans within one sweep.
    pub max_fine_replans: usize,

    /// Pitch of the fixed-camera baseline.
    pub fixed_pitch: f64,
    pub camera: CameraModel,
    pub time: TimeCharges,
    pub time_budget: f64,
    /// Std of the actuation noise on the body speed.
    pub actuation_noise: f64,
    pub coarse_solver: SolverSettings,
    pub fine_solver: SolverSettings,
    /// Keep a copy of the coarse map every this many body steps.
    pub snapshot_every: Option<usize>,
    /// Record the optimizer's per-iteration trace for every solve.
    pub trace: bool,
}

impl Default for BiLevelConfig {
    fn default() -> Self {
        let camera_dt = 0.4;
        let camera_rate = 0.6;
        let camera = CameraModel::default();
        Self {
            field: [100.0, 100.0],
            coarse_grid: [100, 100],
            coarse_modes: 10,
            coarse_horizon: 48,
            body_dt: 1.0,
            body_bounds: ControlBounds::body_default(),
            body_control_weight: [0.0, 0.0],
            start: [50.0, 50.0, 0.0],
            epicenters: Vec::new(),
            coarse_bump: BumpParams::coarse_default(),
            fine_grid: [54, 9],
            fine_modes: 10,
            fine_horizon: 5,
            camera_dt,
            camera_rate,
            camera_control_weight: [1e-2, 1e-2],
            pitch_bounds: camera.useful_pitch(),
            fine_update: FineUpdate::default(),
            camera_start: [0.0, -15f64.to_radians()],
            fine_memory: 4,
            max_fine_replans: 2,
            fixed_pitch: -15f64.to_radians(),
            camera,
            time: TimeCharges::default(),
            time_budget: 5400.0,
            actuation_noise: 0.0,
            coarse_solver: SolverSettings::default(),
            fine_solver: SolverSettings::default(),
            snapshot_every: None,
            trace: false,
        }
    }
}

impl BiLevelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.coarse_horizon < 2 {
            return bad("coarse horizon must be at least 2");
        }
        if self.fine_horizon < 1 {
            return bad("fine horizon must be at least 1");
        }
        if self.coarse_modes == 0 || self.fine_modes == 0 {
            return bad("mode counts must be positive");
        }
        if !(self.body_dt > 0.0 && self.camera_dt > 0.0 && self.camera_rate > 0.0) {
            return bad("time steps and camera rate must be positive");
        }
        if !(self.time_budget >= 0.0) {
            return bad("time budget must be nonnegative");
        }
        if !(self.pitch_bounds[0] < self.pitch_bounds[1]) {
            return bad("pitch bounds must be increasing");
        }
        if !(self.actuation_noise >= 0.0) {
            return bad("actuation noise must be nonnegative");
        }
        if self.body_control_weight.iter().chain(&self.camera_control_weight).any(|w| !(*w >= 0.0)) {
            return bad("control weights must be nonnegative");
        }
        self.body_bounds.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.camera.validate().map_err(|e| Error::Config(e.to_string()))?;
        let ws = self.field_workspace()?;
        if !ws.contains(&self.start[..2]) {
            return bad("start lies outside the field");
        }
        self.fine_workspace()?;
        if !(self.camera_start[0].abs() < self.camera.yaw_limit
            && self.camera_start[1] > self.pitch_bounds[0]
            && self.camera_start[1] < self.pitch_bounds[1])
        {
            return bad("camera start must lie strictly inside the camera domain");
        }
        InfoMap::init_coarse(ws, self.coarse_grid[0], self.coarse_grid[1], &self.epicenters)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn field_workspace(&self) -> Result<Workspace> {
        Workspace::planar(self.field[0], self.field[1]).map_err(|e| Error::Config(e.to_string()))
    }

    /// Yaw over the unoccluded interval, pitch over `pitch_bounds`.
    pub fn fine_workspace(&self) -> Result<Workspace> {
        let y = self.camera.yaw_limit;
        Workspace::from_bounds(&[-y, self.pitch_bounds[0]], &[y, self.pitch_bounds[1]])
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn camera_bounds(&self) -> ControlBounds {
        let r = self.camera_rate;
        ControlBounds { lower: vec![-r, -r], upper: vec![r, r], max_step: r * self.camera_dt * 2f64.sqrt() }
    }
}

/// Precomputed bases and the solver configuration for both levels.
#[derive(Clone, Debug)]
pub struct Planner {
    pub config: BiLevelConfig,
    coarse_basis: FourierBasis,
    fine_basis: FourierBasis,
}

impl Planner {
    pub fn new(config: BiLevelConfig) -> Result<Self> {
        config.validate()?;
        let coarse_basis = FourierBasis::new(config.field_workspace()?, config.coarse_modes)?;
        let fine_basis = FourierBasis::new(config.fine_workspace()?, config.fine_modes)?;
        Ok(Self { config, coarse_basis, fine_basis })
    }

    pub fn coarse_basis(&self) -> &FourierBasis {
        &self.coarse_basis
    }

    pub fn fine_basis(&self) -> &FourierBasis {
        &self.fine_basis
    }

    pub fn initial_coarse_map(&self) -> Result<InfoMap> {
        let c = &self.config;
        InfoMap::init_coarse(self.coarse_basis.workspace().clone(), c.coarse_grid[0], c.coarse_grid[1], &c.epicenters)
    }

    pub fn fine_map(&self, coarse: &InfoMap, body: &BodyState) -> Result<InfoMap> {
        let c = &self.config;
        project_to_fine(coarse, body, &c.camera, self.fine_basis.workspace().clone(), c.fine_grid[0], c.fine_grid[1])
    }

    /// Coarse plan from `pose` against the current coarse map.
    pub fn ergodic_coarse_planner(
        &self,
        pose: &BodyState,
        coarse: &InfoMap,
        history: Option<&CoverageHistory>,
        warm_start: Option<&Trajectory>,
        seed: Option<u64>,
        trace: Option<&mut Vec<TraceRow>>,
    ) -> Result<Trajectory> {
        let c = &self.config;
        let phi = self.coarse_basis.map_coefficients(coarse)?;
        let problem = ErgodicProblem {
            basis: self.coarse_basis.clone(),
            phi,
            history: history.cloned(),
            model: Model::Unicycle,
            x0: pose.to_vec(),
            horizon: c.coarse_horizon,
            dt: c.body_dt,
            control_weight: diagonal(c.body_control_weight),
            bounds: c.body_bounds.clone(),
        };
        let settings = SolverSettings { seed, ..c.coarse_solver.clone() };
        Solver::new(settings).solve_traced(&problem, warm_start, trace)
    }

    /// Camera sweep from `angles` against a snapshot of the fine map taken at call time.
    pub fn ergodic_fine_planner(
        &self,
        angles: CameraAngles,
        fine: &InfoMap,
        history: Option<&CoverageHistory>,
        seed: Option<u64>,
        trace: Option<&mut Vec<TraceRow>>,
    ) -> Result<Trajectory> {
        let c = &self.config;
        let phi = self.fine_basis.map_coefficients(fine)?;
        let frozen = coefficient_hash(&phi);
        let problem = ErgodicProblem {
            basis: self.fine_basis.clone(),
            phi,
            history: history.cloned(),
            model: Model::SingleIntegrator,
            x0: vec![angles.yaw, angles.pitch],
            horizon: c.fine_horizon.max(2),
            dt: c.camera_dt,
            control_weight: diagonal(c.camera_control_weight),
            bounds: c.camera_bounds(),
        };
        let settings = SolverSettings { seed, ..c.fine_solver.clone() };
        let plan = Solver::new(settings).solve_traced(&problem, None, trace)?;
        assert_eq!(frozen, coefficient_hash(&problem.phi), "fine map snapshot changed during a solve");
        Ok(plan)
    }
}

fn diagonal(d: [f64; 2]) -> Vec<f64> {
    vec![d[0], 0.0, 0.0, d[1]]
}

/// SHA-256 over the little-endian coefficient bytes.
pub fn coefficient_hash(phi: &CoefficientVector) -> String {
    let mut h = Sha256::new();
    for v in &phi.0 {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Why a coarse plan was (re)computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplanReason {
    Initial,
    Detection,
    Exhausted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseReplan {
    pub step: usize,
    pub time: f64,
    pub reason: ReplanReason,
}

/// One row of the executed trajectory: body pose and camera angles at `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub yaw: f64,
    pub pitch: f64,
}

/// Normalization audit across every map mutation of a mission.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapAudit {
    pub mutations: usize,
    pub max_integral_error: f64,
    /// Smallest `min cell / floor` seen.
    pub min_floor_ratio: f64,
}

impl MapAudit {
    fn record(&mut self, map: &InfoMap) -> Result<()> {
        map.check_invariants()?;
        let ratio = map.min_density() / map.floor();
        if self.mutations == 0 || ratio < self.min_floor_ratio {
            self.min_floor_ratio = ratio;
        }
        self.mutations += 1;
        self.max_integral_error = self.max_integral_error.max((map.integral() - 1.0).abs());
        Ok(())
    }
}

/// Solver trace of one planning call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub level: String,
    pub step: usize,
    pub rows: Vec<TraceRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapSnapshot {
    pub step: usize,
    pub map: InfoMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionLog {
    pub method: Method,
    pub seed: u64,
    pub scenario_hash: String,
    /// Body state after every executed step, starting with the initial pose.
    pub body: Vec<BodyState>,
    pub body_times: Vec<f64>,
    /// Camera angles at every captured image.
    pub camera: Vec<CameraState>,
    pub camera_times: Vec<f64>,
    pub timeline: Vec<TimelineRow>,
    /// Rock detections, in capture order.
    pub detections: Vec<DetectionEvent>,
    /// Ergodic metric of the executed path against the coarse map, once per body step.
    pub ergodic: Vec<f64>,
    pub path_length: f64,
    /// Images taken before each body step.
    pub images_per_step: Vec<usize>,
    pub fine_replans_per_step: Vec<usize>,
    pub coarse_replans: Vec<CoarseReplan>,
    pub fine_plans: usize,
    pub audit: MapAudit,
    pub final_time: f64,
    #[serde(skip)]
    pub snapshots: Vec<MapSnapshot>,
    #[serde(skip)]
    pub traces: Vec<SolveTrace>,
    #[serde(skip)]
    pub final_coarse_map: Option<InfoMap>,
}

impl MissionLog {
    pub fn images(&self) -> usize {
        self.camera.len()
    }

    pub fn body_steps(&self) -> usize {
        self.body.len() - 1
    }

    pub fn final_ergodic(&self) -> Option<f64> {
        self.ergodic.last().copied()
    }
}

fn pose_of(b: &BodyState) -> BodyPose {
    BodyPose { x: b.x, y: b.y, heading: b.heading }
}

/// Independent random streams so that sensing never perturbs planning.
struct Streams {
    plan: ChaCha8Rng,
    sense: ChaCha8Rng,
    act: ChaCha8Rng,
    camera: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let mk = |k: u64| ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k));
        Self { plan: mk(1), sense: mk(2), act: mk(3), camera: mk(4) }
    }
}

struct Mission<'a> {
    planner: &'a Planner,
    method: Method,
    scenario: &'a Scenario,
    rng: Streams,
    clock: f64,
    body: BodyState,
    camera: CameraState,
    coarse: InfoMap,
    coarse_phi: CoefficientVector,
    history: CoverageHistory,
    plan: Trajectory,
    cursor: usize,
    sweeps: VecDeque<Vec<[f64; 2]>>,
    tracker: Tracker,
    log: MissionLog,
}

/// Runs one mission until the time budget is spent.
pub fn run_mission(planner: &Planner, method: Method, scenario: &Scenario, seed: u64) -> Result<MissionLog> {
    let c = &planner.config;
    scenario.validate(planner.coarse_basis.workspace())?;
    let body = BodyState::new(c.start[0], c.start[1], c.start[2]);
    let camera = CameraState::new(c.camera_start[0], c.camera_start[1]);
    let coarse = planner.initial_coarse_map()?;
    let coarse_phi = planner.coarse_basis.map_coefficients(&coarse)?;
    let mut history = CoverageHistory::new(&planner.coarse_basis);
    history.push(&planner.coarse_basis, &body.position())?;
    let mut audit = MapAudit::default();
    audit.record(&coarse)?;
    let log = MissionLog {
        method,
        seed,
        scenario_hash: scenario.ground_truth_hash(),
        body: vec![body],
        body_times: vec![0.0],
        camera: Vec::new(),
        camera_times: Vec::new(),
        timeline: vec![TimelineRow { t: 0.0, x: body.x, y: body.y, heading: body.heading, yaw: camera.yaw, pitch: camera.pitch }],
        detections: Vec::new(),
        ergodic: Vec::new(),
        path_length: 0.0,
        images_per_step: Vec::new(),
        fine_replans_per_step: Vec::new(),
        coarse_replans: Vec::new(),
        fine_plans: 0,
        audit,
        final_time: 0.0,
        snapshots: Vec::new(),
        traces: Vec::new(),
        final_coarse_map: None,
    };
    let placeholder = Trajectory {
        model: Model::Unicycle,
        dt: c.body_dt,
        states: vec![body.to_vec()],
        controls: Vec::new(),
        ergodic_cost: f64::NAN,
        control_cost: 0.0,
        diagnostics: Default::default(),
    };
    let mut m = Mission {
        planner,
        method,
        scenario,
        rng: Streams::new(seed),
        clock: 0.0,
        body,
        camera,
        coarse,
        coarse_phi,
        history,
        plan: placeholder,
        cursor: 0,
        sweeps: VecDeque::new(),
        tracker: Tracker::new(Model::Unicycle, c.body_dt).with_noise(c.actuation_noise),
        log,
    };
    m.run()?;
    let mut log = m.log;
    log.final_time = m.clock;
    log.final_coarse_map = Some(m.coarse);
    Ok(log)
}

impl Mission<'_> {
    fn cfg(&self) -> &BiLevelConfig {
        &self.planner.config
    }

    fn out_of_time(&self) -> bool {
        self.clock >= self.cfg().time_budget
    }

    fn run(&mut self) -> Result<()> {
        self.replan_coarse(ReplanReason::Initial)?;
        while !self.out_of_time() {
            if self.cursor + 1 >= self.plan.states.len() {
                self.replan_coarse(ReplanReason::Exhausted)?;
                if self.out_of_time() {
                    break;
                }
            }
            let (images, fine_replans, detected) = match self.method {
                Method::BlEto => self.planned_sweep()?,
                Method::EtoFixedCamera => self.fixed_view()?,
                Method::EtoRandomCamera => self.random_sweep()?,
            };
            self.log.images_per_step.push(images);
            self.log.fine_replans_per_step.push(fine_replans);
            if self.out_of_time() {
                break;
            }
            if detected {
                self.replan_coarse(ReplanReason::Detection)?;
                if self.out_of_time() {
                    break;
                }
            }
            self.step_body()?;
        }
        Ok(())
    }

    fn replan_coarse(&mut self, reason: ReplanReason) -> Result<()> {
        let seed = self.rng.plan.random::<u64>();
        let warm = match reason {
            ReplanReason::Initial => None,
            _ => Some(self.remaining_plan()?),
        };
        let mut rows = Vec::new();
        let trace = self.cfg().trace.then_some(&mut rows);
        let mut plan =
            self.planner.ergodic_coarse_planner(&self.body, &self.coarse, Some(&self.history), None, Some(seed), trace)?;
        if let Some(w) = warm {
            // the rest of the old plan may still beat a fresh one
            if let Some(old) = self.rescore(&w)? {
                if old.cost() < plan.cost() {
                    plan = old;
                }
            }
        }
        if self.cfg().trace {
            self.log.traces.push(SolveTrace { level: "coarse".into(), step: self.log.body_steps(), rows });
        }
        self.plan = plan;
        self.cursor = 0;
        self.log.coarse_replans.push(CoarseReplan { step: self.log.body_steps(), time: self.clock, reason });
        self.clock += self.cfg().time.coarse_plan;
        Ok(())
    }

    /// Unexecuted part of the current plan, padded to the full horizon.
    fn remaining_plan(&self) -> Result<Trajectory> {
        let mut w = self.plan.clone();
        for _ in 0..self.cursor {
            w = shift_warm_start(&w)?;
        }
        Ok(w)
    }

    /// Re-evaluates an old plan's controls from the current pose against the current map.
    fn rescore(&self, old: &Trajectory) -> Result<Option<Trajectory>> {
        let c = self.cfg();
        if old.controls.len() != c.coarse_horizon {
            return Ok(None);
        }
        let phi = self.coarse_phi.clone();
        let problem = ErgodicProblem {
            basis: self.planner.coarse_basis.clone(),
            phi,
            history: Some(self.history.clone()),
            model: Model::Unicycle,
            x0: self.body.to_vec(),
            horizon: c.coarse_horizon,
            dt: c.body_dt,
            control_weight: diagonal(c.body_control_weight),
            bounds: c.body_bounds.clone(),
        };
        let settings = SolverSettings { max_outer: 0, ..c.coarse_solver.clone() };
        Solver::new(settings).solve(&problem, Some(old)).map(Some)
    }

    fn step_body(&mut self) -> Result<()> {
        let u = self.plan.controls[self.cursor].clone();
        let (mut next, len) = self.tracker.execute_step(&self.body.to_vec(), &u, &mut self.rng.act);
        self.planner.coarse_basis.workspace().clamp(&mut next[..2]);
        self.body = BodyState::from_slice(&next);
        self.cursor += 1;
        self.clock += self.cfg().body_dt;
        self.log.path_length += len;
        self.history.push(&self.planner.coarse_basis, &self.body.position())?;
        let e = self.planner.coarse_basis.ergodic_metric(&self.history.coefficients(), &self.coarse_phi)?;
        self.log.ergodic.push(e);
        self.log.body.push(self.body);
        self.log.body_times.push(self.clock);
        self.push_timeline();
        if let Some(every) = self.cfg().snapshot_every {
            if every > 0 && self.log.body_steps() % every == 0 {
                self.log.snapshots.push(MapSnapshot { step: self.log.body_steps(), map: self.coarse.clone() });
            }
        }
        Ok(())
    }

    fn push_timeline(&mut self) {
        let (b, c) = (self.body, self.camera);
        self.log.timeline.push(TimelineRow { t: self.clock, x: b.x, y: b.y, heading: b.heading, yaw: c.yaw, pitch: c.pitch });
    }

    /// Captures and classifies one image at the current camera angles.
    /// Returns the label and, for rocks, updates the coarse map.
    fn capture(&mut self) -> Result<Label> {
        let angles = CameraAngles { yaw: self.camera.yaw, pitch: self.camera.pitch };
        let cfg = &self.planner.config;
        let cls = cfg.camera.classify_view(self.scenario, &self.body, angles, &mut self.rng.sense);
        self.clock += cfg.time.image;
        self.log.camera.push(self.camera);
        self.log.camera_times.push(self.clock);
        if !cls.label.is_rock() {
            return Ok(Label::Background);
        }
        let offset = cls.offset.unwrap_or([0.0, 0.0]);
        let point = match cfg.camera.project_detection(&self.body, angles, offset, self.planner.coarse_basis.workspace()) {
            Ok(p) => p,
            Err(Error::Localization(_)) => return Ok(Label::Background),
            Err(e) => return Err(e),
        };
        let event = DetectionEvent {
            time: self.clock,
            body_pose: pose_of(&self.body),
            camera_angles: angles,
            label: cls.label,
            world_point: Some(point),
        };
        self.coarse.register_detection(&event, &cfg.coarse_bump)?;
        self.log.audit.record(&self.coarse)?;
        self.coarse_phi = self.planner.coarse_basis.map_coefficients(&self.coarse)?;
        self.log.detections.push(event);
        Ok(cls.label)
    }

    fn move_camera(&mut self, to: CameraState) {
        self.camera = to;
        self.clock += self.cfg().camera_dt;
        self.push_timeline();
    }

    fn fine_history(&self) -> Result<CoverageHistory> {
        let basis = &self.planner.fine_basis;
        let mut h = CoverageHistory::new(basis);
        for sweep in &self.sweeps {
            for p in sweep {
                h.push(basis, p)?;
            }
        }
        Ok(h)
    }

    fn plan_sweep(&mut self, fine: &InfoMap, current: &[[f64; 2]]) -> Result<Trajectory> {
        let mut history = self.fine_history()?;
        for p in current {
            history.push(&self.planner.fine_basis, p)?;
        }
        let seed = self.rng.camera.random::<u64>();
        let mut rows = Vec::new();
        let trace = self.cfg().trace.then_some(&mut rows);
        let angles = CameraAngles { yaw: self.camera.yaw, pitch: self.camera.pitch };
        let hist = (history.count() > 0).then_some(&history);
        let plan = self.planner.ergodic_fine_planner(angles, fine, hist, Some(seed), trace)?;
        if self.cfg().trace {
            self.log.traces.push(SolveTrace { level: "fine".into(), step: self.log.body_steps(), rows });
        }
        self.log.fine_plans += 1;
        self.clock += self.cfg().time.fine_plan;
        Ok(plan)
    }

    /// Planned camera sweep; returns (images, fine replans, any rock seen).
    fn planned_sweep(&mut self) -> Result<(usize, usize, bool)> {
        let cfg = self.planner.config.clone();
        let mut fine = self.planner.fine_map(&self.coarse, &self.body)?;
        self.log.audit.record(&fine)?;
        let mut viewed: Vec<[f64; 2]> = Vec::new();
        let mut plan = self.plan_sweep(&fine, &viewed)?;
        let (mut images, mut replans, mut detected) = (0, 0, false);
        let mut k = 0;
        while k < cfg.fine_horizon && !self.out_of_time() {
            let label = self.capture()?;
            images += 1;
            let angles = CameraAngles { yaw: self.camera.yaw, pitch: self.camera.pitch };
            viewed.push([angles.yaw, angles.pitch]);
            fine.update_fine(angles, label.is_rock(), &cfg.fine_update)?;
            self.log.audit.record(&fine)?;
            if label.is_rock() {
                detected = true;
                if replans < cfg.max_fine_replans && !self.out_of_time() {
                    replans += 1;
                    plan = self.plan_sweep(&fine, &viewed)?;
                    // the new plan starts from the angles just imaged
                    self.step_camera_along(&plan, 0);
                    k = 1;
                    continue;
                }
            }
            if self.out_of_time() {
                break;
            }
            self.step_camera_along(&plan, k);
            k += 1;
        }
        self.sweeps.push_back(viewed);
        while self.sweeps.len() > cfg.fine_memory {
            self.sweeps.pop_front();
        }
        Ok((images, replans, detected))
    }

    fn step_camera_along(&mut self, plan: &Trajectory, k: usize) {
        let next = if k + 1 < plan.states.len() {
            plan.states[k + 1].clone()
        } else {
            Model::SingleIntegrator.step(&plan.states[k], &plan.controls[k], plan.dt)
        };
        let ws = self.planner.fine_basis.workspace();
        let eps = 1e-9;
        let yaw = next[0].clamp(ws.lower(0) + eps, ws.upper(0) - eps);
        let pitch = next[1].clamp(ws.lower(1), ws.upper(1));
        self.move_camera(CameraState::new(yaw, pitch));
    }

    fn fixed_view(&mut self) -> Result<(usize, usize, bool)> {
        let pitch = self.cfg().fixed_pitch;
        self.camera = CameraState::new(0.0, pitch);
        let label = self.capture()?;
        Ok((1, 0, label.is_rock()))
    }

    fn random_sweep(&mut self) -> Result<(usize, usize, bool)> {
        let cfg = self.planner.config.clone();
        let ws = self.planner.fine_basis.workspace().clone();
        let mut detected = false;
        let mut images = 0;
        for _ in 0..cfg.fine_horizon {
            if self.out_of_time() {
                break;
            }
            let yaw = self.rng.camera.random_range(ws.lower(0)..ws.upper(0));
            let pitch = self.rng.camera.random_range(ws.lower(1)..=ws.upper(1));
            self.move_camera(CameraState::new(yaw, pitch));
            if self.out_of_time() {
                break;
            }
            detected |= self.capture()?.is_rock();
            images += 1;
        }
        Ok((images, 0, detected))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Placement, Rock};

    fn quick_config() -> BiLevelConfig {
        let mut c = BiLevelConfig::default();
        c.coarse_modes = 6;
        c.coarse_horizon = 12;
        c.coarse_solver.inner_max_iter = 60;
        c.coarse_solver.max_outer = 4;
        c.fine_solver.inner_max_iter = 60;
        c.fine_solver.max_outer = 4;
        c.time_budget = 120.0;
        c
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("h-eto".parse::<Method>().is_err());
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut c = BiLevelConfig::default();
        c.coarse_horizon = 1;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = BiLevelConfig::default();
        c.fine_horizon = 0;
        assert!(c.validate().is_err());
        let mut c = BiLevelConfig::default();
        c.start = [150.0, 0.0, 0.0];
        assert!(c.validate().is_err());
        assert!(BiLevelConfig::default().validate().is_ok());
    }

    #[test]
    fn camera_bounds_match_rate() {
        let b = BiLevelConfig::default().camera_bounds();
        assert_eq!(b.upper, vec![0.6, 0.6]);
        assert!((b.max_step - 0.6 * 0.4 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_rock_mission_leaves_map_untouched() {
        let planner = Planner::new(quick_config()).unwrap();
        let empty = Scenario { seed: 0, rocks: vec![] };
        let log = run_mission(&planner, Method::BlEto, &empty, 3).unwrap();
        assert!(log.detections.is_empty());
        assert_eq!(log.final_coarse_map.as_ref().unwrap(), &planner.initial_coarse_map().unwrap());
        assert!(log.coarse_replans.iter().all(|r| r.reason != ReplanReason::Detection));
        let (last, full) = log.images_per_step.split_last().unwrap();
        assert!(full.iter().all(|n| *n == 5) && *last <= 5);

        // the body path does not depend on how the camera is used
        let fixed = run_mission(&planner, Method::EtoFixedCamera, &empty, 3).unwrap();
        let n = log.body.len();
        assert!(fixed.body.len() >= n);
        assert_eq!(&fixed.body[..n], &log.body[..]);
    }

    #[test]
    fn rock_ahead_is_found_in_first_sweep() {
        let planner = Planner::new(quick_config()).unwrap();
        let s = Scenario { seed: 0, rocks: vec![Rock { x: 53.0, y: 50.0, class: Label::Igneous }] };
        let log = run_mission(&planner, Method::BlEto, &s, 1).unwrap();
        let first = log.detections.first().expect("rock detected");
        assert!(first.time <= log.body_times[1], "first detection at {}", first.time);
        let argmax = planner
            .initial_coarse_map()
            .and_then(|mut m| {
                m.register_detection(first, &planner.config.coarse_bump)?;
                Ok(m.argmax())
            })
            .unwrap();
        assert!(((argmax[0] - 53.0).powi(2) + (argmax[1] - 50.0).powi(2)).sqrt() < 2.0);
    }

    #[test]
    fn fine_plan_avoids_the_sky() {
        let planner = Planner::new(BiLevelConfig::default()).unwrap();
        let ws = planner.fine_basis().workspace().clone();
        let fine = InfoMap::from_fn(ws, 54, 15, |p| if p[1] < 0.0 { 1.0 } else { 0.0 }).unwrap();
        let plan = planner
            .ergodic_fine_planner(CameraAngles { yaw: 0.0, pitch: -0.2 }, &fine, None, None, None)
            .unwrap();
        assert_eq!(plan.states.len(), 5);
        for s in &plan.states {
            assert!(s[1] < 0.0, "pitch {}", s[1]);
            assert!(s[0].abs() < 135f64.to_radians());
        }
    }

    #[test]
    fn fine_plan_reaches_for_a_bump() {
        let planner = Planner::new(BiLevelConfig::default()).unwrap();
        let ws = planner.fine_basis().workspace().clone();
        let (by, bp) = (40f64.to_radians(), -25f64.to_radians());
        let mut fine = InfoMap::uniform(ws, 54, 15).unwrap();
        for _ in 0..1 {
            fine.add_bump([by, bp], &BumpParams { amplitude: 2000.0, ..BumpParams::fine_default() }).unwrap();
        }
        let plan = planner
            .ergodic_fine_planner(CameraAngles { yaw: 20f64.to_radians(), pitch: -0.3 }, &fine, None, None, None)
            .unwrap();
        let closest = plan
            .states
            .iter()
            .map(|s| ((s[0] - by).powi(2) + (s[1] - bp).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(closest < 10f64.to_radians(), "closest {}", closest.to_degrees());
    }

    #[test]
    fn coarse_plans_from_different_seeds_differ() {
        let planner = Planner::new(BiLevelConfig::default()).unwrap();
        let map = planner.initial_coarse_map().unwrap();
        let pose = BodyState::new(50.0, 50.0, 0.0);
        let straight = crate::solver::initial_guess(
            &ErgodicProblem {
                basis: planner.coarse_basis().clone(),
                phi: planner.coarse_basis().map_coefficients(&map).unwrap(),
                history: None,
                model: Model::Unicycle,
                x0: pose.to_vec(),
                horizon: 48,
                dt: 1.0,
                control_weight: diagonal([1e-6, 1e-6]),
                bounds: ControlBounds::body_default(),
            },
            &SolverSettings::default(),
        )
        .unwrap();
        let plans: Vec<Trajectory> = (0..3)
            .map(|s| planner.ergodic_coarse_planner(&pose, &map, None, None, Some(s), None).unwrap())
            .collect();
        for i in 0..3 {
            assert!(plans[i].ergodic_cost < straight.ergodic_cost);
            for j in 0..i {
                assert_ne!(plans[i].states, plans[j].states);
            }
        }
    }

    #[test]
    fn epicenter_attracts_the_plan() {
        let mut cfg = BiLevelConfig::default();
        let e = Epicenter { center: [60.0, 50.0], size: [12.0, 12.0], multiplier: 200.0 };
        cfg.epicenters = vec![e.clone()];
        let planner = Planner::new(cfg).unwrap();
        let map = planner.initial_coarse_map().unwrap();
        let plan = planner.ergodic_coarse_planner(&BodyState::new(57.0, 50.0, 0.0), &map, None, None, None, None).unwrap();
        let inside = plan.points().iter().filter(|p| e.contains(**p)).count();
        assert!(inside as f64 >= 0.6 * plan.points().len() as f64, "{inside} of {}", plan.points().len());
    }

    #[test]
    fn boundary_start_stays_inside() {
        let planner = Planner::new(BiLevelConfig::default()).unwrap();
        let map = planner.initial_coarse_map().unwrap();
        let plan = planner.ergodic_coarse_planner(&BodyState::new(0.0, 30.0, std::f64::consts::PI), &map, None, None, None, None).unwrap();
        let ws = planner.coarse_basis().workspace();
        assert!(plan.points().iter().all(|p| ws.contains(p)));
    }

    #[test]
    fn missions_are_reproducible() {
        let planner = Planner::new(quick_config()).unwrap();
        let ws = planner.coarse_basis().workspace().clone();
        let s = crate::world::generate_scenario(4, 21, Placement::Uniform, &ws, &[]);
        for m in Method::ALL {
            let a = run_mission(&planner, m, &s, 9).unwrap();
            let b = run_mission(&planner, m, &s, 9).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            assert!(a.final_time <= planner.config.time_budget + 2.0 + 1e-9);
            assert!(a.body_times.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn coefficient_hash_detects_change() {
        let a = CoefficientVector(vec![1.0, 2.0]);
        let mut b = a.clone();
        assert_eq!(coefficient_hash(&a), coefficient_hash(&b));
        b.0[1] = 2.0 + 1e-15;
        assert_ne!(coefficient_hash(&a), coefficient_hash(&b));
    }
}
