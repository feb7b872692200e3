//! Experiment harness: trials, baselines, scoring and method comparison.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infomap::InfoMap;
use crate::planner::{run_mission, BiLevelConfig, Method, MissionLog, Planner};
use crate::solver::write_trace_csv;
use crate::world::{generate_scenario, Placement, Scenario};

/// A rock counts as found when a detection lands within this distance.
pub const FOUND_RADIUS: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub rock_count: usize,
    pub placement: Placement,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { rock_count: 21, placement: Placement::Uniform }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub mission: BiLevelConfig,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            mission: BiLevelConfig::default(),
            method: Method::BlEto,
            seeds: (0..5).collect(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON; missing fields take their defaults.
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.mission.validate()
    }

    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        let ws = self.mission.field_workspace()?;
        Ok(generate_scenario(seed, self.scenario.rock_count, self.scenario.placement, &ws, &self.mission.epicenters))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub method: Method,
    pub seed: u64,
    pub fraction_found: f64,
    pub rocks_found: usize,
    pub rock_count: usize,
    pub path_length: f64,
    pub detection_count: usize,
    pub images: usize,
    pub body_steps: usize,
    pub final_ergodic: Option<f64>,
    pub mission_time: f64,
    pub scenario_hash: String,
    /// Kept out of `metrics.json` so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

/// Scores a log against the ground truth it was run on.
pub fn score(log: &MissionLog, scenario: &Scenario) -> Result<TrialMetrics> {
    let hash = scenario.ground_truth_hash();
    if hash != log.scenario_hash {
        return Err(Error::ScenarioMismatch(format!("log was recorded on {} but scored against {hash}", log.scenario_hash)));
    }
    let points: Vec<[f64; 2]> = log.detections.iter().filter_map(|d| d.world_point).collect();
    let found = scenario
        .rocks
        .iter()
        .filter(|r| points.iter().any(|p| ((p[0] - r.x).powi(2) + (p[1] - r.y).powi(2)).sqrt() <= FOUND_RADIUS))
        .count();
    let total = scenario.rocks.len();
    Ok(TrialMetrics {
        method: log.method,
        seed: log.seed,
        fraction_found: if total == 0 { 0.0 } else { found as f64 / total as f64 },
        rocks_found: found,
        rock_count: total,
        path_length: log.path_length,
        detection_count: log.detections.len(),
        images: log.images(),
        body_steps: log.body_steps(),
        final_ergodic: log.final_ergodic(),
        mission_time: log.final_time,
        scenario_hash: hash,
        wall_clock_s: 0.0,
    })
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub scenario: Scenario,
    pub log: MissionLog,
    pub metrics: TrialMetrics,
}

pub fn run_trial(config: &ExperimentConfig, method: Method, seed: u64) -> Result<TrialOutcome> {
    let planner = Planner::new(config.mission.clone())?;
    run_trial_with(&planner, config, method, seed)
}

fn run_trial_with(planner: &Planner, config: &ExperimentConfig, method: Method, seed: u64) -> Result<TrialOutcome> {
    let scenario = config.scenario(seed)?;
    let start = Instant::now();
    let log = run_mission(planner, method, &scenario, seed)?;
    let mut metrics = score(&log, &scenario)?;
    metrics.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(TrialOutcome { scenario, log, metrics })
}

fn require(config: &ExperimentConfig, method: Method) -> Result<()> {
    if config.method != method {
        return Err(Error::Config(format!("config method is {}, expected {method}", config.method)));
    }
    Ok(())
}

/// Coarse ergodic planning with the camera locked forward.
pub fn run_baseline_fixed(config: &ExperimentConfig, seed: u64) -> Result<TrialMetrics> {
    require(config, Method::EtoFixedCamera)?;
    Ok(run_trial(config, Method::EtoFixedCamera, seed)?.metrics)
}

/// Coarse ergodic planning with uniformly random camera poses.
pub fn run_baseline_random(config: &ExperimentConfig, seed: u64) -> Result<TrialMetrics> {
    require(config, Method::EtoRandomCamera)?;
    Ok(run_trial(config, Method::EtoRandomCamera, seed)?.metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub mean_fraction: f64,
    /// Sample standard deviation; zero for a single trial.
    pub std_fraction: f64,
    pub mean_path_length: f64,
    pub mean_detections: f64,
}

impl MethodSummary {
    pub fn from_trials(method: Method, trials: &[&TrialMetrics]) -> Self {
        let n = trials.len();
        let mean = |f: &dyn Fn(&TrialMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                trials.iter().map(|t| f(t)).sum::<f64>() / n as f64
            }
        };
        let mean_fraction = mean(&|t| t.fraction_found);
        let std_fraction = if n > 1 {
            (trials.iter().map(|t| (t.fraction_found - mean_fraction).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            method,
            trials: n,
            mean_fraction,
            std_fraction,
            mean_path_length: mean(&|t| t.path_length),
            mean_detections: mean(&|t| t.detection_count as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub seeds: Vec<u64>,
    pub summaries: Vec<MethodSummary>,
    pub trials: Vec<TrialMetrics>,
}

impl ComparisonTable {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>6} {:>12} {:>10} {:>14} {:>12}", "method", "trials", "found mean", "found std", "path mean (m)", "detections");
        for m in &self.summaries {
            let _ = writeln!(
                s,
                "{:<20} {:>6} {:>11.2}% {:>9.2}% {:>14.1} {:>12.1}",
                m.method.name(),
                m.trials,
                100.0 * m.mean_fraction,
                100.0 * m.std_fraction,
                m.mean_path_length,
                m.mean_detections
            );
        }
        s
    }
}

/// Runs every method on the same scenario seeds.
///
/// `on_trial` sees each finished trial, e.g. to write its files.
pub fn compare(
    config: &ExperimentConfig,
    seeds: &[u64],
    mut on_trial: impl FnMut(&TrialOutcome) -> Result<()>,
) -> Result<ComparisonTable> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let planner = Planner::new(config.mission.clone())?;
    let mut trials = Vec::new();
    for &seed in seeds {
        let mut hash: Option<String> = None;
        for method in Method::ALL {
            let outcome = run_trial_with(&planner, config, method, seed)?;
            match &hash {
                Some(h) if *h != outcome.metrics.scenario_hash => {
                    return Err(Error::ScenarioMismatch(format!("seed {seed}: methods saw different scenarios")));
                }
                Some(_) => {}
                None => hash = Some(outcome.metrics.scenario_hash.clone()),
            }
            on_trial(&outcome)?;
            trials.push(outcome.metrics);
        }
    }
    let summaries = Method::ALL
        .into_iter()
        .map(|m| {
            let ts: Vec<&TrialMetrics> = trials.iter().filter(|t| t.method == m).collect();
            MethodSummary::from_trials(m, &ts)
        })
        .collect();
    Ok(ComparisonTable { seeds: seeds.to_vec(), summaries, trials })
}

/// Directory for one trial below `root`.
pub fn trial_dir(root: &Path, method: Method, seed: u64) -> PathBuf {
    root.join(method.name()).join(format!("seed_{seed:04}"))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// `t,x,y,heading,yaw,pitch` rows.
pub fn write_trajectory_csv(log: &MissionLog, out: impl Write) -> Result<()> {
    let mut out = out;
    writeln!(out, "t,x,y,heading,yaw,pitch")?;
    for r in &log.timeline {
        writeln!(out, "{},{},{},{},{},{}", r.t, r.x, r.y, r.heading, r.yaw, r.pitch)?;
    }
    Ok(())
}

pub fn write_detections_jsonl(log: &MissionLog, mut out: impl Write) -> Result<()> {
    for d in &log.detections {
        serde_json::to_writer(&mut out, d)?;
        writeln!(out)?;
    }
    Ok(())
}

/// Writes every per-trial artifact into `dir`.
pub fn write_trial(dir: &Path, outcome: &TrialOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trajectory_csv(&outcome.log, create(&dir.join("trajectory.csv"))?)?;
    write_detections_jsonl(&outcome.log, create(&dir.join("detections.jsonl"))?)?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&outcome.metrics)? + "\n")?;
    fs::write(dir.join("runtime.json"), format!("{{\n  \"wall_clock_s\": {}\n}}\n", outcome.metrics.wall_clock_s))?;
    fs::write(dir.join("scenario.json"), outcome.scenario.to_json()? + "\n")?;
    for snap in &outcome.log.snapshots {
        snap.map.write_pgm(create(&dir.join(format!("map_{:04}.pgm", snap.step)))?)?;
    }
    if let Some(map) = &outcome.log.final_coarse_map {
        if !outcome.log.snapshots.is_empty() {
            map.write_pgm(create(&dir.join("map_final.pgm"))?)?;
        }
    }
    if !outcome.log.traces.is_empty() {
        let mut out = create(&dir.join("trace.csv"))?;
        for (i, t) in outcome.log.traces.iter().enumerate() {
            writeln!(out, "# solve {i} level {} step {}", t.level, t.step)?;
            write_trace_csv(&t.rows, &mut out)?;
        }
    }
    Ok(())
}

pub fn write_table(dir: &Path, table: &ComparisonTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("table.json"), serde_json::to_string_pretty(table)? + "\n")?;
    fs::write(dir.join("table.txt"), table.to_text())?;
    Ok(())
}

/// Summary of a trial directory written by [`write_trial`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inspection {
    pub timeline_rows: usize,
    pub detections: usize,
    pub rocks: usize,
    pub rocks_found: usize,
    pub path_length: f64,
    pub map_peak: [f64; 2],
}

/// Reloads a trial directory and rebuilds its final coarse map from the detections.
pub fn inspect(dir: &Path, config: &BiLevelConfig) -> Result<(Inspection, InfoMap)> {
    let scenario = Scenario::from_json(&fs::read_to_string(dir.join("scenario.json"))?)?;
    let mut events = Vec::new();
    for line in fs::read_to_string(dir.join("detections.jsonl"))?.lines().filter(|l| !l.trim().is_empty()) {
        events.push(serde_json::from_str::<crate::infomap::DetectionEvent>(line)?);
    }
    let traj = fs::read_to_string(dir.join("trajectory.csv"))?;
    let mut rows: Vec<[f64; 3]> = Vec::new();
    for line in traj.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| Error::InvalidArgument(format!("bad trajectory row `{line}`: {e}")))?;
        if v.len() != 6 {
            return Err(Error::InvalidArgument(format!("bad trajectory row `{line}`")));
        }
        rows.push([v[0], v[1], v[2]]);
    }
    let path_length = rows.windows(2).map(|w| ((w[1][1] - w[0][1]).powi(2) + (w[1][2] - w[0][2]).powi(2)).sqrt()).sum();
    let planner = Planner::new(config.clone())?;
    let mut map = planner.initial_coarse_map()?;
    for e in &events {
        map.register_detection(e, &config.coarse_bump)?;
    }
    let points: Vec<[f64; 2]> = events.iter().filter_map(|e| e.world_point).collect();
    let rocks_found = scenario
        .rocks
        .iter()
        .filter(|r| points.iter().any(|p| ((p[0] - r.x).powi(2) + (p[1] - r.y).powi(2)).sqrt() <= FOUND_RADIUS))
        .count();
    let summary = Inspection {
        timeline_rows: rows.len(),
        detections: events.len(),
        rocks: scenario.rocks.len(),
        rocks_found,
        path_length,
        map_peak: map.argmax(),
    };
    Ok((summary, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infomap::{BodyPose, CameraAngles, DetectionEvent, Label};
    use crate::world::Rock;

    fn log_with(points: &[[f64; 2]], scenario: &Scenario) -> MissionLog {
        let planner = Planner::new(quick()).unwrap();
        let mut log = run_mission(&planner, Method::EtoFixedCamera, &Scenario { seed: 0, rocks: vec![] }, 0).unwrap();
        log.scenario_hash = scenario.ground_truth_hash();
        log.detections = points
            .iter()
            .map(|p| DetectionEvent {
                time: 0.0,
                body_pose: BodyPose { x: 50.0, y: 50.0, heading: 0.0 },
                camera_angles: CameraAngles { yaw: 0.0, pitch: -0.3 },
                label: Label::Igneous,
                world_point: Some(*p),
            })
            .collect();
        log
    }

    fn quick() -> BiLevelConfig {
        let mut c = BiLevelConfig::default();
        c.coarse_modes = 5;
        c.coarse_horizon = 10;
        c.coarse_solver.inner_max_iter = 40;
        c.coarse_solver.max_outer = 3;
        c.fine_solver.inner_max_iter = 40;
        c.fine_solver.max_outer = 3;
        c.time_budget = 40.0;
        c
    }

    fn two_rocks() -> Scenario {
        Scenario {
            seed: 7,
            rocks: vec![Rock { x: 20.0, y: 20.0, class: Label::Igneous }, Rock { x: 80.0, y: 80.0, class: Label::Sedimentary }],
        }
    }

    #[test]
    fn no_detections_score_zero() {
        let s = two_rocks();
        let m = score(&log_with(&[], &s), &s).unwrap();
        assert_eq!(m.fraction_found, 0.0);
    }

    #[test]
    fn exact_hit_counts() {
        let s = two_rocks();
        let m = score(&log_with(&[[20.0, 20.0]], &s), &s).unwrap();
        assert_eq!(m.rocks_found, 1);
        assert_eq!(m.fraction_found, 0.5);
    }

    #[test]
    fn found_radius_is_five_meters() {
        let s = two_rocks();
        let m = score(&log_with(&[[24.9, 20.0], [80.0, 85.1]], &s), &s).unwrap();
        assert_eq!(m.rocks_found, 1);
    }

    #[test]
    fn extending_a_log_never_lowers_the_score() {
        let s = two_rocks();
        let mut pts = vec![[30.0, 30.0]];
        let mut last = 0.0;
        for p in [[20.0, 21.0], [50.0, 50.0], [79.0, 79.0], [0.0, 0.0]] {
            pts.push(p);
            let f = score(&log_with(&pts, &s), &s).unwrap().fraction_found;
            assert!(f >= last);
            last = f;
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn mismatched_ground_truth_is_rejected() {
        let s = two_rocks();
        let log = log_with(&[], &s);
        let other = Scenario { seed: 8, ..s };
        assert!(matches!(score(&log, &other), Err(Error::ScenarioMismatch(_))));
    }

    #[test]
    fn config_defaults_and_errors() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c.seeds.len(), 5);
        assert_eq!(c.mission.time_budget, 5400.0);
        assert_eq!(c.scenario.rock_count, 21);
        assert!(matches!(ExperimentConfig::from_json("{\"seeds\": []}"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json("{\"method\": \"h-eto\"}"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_json("not json"), Err(Error::Config(_))));
    }

    #[test]
    fn baselines_check_method() {
        let cfg = ExperimentConfig { mission: quick(), ..Default::default() };
        assert!(matches!(run_baseline_fixed(&cfg, 0), Err(Error::Config(_))));
        let cfg = ExperimentConfig { method: Method::EtoFixedCamera, mission: quick(), ..Default::default() };
        let a = run_baseline_fixed(&cfg, 0).unwrap();
        let b = run_baseline_fixed(&cfg, 0).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn zero_rocks_compare() {
        let mut cfg = ExperimentConfig { mission: quick(), ..Default::default() };
        cfg.scenario.rock_count = 0;
        let table = compare(&cfg, &[3], |_| Ok(())).unwrap();
        assert_eq!(table.trials.len(), 3);
        assert!(table.summaries.iter().all(|s| s.mean_fraction == 0.0 && s.std_fraction == 0.0));
        let fixed = table.trials.iter().find(|t| t.method == Method::EtoFixedCamera).unwrap();
        assert_eq!(fixed.images, fixed.body_steps + 1);
        assert!(table.to_text().contains("eto-random-camera"));
    }

    #[test]
    fn summary_uses_sample_std() {
        let base = TrialMetrics {
            method: Method::BlEto,
            seed: 0,
            fraction_found: 0.2,
            rocks_found: 0,
            rock_count: 0,
            path_length: 10.0,
            detection_count: 0,
            images: 0,
            body_steps: 0,
            final_ergodic: None,
            mission_time: 0.0,
            scenario_hash: String::new(),
            wall_clock_s: 0.0,
        };
        let other = TrialMetrics { fraction_found: 0.4, path_length: 30.0, ..base.clone() };
        let s = MethodSummary::from_trials(Method::BlEto, &[&base, &other]);
        assert!((s.mean_fraction - 0.3).abs() < 1e-15);
        assert!((s.std_fraction - (0.02f64).sqrt()).abs() < 1e-12);
        assert_eq!(s.mean_path_length, 20.0);
    }

    #[test]
    fn trial_files_round_trip() {
        let mut cfg = ExperimentConfig { mission: quick(), ..Default::default() };
        cfg.mission.snapshot_every = Some(5);
        cfg.mission.trace = true;
        let out = run_trial(&cfg, Method::BlEto, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_trial(dir.path(), &out).unwrap();
        for f in ["trajectory.csv", "detections.jsonl", "metrics.json", "runtime.json", "scenario.json", "trace.csv", "map_0005.pgm"] {
            assert!(dir.path().join(f).exists(), "{f} missing");
        }
        let metrics = fs::read_to_string(dir.path().join("metrics.json")).unwrap();
        assert!(!metrics.contains("wall_clock"));
        let (ins, _) = inspect(dir.path(), &cfg.mission).unwrap();
        assert_eq!(ins.detections, out.log.detections.len());
        assert_eq!(ins.rocks_found, out.metrics.rocks_found);
        assert!((ins.path_length - out.log.path_length).abs() < 1e-6);
    }
}
