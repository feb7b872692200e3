//! Simulated rock field, flat-ground pinhole camera and the detection oracle.
//!
//! Camera yaw is measured in the body frame and grows clockwise when seen from
//! above, so a view at yaw `theta` points along world bearing
//! `heading - theta`. Pitch is zero at the horizon and negative when looking
//! down. The camera sits `mount_height` meters above the body position.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::BodyState;
use crate::ergodic::Workspace;
use crate::error::{Error, Result};
use crate::infomap::{CameraAngles, Epicenter, Label};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rock {
    pub x: f64,
    pub y: f64,
    pub class: Label,
}

impl Rock {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    #[default]
    Uniform,
    /// Half of the rocks (in expectation) fall inside the epicenters.
    EpicenterBiased,
}

/// Ground truth for one trial. Serialized as `{seed, rocks: [{x, y, class}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub rocks: Vec<Rock>,
}

impl Scenario {
    pub fn validate(&self, workspace: &Workspace) -> Result<()> {
        for r in &self.rocks {
            if !r.class.is_rock() {
                return Err(Error::Config("rocks must be igneous or sedimentary".into()));
            }
            if !workspace.contains(&r.position()) {
                return Err(Error::Config(format!("rock at ({}, {}) lies outside the workspace", r.x, r.y)));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn ground_truth_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Reproducible rock field: positions i.i.d. over the workspace (or biased
/// toward `epicenters`), classes fair between igneous and sedimentary.
pub fn generate_scenario(
    seed: u64,
    rock_count: usize,
    placement: Placement,
    workspace: &Workspace,
    epicenters: &[Epicenter],
) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng| {
        [
            workspace.lower(0) + rng.random::<f64>() * workspace.lengths()[0],
            workspace.lower(1) + rng.random::<f64>() * workspace.lengths()[1],
        ]
    };
    let rocks = (0..rock_count)
        .map(|_| {
            let p = match placement {
                Placement::EpicenterBiased if !epicenters.is_empty() && rng.random_bool(0.5) => {
                    let e = &epicenters[rng.random_range(0..epicenters.len())];
                    let mut p = [
                        e.center[0] + (rng.random::<f64>() - 0.5) * e.size[0],
                        e.center[1] + (rng.random::<f64>() - 0.5) * e.size[1],
                    ];
                    workspace.clamp(&mut p);
                    p
                }
                _ => uniform(&mut rng),
            };
            let class = if rng.random_bool(0.5) { Label::Igneous } else { Label::Sedimentary };
            Rock { x: p[0], y: p[1], class }
        })
        .collect();
    Scenario { seed, rocks }
}

/// Flat-ground pinhole camera and the stand-in classifier parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub mount_height: f64,
    pub hfov: f64,
    pub vfov: f64,
    /// Ground distance from the body beyond which nothing is identified.
    pub max_range: f64,
    /// Views with `|yaw| >= yaw_limit` are blocked by the rover body.
    pub yaw_limit: f64,
    pub tp_igneous: f64,
    pub tp_sedimentary: f64,
    pub false_positive_rate: f64,
    /// Std of the image-plane offset noise, in normalized image units.
    pub offset_noise: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            mount_height: 1.0,
            hfov: 60f64.to_radians(),
            vfov: 45f64.to_radians(),
            max_range: 5.0,
            yaw_limit: 135f64.to_radians(),
            tp_igneous: 0.973,
            tp_sedimentary: 0.973,
            false_positive_rate: 0.0,
            offset_noise: 0.0,
        }
    }
}

/// Orthonormal camera frame in world coordinates.
struct Frame {
    forward: [f64; 3],
    right: [f64; 3],
    up: [f64; 3],
}

impl Frame {
    fn new(body: &BodyState, angles: CameraAngles) -> Self {
        let bearing = body.heading - angles.yaw;
        let (sb, cb) = bearing.sin_cos();
        let (sp, cp) = angles.pitch.sin_cos();
        Self {
            forward: [cp * cb, cp * sb, sp],
            right: [sb, -cb, 0.0],
            up: [-sp * cb, -sp * sb, cp],
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Result of classifying one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classification {
    pub label: Label,
    /// Normalized image-plane offset `(right, up)` of the detected object.
    pub offset: Option<[f64; 2]>,
}

impl Classification {
    fn background() -> Self {
        Self { label: Label::Background, offset: None }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let fov_ok = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        if !(fov_ok(self.hfov) && fov_ok(self.vfov)) {
            return Err(Error::Config("field of view must lie in (0, pi)".into()));
        }
        if !(self.max_range > 0.0 && self.mount_height > 0.0) {
            return Err(Error::Config("range and mount height must be positive".into()));
        }
        for p in [self.tp_igneous, self.tp_sedimentary, self.false_positive_rate] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("rates must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    fn camera_position(&self, body: &BodyState) -> [f64; 3] {
        [body.x, body.y, self.mount_height]
    }

    /// Normalized image coordinates of a world point, if it is in front of the camera.
    pub fn image_offset(&self, body: &BodyState, angles: CameraAngles, p: [f64; 3]) -> Option<[f64; 2]> {
        let f = Frame::new(body, angles);
        let c = self.camera_position(body);
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let depth = dot(d, f.forward);
        (depth > 0.0).then(|| [dot(d, f.right) / depth, dot(d, f.up) / depth])
    }

    /// Pitches whose view always holds ground inside `max_range` and reaches out to it.
    pub fn useful_pitch(&self) -> [f64; 2] {
        let edge = (self.mount_height / self.max_range).atan();
        [-(edge + 0.5 * self.vfov), 0.5 * self.vfov - edge]
    }

    pub fn in_frustum(&self, offset: [f64; 2]) -> bool {
        offset[0].abs() <= (0.5 * self.hfov).tan() && offset[1].abs() <= (0.5 * self.vfov).tan()
    }

    /// Ground point seen through `offset`, or `None` for rays at or above the horizon.
    pub fn ground_hit(&self, body: &BodyState, angles: CameraAngles, offset: [f64; 2]) -> Option<[f64; 2]> {
        let f = Frame::new(body, angles);
        let dir: Vec<f64> = (0..3).map(|i| f.forward[i] + offset[0] * f.right[i] + offset[1] * f.up[i]).collect();
        if dir[2] >= 0.0 {
            return None;
        }
        let t = self.mount_height / -dir[2];
        Some([body.x + t * dir[0], body.y + t * dir[1]])
    }

    fn tp_rate(&self, class: Label) -> f64 {
        match class {
            Label::Igneous => self.tp_igneous,
            Label::Sedimentary => self.tp_sedimentary,
            Label::Background => 0.0,
        }
    }

    /// Geometric stand-in for the image classifier.
    ///
    /// The nearest rock within `max_range` ground distance whose center falls
    /// inside the frustum is reported with its class-specific true-positive
    /// rate. Exactly one uniform draw is consumed per call (two when offset
    /// noise is enabled and a rock is reported).
    pub fn classify_view<R: Rng + ?Sized>(
        &self,
        scenario: &Scenario,
        body: &BodyState,
        angles: CameraAngles,
        rng: &mut R,
    ) -> Classification {
        let draw: f64 = rng.random();
        if angles.yaw.abs() >= self.yaw_limit {
            return Classification::background();
        }
        let mut best: Option<(f64, &Rock, [f64; 2])> = None;
        for rock in &scenario.rocks {
            let ground = ((rock.x - body.x).powi(2) + (rock.y - body.y).powi(2)).sqrt();
            if ground > self.max_range {
                continue;
            }
            let bearing = body.heading - (rock.y - body.y).atan2(rock.x - body.x);
            if wrap_angle(bearing).abs() >= self.yaw_limit {
                continue;
            }
            let Some(off) = self.image_offset(body, angles, [rock.x, rock.y, 0.0]) else { continue };
            if !self.in_frustum(off) {
                continue;
            }
            if best.map_or(true, |(d, _, _)| ground < d) {
                best = Some((ground, rock, off));
            }
        }
        match best {
            Some((_, rock, mut off)) if draw < self.tp_rate(rock.class) => {
                if self.offset_noise > 0.0 {
                    let n = Normal::new(0.0, self.offset_noise).expect("finite std");
                    off[0] += n.sample(rng);
                    off[1] += n.sample(rng);
                }
                Classification { label: rock.class, offset: Some(off) }
            }
            None if draw < self.false_positive_rate => {
                // spurious hit at the image center
                let label = if draw < 0.5 * self.false_positive_rate { Label::Igneous } else { Label::Sedimentary };
                Classification { label, offset: Some([0.0, 0.0]) }
            }
            _ => Classification::background(),
        }
    }

    /// Inverse map from a detection to the ground plane, clamped to `workspace`.
    pub fn project_detection(
        &self,
        body: &BodyState,
        angles: CameraAngles,
        offset: [f64; 2],
        workspace: &Workspace,
    ) -> Result<[f64; 2]> {
        let mut p = self
            .ground_hit(body, angles, offset)
            .ok_or_else(|| Error::Localization("detection ray does not meet the ground".into()))?;
        workspace.clamp(&mut p);
        Ok(p)
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let r = a.rem_euclid(t);
    if r > std::f64::consts::PI { r - t } else { r }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> Workspace {
        Workspace::planar(100.0, 100.0).unwrap()
    }

    fn one_rock(x: f64, y: f64) -> Scenario {
        Scenario { seed: 0, rocks: vec![Rock { x, y, class: Label::Sedimentary }] }
    }

    fn sure_camera() -> CameraModel {
        CameraModel { tp_igneous: 1.0, tp_sedimentary: 1.0, ..CameraModel::default() }
    }

    fn deg(a: f64) -> f64 {
        a.to_radians()
    }

    #[test]
    fn same_seed_same_field() {
        let a = generate_scenario(7, 21, Placement::Uniform, &field(), &[]);
        let b = generate_scenario(7, 21, Placement::Uniform, &field(), &[]);
        assert_eq!(a, b);
        assert_eq!(a.ground_truth_hash(), b.ground_truth_hash());
        assert_ne!(a, generate_scenario(8, 21, Placement::Uniform, &field(), &[]));
        assert!(generate_scenario(7, 0, Placement::Uniform, &field(), &[]).rocks.is_empty());
    }

    #[test]
    fn uniform_quadrants() {
        let s = generate_scenario(11, 100_000, Placement::Uniform, &field(), &[]);
        let mut counts = [0usize; 4];
        for r in &s.rocks {
            counts[(r.x >= 50.0) as usize + 2 * (r.y >= 50.0) as usize] += 1;
        }
        let n = s.rocks.len() as f64;
        let sigma = (n * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 0.25 * n).abs() < 3.0 * sigma, "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 0.25 * n).powi(2) / (0.25 * n)).sum();
        // 3 degrees of freedom, 99.9th percentile
        assert!(chi2 < 16.27);
        let igneous = s.rocks.iter().filter(|r| r.class == Label::Igneous).count() as f64;
        assert!((igneous / n - 0.5).abs() < 0.01);
    }

    #[test]
    fn biased_placement_favors_epicenters() {
        let e = Epicenter { center: [20.0, 60.0], size: [15.0, 20.0], multiplier: 5.0 };
        let s = generate_scenario(3, 2000, Placement::EpicenterBiased, &field(), &[e.clone()]);
        let inside = s.rocks.iter().filter(|r| e.contains(r.position())).count() as f64 / 2000.0;
        assert!(inside > 0.45);
        s.validate(&field()).unwrap();
    }

    #[test]
    fn rock_four_meters_ahead_is_seen() {
        let cam = sure_camera();
        let body = BodyState::new(50.0, 50.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = cam.classify_view(&one_rock(54.0, 50.0), &body, CameraAngles { yaw: 0.0, pitch: deg(-14.0) }, &mut rng);
        assert_eq!(c.label, Label::Sedimentary);
        let off = c.offset.unwrap();
        assert!(off[0].abs() < 1e-12);
        // depression atan(1/4) = 14.036 deg, just below the optical axis
        assert!((off[1].atan() - (deg(14.0) - (0.25f64).atan())).abs() < 1e-9);
    }

    #[test]
    fn beyond_range_is_background() {
        let cam = sure_camera();
        let body = BodyState::new(50.0, 50.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for pitch in [-30.0, -14.0, -9.46, -5.0, 0.0] {
            let c = cam.classify_view(&one_rock(56.0, 50.0), &body, CameraAngles { yaw: 0.0, pitch: deg(pitch) }, &mut rng);
            assert_eq!(c.label, Label::Background);
        }
    }

    #[test]
    fn occluded_bearing_is_unreachable() {
        let cam = sure_camera();
        let body = BodyState::new(50.0, 50.0, 0.0);
        // rock at 140 deg clockwise from the heading, 3 m away
        let b = -deg(140.0);
        let s = one_rock(50.0 + 3.0 * b.cos(), 50.0 + 3.0 * b.sin());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for yaw in [130.0, 134.9] {
            for pitch in [-10.0, -18.4, -30.0] {
                let c = cam.classify_view(&s, &body, CameraAngles { yaw: deg(yaw), pitch: deg(pitch) }, &mut rng);
                assert_eq!(c.label, Label::Background, "yaw {yaw} pitch {pitch}");
            }
        }
        let blocked = cam.classify_view(&s, &body, CameraAngles { yaw: deg(140.0), pitch: deg(-18.4) }, &mut rng);
        assert_eq!(blocked.label, Label::Background);
    }

    #[test]
    fn project_at_forty_five_degrees() {
        let cam = CameraModel::default();
        let body = BodyState::new(10.0, 10.0, 0.0);
        let p = cam.project_detection(&body, CameraAngles { yaw: 0.0, pitch: deg(-45.0) }, [0.0, 0.0], &field()).unwrap();
        assert!((p[0] - 11.0).abs() < 1e-12 && (p[1] - 10.0).abs() < 1e-12);
        let q = cam
            .project_detection(&body, CameraAngles { yaw: 0.0, pitch: deg(-14.036) }, [0.0, 0.0], &field())
            .unwrap();
        let expected = 1.0 / deg(14.036).tan();
        assert!((q[0] - 10.0 - expected).abs() < 1e-6 && (expected - 4.0).abs() < 1e-3);
    }

    #[test]
    fn yaw_turns_clockwise() {
        let cam = CameraModel::default();
        let body = BodyState::new(50.0, 50.0, 0.0);
        let p = cam.ground_hit(&body, CameraAngles { yaw: deg(90.0), pitch: deg(-45.0) }, [0.0, 0.0]).unwrap();
        assert!((p[0] - 50.0).abs() < 1e-12 && (p[1] - 49.0).abs() < 1e-12);
    }

    #[test]
    fn upward_ray_cannot_localize() {
        let cam = CameraModel::default();
        let body = BodyState::new(50.0, 50.0, 0.0);
        for pitch in [0.0, 10.0] {
            let r = cam.project_detection(&body, CameraAngles { yaw: 0.0, pitch: deg(pitch) }, [0.0, 0.0], &field());
            assert!(matches!(r, Err(Error::Localization(_))));
        }
    }

    #[test]
    fn round_trip_localization() {
        let cam = sure_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scenario = generate_scenario(5, 200, Placement::Uniform, &field(), &[]);
        let mut hits = 0;
        for i in 0..2000 {
            let body = BodyState::new(10.0 + (i % 80) as f64, 10.0 + (i / 25) as f64, 0.37 * i as f64);
            let angles = CameraAngles { yaw: deg(-130.0 + (i % 27) as f64 * 10.0), pitch: deg(-5.0 - (i % 7) as f64 * 8.0) };
            let c = cam.classify_view(&scenario, &body, angles, &mut rng);
            if let Some(off) = c.offset {
                hits += 1;
                let p = cam.project_detection(&body, angles, off, &field()).unwrap();
                let nearest = scenario
                    .rocks
                    .iter()
                    .map(|r| ((r.x - p[0]).powi(2) + (r.y - p[1]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!(nearest < 1e-9);
                assert!(((p[0] - body.x).powi(2) + (p[1] - body.y).powi(2)).sqrt() <= 5.0 + 1e-9);
            }
        }
        assert!(hits > 10);
    }

    #[test]
    fn scenario_json_shape() {
        let s = one_rock(1.5, 2.5);
        let json = s.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["rocks"][0]["class"], "sedimentary");
        assert_eq!(v["seed"], 0);
        assert_eq!(Scenario::from_json(&json).unwrap(), s);
    }
}

