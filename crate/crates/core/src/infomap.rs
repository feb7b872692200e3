//! Normalized occupancy-grid information maps.
//!
//! A map stores a strictly positive probability density per cell. Every
//! mutation ends with [`InfoMap::normalize`], which restores unit mass while
//! keeping each cell at or above the floor `1e-6 x uniform level`.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::BodyState;
use crate::ergodic::Workspace;
use crate::error::{invalid, Error, Result};
use crate::world::CameraModel;

/// Floor relative to the uniform density level.
pub const FLOOR_RATIO: f64 = 1e-6;

/// Bumps are truncated at this many standard deviations.
const BUMP_TRUNCATION: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Igneous,
    Sedimentary,
    Background,
}

impl Label {
    pub fn is_rock(self) -> bool {
        self != Label::Background
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraAngles {
    pub yaw: f64,
    pub pitch: f64,
}

/// One classified image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub time: f64,
    pub body_pose: BodyPose,
    pub camera_angles: CameraAngles,
    pub label: Label,
    pub world_point: Option<[f64; 2]>,
}

impl DetectionEvent {
    /// `world_point` is present exactly when the label is a rock class.
    pub fn is_consistent(&self) -> bool {
        self.label.is_rock() == self.world_point.is_some()
    }
}

/// Axis-aligned rectangle of raised prior information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Epicenter {
    pub center: [f64; 2],
    pub size: [f64; 2],
    pub multiplier: f64,
}

impl Epicenter {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| {
            let lo = self.center[i] - 0.5 * self.size[i];
            lo <= p[i] && p[i] < lo + self.size[i]
        })
    }

    /// Rectangle grown by `margin` on every side.
    pub fn grown(&self, margin: f64) -> Epicenter {
        Epicenter {
            center: self.center,
            size: [self.size[0] + 2.0 * margin, self.size[1] + 2.0 * margin],
            multiplier: self.multiplier,
        }
    }

    pub fn area(&self) -> f64 {
        self.size[0] * self.size[1]
    }
}

/// Additive Gaussian bump with clipping for repeat detections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpParams {
    /// Peak height in multiples of the uniform density level.
    pub amplitude: f64,
    pub sigma: f64,
    /// Prior detections closer than this count as the same location.
    pub clip_radius: f64,
    pub clip_factor: f64,
}

impl BumpParams {
    pub fn coarse_default() -> Self {
        Self { amplitude: 50.0, sigma: 1.5, clip_radius: 2.0, clip_factor: 0.1 }
    }

    pub fn fine_default() -> Self {
        Self { amplitude: 20.0, sigma: 5f64.to_radians(), clip_radius: 10f64.to_radians(), clip_factor: 0.1 }
    }
}

/// Map-space location of a past bump and the mass it added before normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpRecord {
    pub point: [f64; 2],
    pub added_mass: f64,
    pub clipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfoMap {
    workspace: Workspace,
    nx: usize,
    ny: usize,
    /// Row-major, `iy * nx + ix`.
    density: Vec<f64>,
    floor: f64,
    log: Vec<BumpRecord>,
}

impl InfoMap {
    pub fn uniform(workspace: Workspace, nx: usize, ny: usize) -> Result<Self> {
        Self::from_fn(workspace, nx, ny, |_| 1.0)
    }

    /// Samples `f` at cell centers, then applies floor and normalization.
    pub fn from_fn(workspace: Workspace, nx: usize, ny: usize, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        if workspace.dims() != 2 {
            return Err(invalid("information maps are two-dimensional"));
        }
        if nx == 0 || ny == 0 {
            return Err(invalid("map resolution must be positive"));
        }
        let floor = FLOOR_RATIO / workspace.volume();
        let mut map = Self { workspace, nx, ny, density: vec![0.0; nx * ny], floor, log: Vec::new() };
        for iy in 0..ny {
            for ix in 0..nx {
                let v = f(map.cell_center(ix, iy));
                if !(v.is_finite() && v >= 0.0) {
                    return Err(invalid(format!("density must be finite and nonnegative, got {v}")));
                }
                map.density[iy * nx + ix] = v;
            }
        }
        map.normalize()?;
        Ok(map)
    }

    /// Uniform map scaled by each epicenter's multiplier inside its rectangle.
    pub fn init_coarse(workspace: Workspace, nx: usize, ny: usize, epicenters: &[Epicenter]) -> Result<Self> {
        for e in epicenters {
            if !(e.multiplier >= 1.0) {
                return Err(invalid(format!("epicenter multiplier must be >= 1, got {}", e.multiplier)));
            }
            if e.size.iter().any(|s| !(*s > 0.0)) {
                return Err(invalid("epicenter size must be positive"));
            }
            let lo = [e.center[0] - 0.5 * e.size[0], e.center[1] - 0.5 * e.size[1]];
            let hi = [lo[0] + e.size[0], lo[1] + e.size[1]];
            if !(workspace.contains(&lo) && workspace.contains(&hi)) {
                return Err(invalid(format!("epicenter {e:?} extends outside the workspace")));
            }
        }
        Self::from_fn(workspace, nx, ny, |p| {
            epicenters.iter().filter(|e| e.contains(p)).map(|e| e.multiplier).product()
        })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub(crate) fn resolution_along(&self, axis: usize) -> usize {
        if axis == 0 {
            self.nx
        } else {
            self.ny
        }
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn uniform_level(&self) -> f64 {
        1.0 / self.workspace.volume()
    }

    pub fn detection_log(&self) -> &[BumpRecord] {
        &self.log
    }

    pub fn cell_size(&self) -> [f64; 2] {
        let l = self.workspace.lengths();
        [l[0] / self.nx as f64, l[1] / self.ny as f64]
    }

    pub fn cell_area(&self) -> f64 {
        let [dx, dy] = self.cell_size();
        dx * dy
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let [dx, dy] = self.cell_size();
        [
            self.workspace.lower(0) + (ix as f64 + 0.5) * dx,
            self.workspace.lower(1) + (iy as f64 + 0.5) * dy,
        ]
    }

    /// Cell containing `p`; points on the upper edge belong to the last cell.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        if !self.workspace.contains(&p) {
            return None;
        }
        let [dx, dy] = self.cell_size();
        let ix = (((p[0] - self.workspace.lower(0)) / dx) as usize).min(self.nx - 1);
        let iy = (((p[1] - self.workspace.lower(1)) / dy) as usize).min(self.ny - 1);
        Some((ix, iy))
    }

    pub fn value_at(&self, p: [f64; 2]) -> Option<f64> {
        self.cell_of(p).map(|(ix, iy)| self.density[iy * self.nx + ix])
    }

    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_area()
    }

    pub fn min_density(&self) -> f64 {
        self.density.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Center of the highest-density cell (first one on ties).
    pub fn argmax(&self) -> [f64; 2] {
        let (mut best, mut idx) = (f64::NEG_INFINITY, 0);
        for (i, &v) in self.density.iter().enumerate() {
            if v > best {
                best = v;
                idx = i;
            }
        }
        self.cell_center(idx % self.nx, idx / self.nx)
    }

    /// Mass contained in cells whose centers satisfy `inside`.
    pub fn mass_where(&self, inside: impl Fn([f64; 2]) -> bool) -> f64 {
        let mut m = 0.0;
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                if inside(self.cell_center(ix, iy)) {
                    m += self.density[iy * self.nx + ix];
                }
            }
        }
        m * self.cell_area()
    }

    /// Rescales to unit mass while holding every cell at or above the floor.
    ///
    /// Cells pushed below the floor are pinned there and the remaining mass is
    /// redistributed proportionally over the free cells.
    fn normalize(&mut self) -> Result<()> {
        let area = self.cell_area();
        let floor = self.floor;
        let mut pinned = vec![false; self.density.len()];
        for (d, p) in self.density.iter_mut().zip(pinned.iter_mut()) {
            if *d <= floor {
                *d = floor;
                *p = true;
            }
        }
        loop {
            let pinned_mass = pinned.iter().filter(|p| **p).count() as f64 * floor * area;
            let free_mass: f64 =
                self.density.iter().zip(&pinned).filter(|(_, p)| !**p).map(|(d, _)| d).sum::<f64>() * area;
            if free_mass <= 0.0 {
                return Err(invalid("map has no mass above the floor"));
            }
            let scale = (1.0 - pinned_mass) / free_mass;
            let mut changed = false;
            for (d, p) in self.density.iter_mut().zip(pinned.iter_mut()) {
                if *p {
                    continue;
                }
                *d *= scale;
                if *d < floor {
                    *d = floor;
                    *p = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        Ok(())
    }

    /// Errors unless the mass is one within `1e-9` and every cell respects the floor.
    pub fn check_invariants(&self) -> Result<()> {
        let integral = self.integral();
        if (integral - 1.0).abs() >= 1e-9 {
            return Err(Error::Unnormalized { integral });
        }
        let min = self.min_density();
        // floor cells are assigned exactly, no rounding slack needed
        if min < self.floor {
            return Err(invalid(format!("cell density {min} below floor {}", self.floor)));
        }
        Ok(())
    }

    /// Adds a truncated Gaussian at `center`, clipped when a logged bump lies
    /// within `clip_radius`, then renormalizes. Returns the added mass.
    pub fn add_bump(&mut self, center: [f64; 2], params: &BumpParams) -> Result<BumpRecord> {
        self.workspace.check(&center)?;
        if !(params.sigma > 0.0 && params.amplitude >= 0.0) {
            return Err(invalid("bump needs sigma > 0 and amplitude >= 0"));
        }
        let neighbors: Vec<f64> = self
            .log
            .iter()
            .filter(|r| dist(r.point, center) < params.clip_radius)
            .map(|r| r.added_mass)
            .collect();
        let clipped = !neighbors.is_empty();
        let mut peak = params.amplitude * self.uniform_level();
        if clipped {
            peak *= params.clip_factor;
        }
        let mut bump = self.bump_profile(center, params.sigma);
        let unit_mass: f64 = bump.iter().map(|(_, v)| v).sum::<f64>() * self.cell_area();
        let mut mass = peak * unit_mass;
        if clipped {
            // second hit never outweighs a tenth of any earlier hit at the same spot
            let cap = params.clip_factor * neighbors.iter().copied().fold(f64::INFINITY, f64::min);
            if mass > cap {
                peak = cap / unit_mass;
                mass = cap;
            }
        }
        for (idx, v) in bump.drain(..) {
            self.density[idx] += peak * v;
        }
        self.normalize()?;
        let record = BumpRecord { point: center, added_mass: mass, clipped };
        self.log.push(record);
        Ok(record)
    }

    /// Unit-peak Gaussian values for the cells within the truncation radius.
    fn bump_profile(&self, center: [f64; 2], sigma: f64) -> Vec<(usize, f64)> {
        let reach = BUMP_TRUNCATION * sigma;
        let mut out = Vec::new();
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let c = self.cell_center(ix, iy);
                let r = dist(c, center);
                if r <= reach {
                    out.push((iy * self.nx + ix, (-0.5 * (r / sigma).powi(2)).exp()));
                }
            }
        }
        out
    }

    /// Coarse update for one classified image. Background events leave the map untouched.
    pub fn register_detection(&mut self, event: &DetectionEvent, params: &BumpParams) -> Result<Option<BumpRecord>> {
        if !event.label.is_rock() {
            return Ok(None);
        }
        let p = event
            .world_point
            .ok_or_else(|| invalid("rock detection without a world point"))?;
        self.add_bump(p, params).map(Some)
    }

    /// Fine update at the viewed camera angles: a bump on detection, otherwise
    /// the cells within one field of view are discounted.
    pub fn update_fine(&mut self, angles: CameraAngles, detected: bool, params: &FineUpdate) -> Result<()> {
        let center = [angles.yaw, angles.pitch];
        self.workspace.check(&center)?;
        if detected {
            self.add_bump(center, &params.bump)?;
            return Ok(());
        }
        if !(params.discount > 0.0 && params.discount <= 1.0) {
            return Err(invalid("discount must lie in (0, 1]"));
        }
        let (hx, hy) = (0.5 * params.fov[0], 0.5 * params.fov[1]);
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let c = self.cell_center(ix, iy);
                if (c[0] - center[0]).abs() <= hx && (c[1] - center[1]).abs() <= hy {
                    self.density[iy * self.nx + ix] *= params.discount;
                }
            }
        }
        self.normalize()
    }

    /// Portable graymap, 8-bit, max-scaled, first row at the top (largest y).
    pub fn write_pgm(&self, mut out: impl Write) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.nx, self.ny)?;
        let max = self.density.iter().copied().fold(0.0, f64::max);
        let mut bytes = Vec::with_capacity(self.nx * self.ny);
        for iy in (0..self.ny).rev() {
            for ix in 0..self.nx {
                let v = self.density[iy * self.nx + ix] / max;
                bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    /// `ix,iy,x,y,density` per cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ix,iy,x,y,density\n");
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let c = self.cell_center(ix, iy);
                let _ = writeln!(s, "{ix},{iy},{},{},{:e}", c[0], c[1], self.density[iy * self.nx + ix]);
            }
        }
        s
    }
}

/// Parameters of the fine (camera-angle) map update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineUpdate {
    pub bump: BumpParams,
    /// Multiplier for viewed cells after a background classification.
    pub discount: f64,
    /// Horizontal and vertical field of view in radians.
    pub fov: [f64; 2],
}

impl Default for FineUpdate {
    fn default() -> Self {
        Self { bump: BumpParams::fine_default(), discount: 0.5, fov: [60f64.to_radians(), 45f64.to_radians()] }
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Samples the coarse map along each downward camera ray.
///
/// Fine cells are `(yaw, pitch)` pairs. Cells with `pitch >= 0`, or whose ray
/// meets the ground outside the coarse workspace, receive the floor value.
pub fn project_to_fine(
    coarse: &InfoMap,
    body: &BodyState,
    camera: &CameraModel,
    fine_workspace: Workspace,
    nx: usize,
    ny: usize,
) -> Result<InfoMap> {
    let mut fine = InfoMap::uniform(fine_workspace, nx, ny)?;
    for iy in 0..ny {
        for ix in 0..nx {
            let [yaw, pitch] = fine.cell_center(ix, iy);
            let v = camera
                .ground_hit(body, CameraAngles { yaw, pitch }, [0.0, 0.0])
                .and_then(|p| coarse.value_at(p))
                .unwrap_or(0.0);
            fine.density[iy * nx + ix] = v;
        }
    }
    fine.normalize()?;
    Ok(fine)
}
