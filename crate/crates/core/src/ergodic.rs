//! Cosine-Fourier basis, spectral coefficients and the ergodic metric.
//!
//! A trajectory is compared to a target density through the weighted squared
//! distance between their cosine-Fourier coefficients,
//! `E = sum_k lambda_k (c_k - phi_k)^2`, where `c_k` is the time average of the
//! basis functions along the trajectory and `phi_k` is the projection of the
//! density onto the same basis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::infomap::InfoMap;

/// Axis-aligned box `[offset_i, offset_i + L_i]` per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    lengths: Vec<f64>,
    offsets: Vec<f64>,
}

impl Workspace {
    pub fn new(lengths: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(invalid("workspace needs at least one axis"));
        }
        if lengths.len() != offsets.len() {
            return Err(invalid("lengths and offsets differ in dimension"));
        }
        if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(invalid(format!("axis lengths must be positive, got {lengths:?}")));
        }
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(invalid("offsets must be finite"));
        }
        Ok(Self { lengths, offsets })
    }

    /// `[0, width] x [0, height]`.
    pub fn planar(width: f64, height: f64) -> Result<Self> {
        Self::new(vec![width, height], vec![0.0, 0.0])
    }

    /// Box spanning `[lo_i, hi_i]` per axis.
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(invalid("bounds differ in dimension"));
        }
        let lengths = lo.iter().zip(hi).map(|(l, h)| h - l).collect();
        Self::new(lengths, lo.to_vec())
    }

    pub fn dims(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.offsets[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.offsets[axis] + self.lengths[axis]
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        w.len() == self.dims()
            && w.iter().enumerate().all(|(i, &wi)| (self.lower(i)..=self.upper(i)).contains(&wi))
    }

    pub fn check(&self, w: &[f64]) -> Result<()> {
        if self.contains(w) {
            Ok(())
        } else {
            Err(Error::OutsideWorkspace { point: w.to_vec() })
        }
    }

    pub fn clamp(&self, w: &mut [f64]) {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = wi.clamp(self.lower(i), self.upper(i));
        }
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dims()).map(|i| self.offsets[i] + 0.5 * self.lengths[i]).collect()
    }

    /// Same box translated by `shift`.
    pub fn shifted(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dims() {
            return Err(invalid("shift dimension mismatch"));
        }
        let offsets = self.offsets.iter().zip(shift).map(|(o, s)| o + s).collect();
        Self::new(self.lengths.clone(), offsets)
    }
}

/// Per-mode coefficients, ordered like [`FourierBasis::mode`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector(pub Vec<f64>);

impl CoefficientVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Tensor-product cosine basis with `K` modes per axis.
#[derive(Clone, Debug)]
pub struct FourierBasis {
    workspace: Workspace,
    modes_per_axis: usize,
    /// Flattened multi-indices, `dims` entries per mode, last axis fastest.
    modes: Vec<usize>,
    lambda: Vec<f64>,
    hk: Vec<f64>,
    inv_hk: Vec<f64>,
    /// `pi / L_i` per axis.
    freq: Vec<f64>,
}

impl FourierBasis {
    pub fn new(workspace: Workspace, modes_per_axis: usize) -> Result<Self> {
        if modes_per_axis == 0 {
            return Err(invalid("need at least one mode per axis"));
        }
        let dims = workspace.dims();
        let count = modes_per_axis
            .checked_pow(dims as u32)
            .ok_or_else(|| invalid("mode count overflows"))?;
        let mut modes = Vec::with_capacity(count * dims);
        let mut lambda = Vec::with_capacity(count);
        let mut hk = Vec::with_capacity(count);
        let exponent = -(dims as f64 + 1.0) / 2.0;
        let mut k = vec![0usize; dims];
        for _ in 0..count {
            modes.extend_from_slice(&k);
            let norm_sq: f64 = k.iter().map(|&ki| (ki * ki) as f64).sum();
            lambda.push((1.0 + norm_sq).powf(exponent));
            let h2: f64 = k
                .iter()
                .zip(workspace.lengths())
                .map(|(&ki, &l)| if ki == 0 { l } else { 0.5 * l })
                .product();
            hk.push(h2.sqrt());
            // odometer increment, last axis fastest
            for axis in (0..dims).rev() {
                k[axis] += 1;
                if k[axis] < modes_per_axis {
                    break;
                }
                k[axis] = 0;
            }
        }
        let inv_hk = hk.iter().map(|h| 1.0 / h).collect();
        let freq = workspace.lengths().iter().map(|l| PI / l).collect();
        Ok(Self { workspace, modes_per_axis, modes, lambda, hk, inv_hk, freq })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn dims(&self) -> usize {
        self.workspace.dims()
    }

    pub fn modes_per_axis(&self) -> usize {
        self.modes_per_axis
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn mode(&self, index: usize) -> &[usize] {
        let d = self.dims();
        &self.modes[index * d..(index + 1) * d]
    }

    /// Index of the mode with multi-index `k`.
    pub fn index_of(&self, k: &[usize]) -> Option<usize> {
        if k.len() != self.dims() || k.iter().any(|&ki| ki >= self.modes_per_axis) {
            return None;
        }
        Some(k.iter().fold(0, |acc, &ki| acc * self.modes_per_axis + ki))
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn hk(&self) -> &[f64] {
        &self.hk
    }

    fn check_mode(&self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(invalid(format!("mode index {index} out of range ({} modes)", self.len())));
        }
        Ok(())
    }

    /// `F_k(w)`.
    pub fn basis_value(&self, index: usize, w: &[f64]) -> Result<f64> {
        self.check_mode(index)?;
        self.workspace.check(w)?;
        let k = self.mode(index);
        let mut v = self.inv_hk[index];
        for i in 0..self.dims() {
            v *= (k[i] as f64 * self.freq[i] * (w[i] - self.workspace.offsets[i])).cos();
        }
        Ok(v)
    }

    /// `grad_w F_k(w)`.
    pub fn basis_gradient(&self, index: usize, w: &[f64]) -> Result<Vec<f64>> {
        self.check_mode(index)?;
        self.workspace.check(w)?;
        let k = self.mode(index);
        let d = self.dims();
        let (mut c, mut s) = (vec![0.0; d], vec![0.0; d]);
        for i in 0..d {
            let a = k[i] as f64 * self.freq[i] * (w[i] - self.workspace.offsets[i]);
            c[i] = a.cos();
            s[i] = a.sin();
        }
        Ok((0..d)
            .map(|j| {
                let mut g = -(k[j] as f64) * self.freq[j] * s[j] * self.inv_hk[index];
                for i in (0..d).filter(|&i| i != j) {
                    g *= c[i];
                }
                g
            })
            .collect())
    }

    /// Fill `cos(k a_i)` and `sin(k a_i)` for `k < K` on each axis.
    /// Tables are laid out `[axis * K + k]`.
    fn fill_tables(&self, w: &[f64], cos: &mut [f64], sin: &mut [f64]) {
        let kk = self.modes_per_axis;
        for i in 0..self.dims() {
            let a = self.freq[i] * (w[i] - self.workspace.offsets[i]);
            let (sa, ca) = a.sin_cos();
            let (c, s) = (&mut cos[i * kk..(i + 1) * kk], &mut sin[i * kk..(i + 1) * kk]);
            c[0] = 1.0;
            s[0] = 0.0;
            for k in 1..kk {
                // angle addition; drift stays at a few ulps for K <= 32
                c[k] = c[k - 1] * ca - s[k - 1] * sa;
                s[k] = s[k - 1] * ca + c[k - 1] * sa;
            }
        }
    }

    fn accumulate_values(&self, w: &[f64], scratch: &mut Scratch, out: &mut [f64]) {
        self.fill_tables(w, &mut scratch.cos, &mut scratch.sin);
        let (d, kk) = (self.dims(), self.modes_per_axis);
        for (m, o) in out.iter_mut().enumerate() {
            let k = &self.modes[m * d..(m + 1) * d];
            let mut v = self.inv_hk[m];
            for i in 0..d {
                v *= scratch.cos[i * kk + k[i]];
            }
            *o += v;
        }
    }

    /// Adds `sum_k weight_k grad F_k(w)` into `grad`.
    fn accumulate_weighted_gradient(&self, w: &[f64], weight: &[f64], scratch: &mut Scratch, grad: &mut [f64]) {
        self.fill_tables(w, &mut scratch.cos, &mut scratch.sin);
        let (d, kk) = (self.dims(), self.modes_per_axis);
        for (m, &wm) in weight.iter().enumerate() {
            if wm == 0.0 {
                continue;
            }
            let k = &self.modes[m * d..(m + 1) * d];
            let base = wm * self.inv_hk[m];
            for j in 0..d {
                if k[j] == 0 {
                    continue;
                }
                let mut g = -(k[j] as f64) * self.freq[j] * scratch.sin[j * kk + k[j]] * base;
                for i in 0..d {
                    if i != j {
                        g *= scratch.cos[i * kk + k[i]];
                    }
                }
                grad[j] += g;
            }
        }
    }

    pub(crate) fn scratch(&self) -> Scratch {
        let n = self.dims() * self.modes_per_axis;
        Scratch { cos: vec![0.0; n], sin: vec![0.0; n] }
    }

    /// Time-averaged basis values `c_k = (1/T) sum_t F_k(w_t)`.
    pub fn trajectory_coefficients<P: AsRef<[f64]>>(&self, points: &[P]) -> Result<CoefficientVector> {
        if points.is_empty() {
            return Err(invalid("trajectory must contain at least one point"));
        }
        let mut acc = CoverageHistory::new(self);
        for p in points {
            acc.push(self, p.as_ref())?;
        }
        Ok(acc.coefficients())
    }

    /// Midpoint-rule projection `phi_k = sum_cells density F_k(center) area` of a 2-D map.
    pub fn map_coefficients(&self, map: &InfoMap) -> Result<CoefficientVector> {
        if self.dims() != 2 {
            return Err(invalid("map coefficients need a 2-D basis"));
        }
        if map.workspace() != &self.workspace {
            return Err(invalid("map and basis use different workspaces"));
        }
        let integral = map.integral();
        if (integral - 1.0).abs() > 1e-9 {
            return Err(Error::Unnormalized { integral });
        }
        let (nx, ny) = map.resolution();
        let kk = self.modes_per_axis;
        let (cx, cy) = (self.axis_table(map, 0, nx), self.axis_table(map, 1, ny));
        let area = map.cell_area();
        let density = map.density();
        // partial[iy][k0] = sum_ix rho(ix, iy) cos(k0 x_ix)
        let mut partial = vec![0.0; ny * kk];
        for iy in 0..ny {
            let row = &density[iy * nx..(iy + 1) * nx];
            let dst = &mut partial[iy * kk..(iy + 1) * kk];
            for (ix, &rho) in row.iter().enumerate() {
                let c = &cx[ix * kk..(ix + 1) * kk];
                for k0 in 0..kk {
                    dst[k0] += rho * c[k0];
                }
            }
        }
        let mut out = vec![0.0; self.len()];
        for (m, o) in out.iter_mut().enumerate() {
            let k = self.mode(m);
            let mut s = 0.0;
            for iy in 0..ny {
                s += partial[iy * kk + k[0]] * cy[iy * kk + k[1]];
            }
            *o = s * area * self.inv_hk[m];
        }
        Ok(CoefficientVector(out))
    }

    fn axis_table(&self, map: &InfoMap, axis: usize, n: usize) -> Vec<f64> {
        let kk = self.modes_per_axis;
        let step = self.workspace.lengths[axis] / n as f64;
        let mut table = vec![0.0; n * kk];
        for i in 0..n {
            let local = (i as f64 + 0.5) * step;
            for k in 0..kk {
                table[i * kk + k] = (k as f64 * self.freq[axis] * local).cos();
            }
        }
        debug_assert_eq!(map.resolution_along(axis), n);
        table
    }

    fn check_len(&self, v: &CoefficientVector, what: &str) -> Result<()> {
        if v.len() != self.len() {
            return Err(invalid(format!("{what} has {} entries, basis has {} modes", v.len(), self.len())));
        }
        Ok(())
    }

    /// `E = sum_k lambda_k (c_k - phi_k)^2`.
    pub fn ergodic_metric(&self, c: &CoefficientVector, phi: &CoefficientVector) -> Result<f64> {
        self.check_len(c, "trajectory coefficients")?;
        self.check_len(phi, "map coefficients")?;
        Ok(weighted_distance(&self.lambda, &c.0, &phi.0))
    }

    /// `dE / dw_t` for every trajectory point.
    pub fn metric_gradient<P: AsRef<[f64]>>(&self, points: &[P], phi: &CoefficientVector) -> Result<Vec<Vec<f64>>> {
        self.check_len(phi, "map coefficients")?;
        let c = self.trajectory_coefficients(points)?;
        let weight = metric_weights(&self.lambda, &c.0, &phi.0, points.len() as f64);
        let mut scratch = self.scratch();
        Ok(points
            .iter()
            .map(|p| {
                let mut g = vec![0.0; self.dims()];
                self.accumulate_weighted_gradient(p.as_ref(), &weight, &mut scratch, &mut g);
                g
            })
            .collect())
    }
}

fn weighted_distance(lambda: &[f64], c: &[f64], phi: &[f64]) -> f64 {
    lambda.iter().zip(c).zip(phi).map(|((l, c), p)| l * (c - p) * (c - p)).sum()
}

/// `2 lambda_k (c_k - phi_k) / N`: the per-mode factor of every point gradient.
fn metric_weights(lambda: &[f64], c: &[f64], phi: &[f64], n: f64) -> Vec<f64> {
    lambda.iter().zip(c).zip(phi).map(|((l, c), p)| 2.0 * l * (c - p) / n).collect()
}

pub(crate) struct Scratch {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

/// Running sum of basis values over already-visited points.
///
/// Lets a receding-horizon planner score its next plan together with the
/// states it has already executed.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageHistory {
    sums: Vec<f64>,
    count: usize,
}

impl CoverageHistory {
    pub fn new(basis: &FourierBasis) -> Self {
        Self { sums: vec![0.0; basis.len()], count: 0 }
    }

    pub fn push(&mut self, basis: &FourierBasis, w: &[f64]) -> Result<()> {
        basis.workspace.check(w)?;
        if self.sums.len() != basis.len() {
            return Err(invalid("history built for a different basis"));
        }
        let mut scratch = basis.scratch();
        basis.accumulate_values(w, &mut scratch, &mut self.sums);
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    /// Average over the stored points; zeros when empty.
    pub fn coefficients(&self) -> CoefficientVector {
        let n = self.count.max(1) as f64;
        CoefficientVector(self.sums.iter().map(|s| s / n).collect())
    }
}

/// Ergodic metric of `history ++ points` against fixed map coefficients,
/// evaluated without allocation. Used inside the trajectory optimizer.
pub(crate) struct MetricKernel<'a> {
    basis: &'a FourierBasis,
    phi: &'a [f64],
    history_sums: &'a [f64],
    history_count: usize,
    scratch: Scratch,
    c: Vec<f64>,
    weight: Vec<f64>,
}

impl<'a> MetricKernel<'a> {
    pub fn new(basis: &'a FourierBasis, phi: &'a [f64], history: Option<&'a CoverageHistory>) -> Self {
        let (history_sums, history_count) = match history {
            Some(h) => (h.sums.as_slice(), h.count),
            None => (&[][..], 0),
        };
        Self {
            basis,
            phi,
            history_sums,
            history_count,
            scratch: basis.scratch(),
            c: vec![0.0; basis.len()],
            weight: vec![0.0; basis.len()],
        }
    }

    fn load_coefficients(&mut self, points: &[f64]) -> f64 {
        let d = self.basis.dims();
        let t = points.len() / d;
        if self.history_sums.is_empty() {
            self.c.iter_mut().for_each(|c| *c = 0.0);
        } else {
            self.c.copy_from_slice(self.history_sums);
        }
        for p in points.chunks_exact(d) {
            self.basis.accumulate_values(p, &mut self.scratch, &mut self.c);
        }
        let n = (t + self.history_count) as f64;
        self.c.iter_mut().for_each(|c| *c /= n);
        n
    }

    /// Metric value for the flattened points (`dims` entries each).
    pub fn value(&mut self, points: &[f64]) -> f64 {
        self.load_coefficients(points);
        weighted_distance(&self.basis.lambda, &self.c, self.phi)
    }

    /// Metric value; writes `dE/dw_t` into `grad` (same layout as `points`).
    pub fn value_and_gradient(&mut self, points: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.load_coefficients(points);
        let e = weighted_distance(&self.basis.lambda, &self.c, self.phi);
        for (w, ((l, c), p)) in self.weight.iter_mut().zip(self.basis.lambda.iter().zip(&self.c).zip(self.phi)) {
            *w = 2.0 * l * (c - p) / n;
        }
        let d = self.basis.dims();
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (p, g) in points.chunks_exact(d).zip(grad.chunks_exact_mut(d)) {
            self.basis.accumulate_weighted_gradient(p, &self.weight, &mut self.scratch, g);
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(k: usize) -> FourierBasis {
        FourierBasis::new(Workspace::planar(100.0, 100.0).unwrap(), k).unwrap()
    }

    #[test]
    fn constant_mode_value() {
        let b = square(8);
        let v = b.basis_value(0, &[12.0, 77.0]).unwrap();
        assert!((v - 0.01).abs() < 1e-15);
        assert_eq!(b.basis_gradient(0, &[12.0, 77.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn cosine_zero_crossing() {
        let b = square(8);
        let k = b.index_of(&[1, 0]).unwrap();
        assert!(b.basis_value(k, &[50.0, 37.2]).unwrap().abs() < 1e-15);
        let g = b.basis_gradient(k, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-18));
    }

    #[test]
    fn outside_point_is_domain_error() {
        let b = square(4);
        assert!(matches!(b.basis_value(1, &[101.0, 3.0]), Err(Error::OutsideWorkspace { .. })));
        assert!(b.basis_gradient(1, &[-0.1, 3.0]).is_err());
        assert!(b.basis_value(99, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn weights_and_normalizers() {
        let b = square(3);
        let k = b.index_of(&[1, 0]).unwrap();
        assert!((b.lambda()[k] - 2f64.powf(-1.5)).abs() < 1e-15);
        assert!((b.hk()[0] - 100.0).abs() < 1e-12);
        assert!((b.hk()[k] - (50.0f64 * 100.0).sqrt()).abs() < 1e-12);
        assert!((b.hk()[b.index_of(&[2, 1]).unwrap()] - 50.0).abs() < 1e-12);
        assert_eq!(b.mode(5), &[1, 2]);
    }

    #[test]
    fn single_mode_metric_arithmetic() {
        let b = FourierBasis::new(Workspace::planar(1.0, 1.0).unwrap(), 2).unwrap();
        let k = b.index_of(&[1, 0]).unwrap();
        let mut c = vec![0.0; b.len()];
        c[k] = 0.1;
        let e = b.ergodic_metric(&CoefficientVector(c), &CoefficientVector(vec![0.0; 4])).unwrap();
        assert!((e - 0.1f64.powi(2) * 2f64.powf(-1.5)).abs() < 1e-15);
        assert!((e - 0.00353553).abs() < 1e-8);
    }

    #[test]
    fn metric_errors_on_length_mismatch() {
        let b = square(2);
        let c = CoefficientVector(vec![0.0; 3]);
        assert!(b.ergodic_metric(&c, &CoefficientVector(vec![0.0; 4])).is_err());
        let empty: Vec<[f64; 2]> = vec![];
        assert!(b.trajectory_coefficients(&empty).is_err());
    }

    #[test]
    fn stationary_trajectory_coefficients() {
        let b = square(5);
        let w = [31.0, 64.5];
        let c = b.trajectory_coefficients(&vec![w; 7]).unwrap();
        for m in 0..b.len() {
            assert!((c.0[m] - b.basis_value(m, &w).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn two_point_average_matches_direct_sum() {
        let b = square(6);
        let (w1, w2) = ([3.0, 91.0], [72.5, 18.25]);
        let c = b.trajectory_coefficients(&[w1, w2]).unwrap();
        for m in 0..b.len() {
            let direct = 0.5 * (b.basis_value(m, &w1).unwrap() + b.basis_value(m, &w2).unwrap());
            assert!((c.0[m] - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_at_matching_coefficients() {
        let b = square(4);
        let pts = [[10.0, 20.0], [30.0, 40.0]];
        let phi = b.trajectory_coefficients(&pts).unwrap();
        for g in b.metric_gradient(&pts, &phi).unwrap() {
            assert!(g.iter().all(|x| x.abs() < 1e-20));
        }
        assert_eq!(b.ergodic_metric(&phi, &phi).unwrap(), 0.0);
    }

    #[test]
    fn kernel_with_history_matches_concatenation() {
        let b = square(5);
        let past = [[5.0, 5.0], [6.0, 5.5], [7.0, 6.5]];
        let plan = [[8.0, 7.0], [9.5, 8.0]];
        let mut h = CoverageHistory::new(&b);
        for p in &past {
            h.push(&b, p).unwrap();
        }
        let phi = CoefficientVector((0..b.len()).map(|m| 1e-3 / (1.0 + m as f64)).collect());
        let mut kernel = MetricKernel::new(&b, &phi.0, Some(&h));
        let flat: Vec<f64> = plan.iter().flatten().copied().collect();
        let mut grad = vec![0.0; 4];
        let e = kernel.value_and_gradient(&flat, &mut grad);
        let all: Vec<[f64; 2]> = past.iter().chain(plan.iter()).copied().collect();
        let c = b.trajectory_coefficients(&all).unwrap();
        assert!((e - b.ergodic_metric(&c, &phi).unwrap()).abs() < 1e-15);
        let g = b.metric_gradient(&all, &phi).unwrap();
        for (t, gt) in g[3..].iter().enumerate() {
            assert!((gt[0] - grad[2 * t]).abs() < 1e-15 && (gt[1] - grad[2 * t + 1]).abs() < 1e-15);
        }
    }

    #[test]
    fn angular_workspace_offsets() {
        let ws = Workspace::from_bounds(&[-2.0, -1.5], &[2.0, 0.5]).unwrap();
        assert!(ws.contains(&[-2.0, 0.5]));
        assert!(!ws.contains(&[-2.01, 0.0]));
        let b = FourierBasis::new(ws, 3).unwrap();
        let k = b.index_of(&[1, 1]).unwrap();
        // local coordinate of x=0 is 2, half of the 4-wide axis
        assert!(b.basis_value(k, &[0.0, 0.3]).unwrap().abs() < 1e-15);
    }
}
