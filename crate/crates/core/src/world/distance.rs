//! Truncated Euclidean distance field over cell centers.
//!
//! Exact squared distances come from the separable lower-envelope transform
//! (one 1D pass per axis), so the field matches a brute-force nearest-occupied
//! scan.

use super::grid::{CellState, GridGeometry, VoxelGrid};
use crate::{Error, Result, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    geometry: GridGeometry,
    truncation: f64,
    values: Vec<f64>,
}

/// 1D squared distance transform of a sampled function (Felzenszwalb-Huttenlocher).
/// Infinite samples are not sites.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k: Option<usize> = None;
    for q in 0..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            match k {
                None => {
                    k = Some(0);
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                Some(kk) => {
                    let p = v[kk];
                    let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                        / (2.0 * q as f64 - 2.0 * p as f64);
                    if s <= z[kk] {
                        // z[0] is -inf, so this never pops the last parabola.
                        k = Some(kk - 1);
                        continue;
                    }
                    v[kk + 1] = q;
                    z[kk + 1] = s;
                    z[kk + 2] = f64::INFINITY;
                    k = Some(kk + 1);
                    break;
                }
            }
        }
    }
    if k.is_none() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut j = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let d = q as f64 - v[j] as f64;
        *o = d * d + f[v[j]];
    }
}

impl DistanceField {
    /// Distance (m) from each cell center to the nearest Occupied cell center,
    /// clamped to `truncation`.
    pub fn compute(grid: &VoxelGrid, truncation: f64) -> Result<Self> {
        if !(truncation > 0.0) {
            return Err(Error::Domain("distance field truncation must be > 0".into()));
        }
        let geo = *grid.geometry();
        let [nx, ny, nz] = geo.dims();
        let mut sq: Vec<f64> = grid
            .cells()
            .iter()
            .map(|s| if *s == CellState::Occupied { 0.0 } else { f64::INFINITY })
            .collect();
        let nmax = nx.max(ny).max(nz);
        let mut f = vec![0.0; nmax];
        let mut out = vec![0.0; nmax];
        let mut v = vec![0usize; nmax];
        let mut z = vec![0.0; nmax + 1];
        let strides = [1, nx, nx * ny];
        for axis in 0..3 {
            let n = geo.dims()[axis];
            let stride = strides[axis];
            let (a1, a2) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            for j in 0..geo.dims()[a2] {
                for i in 0..geo.dims()[a1] {
                    let base = i * strides[a1] + j * strides[a2];
                    for q in 0..n {
                        f[q] = sq[base + q * stride];
                    }
                    edt_1d(&f[..n], &mut out[..n], &mut v[..n], &mut z[..n + 1]);
                    for q in 0..n {
                        sq[base + q * stride] = out[q];
                    }
                }
            }
        }
        let res = geo.resolution();
        let values = sq
            .into_iter()
            .map(|s| (s.sqrt() * res).min(truncation))
            .collect();
        Ok(DistanceField {
            geometry: geo,
            truncation,
            values,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, c: [usize; 3]) -> f64 {
        self.values[self.geometry.linear(c)]
    }

    #[inline]
    pub fn at_linear(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Trilinear interpolation between cell centers; points outside the
    /// center lattice are clamped onto it.
    pub fn interpolate(&self, p: &Vec3) -> f64 {
        self.interpolate_with_gradient(p).0
    }

    /// Interpolated distance and its gradient (zero along clamped axes).
    pub fn interpolate_with_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        let geo = &self.geometry;
        let res = geo.resolution();
        let dims = geo.dims();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut live = [true; 3];
        for a in 0..3 {
            let u = (p[a] - geo.origin()[a]) / res - 0.5;
            let max = (dims[a] - 1) as f64;
            if dims[a] == 1 {
                base[a] = 0;
                frac[a] = 0.0;
                live[a] = false;
                continue;
            }
            let uc = if u < 0.0 {
                live[a] = false;
                0.0
            } else if u > max {
                live[a] = false;
                max
            } else {
                u
            };
            let b = (uc.floor() as usize).min(dims[a] - 2);
            base[a] = b;
            frac[a] = uc - b as f64;
        }
        let val = |dx: usize, dy: usize, dz: usize| -> f64 {
            let c = [
                (base[0] + dx).min(dims[0] - 1),
                (base[1] + dy).min(dims[1] - 1),
                (base[2] + dz).min(dims[2] - 1),
            ];
            self.values[geo.linear(c)]
        };
        let [fx, fy, fz] = frac;
        let c000 = val(0, 0, 0);
        let c100 = val(1, 0, 0);
        let c010 = val(0, 1, 0);
        let c110 = val(1, 1, 0);
        let c001 = val(0, 0, 1);
        let c101 = val(1, 0, 1);
        let c011 = val(0, 1, 1);
        let c111 = val(1, 1, 1);
        let c00 = c000 + (c100 - c000) * fx;
        let c10 = c010 + (c110 - c010) * fx;
        let c01 = c001 + (c101 - c001) * fx;
        let c11 = c011 + (c111 - c011) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        let value = c0 + (c1 - c0) * fz;

        let dx = {
            let d0 = (c100 - c000) + ((c110 - c010) - (c100 - c000)) * fy;
            let d1 = (c101 - c001) + ((c111 - c011) - (c101 - c001)) * fy;
            d0 + (d1 - d0) * fz
        };
        let dy = (c10 - c00) + ((c11 - c01) - (c10 - c00)) * fz;
        let dz = c1 - c0;
        let mut g = Vec3::new(dx, dy, dz) / res;
        for a in 0..3 {
            if !live[a] {
                g[a] = 0.0;
            }
        }
        (value, g)
    }

    /// Exact distance from `p` to the nearest Occupied cell center, capped at
    /// `cap` (which must not exceed the truncation).
    pub fn clearance(&self, p: &Vec3, cap: f64) -> f64 {
        let cap = cap.min(self.truncation);
        let geo = &self.geometry;
        let res = geo.resolution();
        let half_diag = 0.5 * 3f64.sqrt() * res;
        let sc = geo.signed_cell(p);
        let dims = geo.dims();
        // Lower bound through the nearest in-grid cell center.
        let clamped = [
            sc[0].clamp(0, dims[0] as i64 - 1) as usize,
            sc[1].clamp(0, dims[1] as i64 - 1) as usize,
            sc[2].clamp(0, dims[2] as i64 - 1) as usize,
        ];
        let anchor = self.at(clamped);
        let offset = (geo.center(clamped) - p).norm();
        if anchor - offset >= cap {
            return cap;
        }
        // The anchor's nearest occupied center is within anchor + offset of p.
        let bound = if anchor < self.truncation { cap.min(anchor + offset) } else { cap };
        let reach = ((bound + half_diag) / res).ceil() as i64 + 1;
        let mut best = cap;
        for z in (sc[2] - reach).max(0)..=(sc[2] + reach).min(dims[2] as i64 - 1) {
            for y in (sc[1] - reach).max(0)..=(sc[1] + reach).min(dims[1] as i64 - 1) {
                for x in (sc[0] - reach).max(0)..=(sc[0] + reach).min(dims[0] as i64 - 1) {
                    let c = [x as usize, y as usize, z as usize];
                    if self.values[geo.linear(c)] == 0.0 {
                        let d = (geo.center(c) - p).norm();
                        if d < best {
                            best = d;
                        }
                    }
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_free_is_truncation() {
        let g = VoxelGrid::new(Vec3::zeros(), 0.2, [5, 4, 3], CellState::Free).unwrap();
        let df = DistanceField::compute(&g, 2.0).unwrap();
        assert!(df.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn neighbor_of_single_occupied() {
        let mut g = VoxelGrid::new(Vec3::zeros(), 0.2, [5, 5, 5], CellState::Free).unwrap();
        g.set([2, 2, 2], CellState::Occupied);
        let df = DistanceField::compute(&g, 2.0).unwrap();
        assert_eq!(df.at([2, 2, 2]), 0.0);
        assert!((df.at([3, 2, 2]) - 0.2).abs() < 1e-12);
        assert!((df.at([3, 3, 3]) - 0.2 * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_truncation() {
        let g = VoxelGrid::new(Vec3::zeros(), 0.2, [2, 2, 2], CellState::Free).unwrap();
        assert!(DistanceField::compute(&g, 0.0).is_err());
    }

    #[test]
    fn interpolation_reproduces_centers_and_linear_gradient() {
        let mut g = VoxelGrid::new(Vec3::zeros(), 0.2, [10, 3, 3], CellState::Free).unwrap();
        for y in 0..3 {
            for z in 0..3 {
                g.set([0, y, z], CellState::Occupied);
            }
        }
        let df = DistanceField::compute(&g, 5.0).unwrap();
        let c = g.geometry().center([4, 1, 1]);
        assert!((df.interpolate(&c) - 0.8).abs() < 1e-12);
        let (v, grad) = df.interpolate_with_gradient(&(c + Vec3::new(0.05, 0.0, 0.0)));
        assert!((v - 0.85).abs() < 1e-12);
        assert!((grad.x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_clearance_between_centers() {
        let mut g = VoxelGrid::new(Vec3::zeros(), 0.2, [10, 10, 10], CellState::Free).unwrap();
        g.set([5, 5, 5], CellState::Occupied);
        let df = DistanceField::compute(&g, 2.0).unwrap();
        let occ = g.geometry().center([5, 5, 5]);
        let p = occ + Vec3::new(0.33, -0.07, 0.11);
        assert!((df.clearance(&p, 2.0) - (p - occ).norm()).abs() < 1e-12);
        let far = occ + Vec3::new(0.9, 0.0, 0.0);
        assert_eq!(df.clearance(&far, 0.5), 0.5);
    }
}
