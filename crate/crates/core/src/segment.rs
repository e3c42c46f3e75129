//! Surface normals, region-growing segmentation and oriented bounding boxes.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{Matrix3, SymmetricEigen};

use crate::world::{CellState, GridGeometry, VoxelGrid};
use crate::{Error, PlannerParams, Result, Vec3};

/// Inspectable surface cells with per-cell unit normals and curvature proxies.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSet {
    /// Sorted linear cell indices.
    pub cells: Vec<usize>,
    pub normals: Vec<Vec3>,
    pub curvature: Vec<f64>,
}

impl SurfaceSet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Position of `cell` in `cells`.
    pub fn index_of(&self, cell: usize) -> Option<usize> {
        self.cells.binary_search(&cell).ok()
    }

    pub fn normal_of(&self, cell: usize) -> Option<Vec3> {
        self.index_of(cell).map(|i| self.normals[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrientedBox {
    pub center: Vec3,
    /// Orthonormal axes sorted by decreasing half-extent.
    pub axes: [Vec3; 3],
    pub half_extents: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub id: usize,
    /// Sorted linear cell indices.
    pub cells: Vec<usize>,
    pub mean_normal: Vec3,
    pub bbox: OrientedBox,
    pub principal_axis: Vec3,
    /// Set when undersized segments were folded in; normal coherence is not
    /// guaranteed for such segments.
    pub merged: bool,
}

const SIGN_REF: [f64; 3] = [1.0, 1e-3, 1e-6];

fn offset_vec(d: [i64; 3]) -> Vec3 {
    Vec3::new(d[0] as f64, d[1] as f64, d[2] as f64)
}

/// Direction from `c` into adjacent Free space: sum of free face offsets,
/// falling back to the 26-neighborhood. Zero when no neighbor is Free.
pub fn free_direction(grid: &VoxelGrid, c: [usize; 3]) -> Vec3 {
    let geo = grid.geometry();
    let mut f = Vec3::zeros();
    for (d, n) in geo.neighbors6(c) {
        if grid.state(n) == CellState::Free {
            f += offset_vec(d);
        }
    }
    if f.norm() > 1e-12 {
        return f.normalize();
    }
    for n in geo.neighbors26(c) {
        if grid.state(n) == CellState::Free {
            let d = [
                n[0] as i64 - c[0] as i64,
                n[1] as i64 - c[1] as i64,
                n[2] as i64 - c[2] as i64,
            ];
            f += offset_vec(d).normalize();
        }
    }
    if f.norm() > 1e-12 {
        f.normalize()
    } else {
        Vec3::zeros()
    }
}

fn sign_fix(v: Vec3) -> Vec3 {
    if v.dot(&Vec3::new(SIGN_REF[0], SIGN_REF[1], SIGN_REF[2])) < 0.0 {
        -v
    } else {
        v
    }
}

/// Eigen-decomposition with eigenpairs sorted by ascending eigenvalue.
fn sorted_eigen(cov: Matrix3<f64>) -> ([f64; 3], [Vec3; 3]) {
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.map(|i| eig.eigenvalues[i].max(0.0));
    let vecs = idx.map(|i| eig.eigenvectors.column(i).into_owned().normalize());
    (vals, vecs)
}

fn covariance(points: &[Vec3]) -> (Vec3, Matrix3<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    (mean, cov / n)
}

struct SurfaceIndex {
    slot: Vec<u32>,
}

impl SurfaceIndex {
    const NONE: u32 = u32::MAX;

    fn new(len: usize, cells: &[usize]) -> Self {
        let mut slot = vec![Self::NONE; len];
        for (k, &c) in cells.iter().enumerate() {
            slot[c] = k as u32;
        }
        SurfaceIndex { slot }
    }

    fn get(&self, i: usize) -> Option<usize> {
        let s = self.slot[i];
        (s != Self::NONE).then_some(s as usize)
    }
}

fn cube_around(geo: &GridGeometry, c: [usize; 3], r: i64) -> impl Iterator<Item = [usize; 3]> + '_ {
    let base = [c[0] as i64, c[1] as i64, c[2] as i64];
    (-r..=r)
        .flat_map(move |dz| (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| [dx, dy, dz])))
        .filter_map(move |d| geo.checked([base[0] + d[0], base[1] + d[1], base[2] + d[2]]))
}

/// PCA normals over surface neighbors within `radius`, oriented into Free space.
///
/// Neighbors whose own free direction opposes the cell's are excluded, so
/// cells near a junction of two faces take the normal of their own face.
pub fn estimate_normals(grid: &VoxelGrid, surfaces: &[usize], radius: f64) -> Result<SurfaceSet> {
    let geo = grid.geometry();
    let res = geo.resolution();
    if !(radius >= res - 1e-12) {
        return Err(Error::Domain(format!(
            "normal radius {radius} m is below one cell ({res} m)"
        )));
    }
    let mut cells = surfaces.to_vec();
    cells.sort_unstable();
    cells.dedup();
    if let Some(&bad) = cells.iter().find(|&&i| i >= grid.len() || grid.state_linear(i) != CellState::Occupied) {
        return Err(Error::Invariant(format!("surface cell {bad} is not Occupied")));
    }
    let index = SurfaceIndex::new(grid.len(), &cells);
    let free: Vec<Vec3> = cells.iter().map(|&i| free_direction(grid, geo.unlinear(i))).collect();
    let r_cells = (radius / res + 1e-9).floor() as i64;
    let r2 = radius * radius + 1e-9;

    let mut normals = Vec::with_capacity(cells.len());
    let mut curvature = Vec::with_capacity(cells.len());
    let mut pts = Vec::new();
    for (k, &i) in cells.iter().enumerate() {
        let c = geo.unlinear(i);
        let center = geo.center(c);
        let f = free[k];
        pts.clear();
        for n in cube_around(geo, c, r_cells) {
            let Some(j) = index.get(geo.linear(n)) else { continue };
            let p = geo.center(n);
            if (p - center).norm_squared() > r2 {
                continue;
            }
            if j != k && f.norm() > 0.0 && free[j].dot(&f) <= 0.0 {
                continue;
            }
            pts.push(p);
        }
        if pts.len() < 3 {
            normals.push(if f.norm() > 0.0 { f } else { Vec3::z() });
            curvature.push(0.0);
            continue;
        }
        let (_, cov) = covariance(&pts);
        let (vals, vecs) = sorted_eigen(cov);
        let total = vals[0] + vals[1] + vals[2];
        let scale = total.max(1e-300);
        let mut n = vecs[0];
        if vals[1] / scale < 1e-9 && f.norm() > 0.0 {
            // Collinear neighborhood: take the free direction off the line.
            let line = vecs[2];
            let perp = f - line * f.dot(&line);
            if perp.norm() > 1e-9 {
                n = perp.normalize();
            }
        }
        if n.dot(&f) < 0.0 {
            n = -n;
        }
        normals.push(n.normalize());
        curvature.push(if total > 0.0 { vals[0] / total } else { 0.0 });
    }
    Ok(SurfaceSet {
        cells,
        normals,
        curvature,
    })
}

/// PCA oriented box of cell centers; `principal_axis` is the longest axis.
pub fn fit_bbox(geo: &GridGeometry, cells: &[usize]) -> Result<(OrientedBox, Vec3)> {
    if cells.is_empty() {
        return Err(Error::Domain("cannot fit a box to an empty segment".into()));
    }
    let half_res = 0.5 * geo.resolution();
    if cells.len() == 1 {
        let b = OrientedBox {
            center: geo.center_linear(cells[0]),
            axes: [Vec3::x(), Vec3::y(), Vec3::z()],
            half_extents: [half_res; 3],
        };
        return Ok((b, Vec3::x()));
    }
    let pts: Vec<Vec3> = cells.iter().map(|&i| geo.center_linear(i)).collect();
    let (mean, cov) = covariance(&pts);
    let (vals, vecs) = sorted_eigen(cov);
    let mut frames: Vec<(Vec3, f64, f64, f64)> = (0..3)
        .map(|a| {
            let axis = sign_fix(vecs[a]);
            let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let t = (p - mean).dot(&axis);
                (lo.min(t), hi.max(t))
            });
            (axis, 0.5 * (hi - lo), 0.5 * (hi + lo), vals[a])
        })
        .collect();
    frames.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.3.total_cmp(&a.3)));
    let center = frames.iter().fold(mean, |c, f| c + f.0 * f.2);
    let b = OrientedBox {
        center,
        axes: [frames[0].0, frames[1].0, frames[2].0],
        half_extents: [frames[0].1, frames[1].1, frames[2].1],
    };
    Ok((b, frames[0].0))
}

fn mean_normal(surf: &SurfaceSet, members: &[usize]) -> Vec3 {
    let s = members.iter().fold(Vec3::zeros(), |a, &k| a + surf.normals[k]);
    if s.norm() > 1e-12 {
        s.normalize()
    } else {
        surf.normals[members[0]]
    }
}

/// Region growing over 26-connected surface cells.
///
/// Seeds are taken in order of increasing curvature (ties by cell index). A
/// neighbor joins when its normal is within `angle_thresh` of the seed normal
/// and its curvature is at most `curvature_thresh`. Segments smaller than
/// `min_size` are folded into the adjacent segment with the most similar
/// mean normal.
pub fn region_grow(
    geo: &GridGeometry,
    surf: &SurfaceSet,
    angle_thresh: f64,
    curvature_thresh: f64,
    min_size: usize,
) -> Result<Vec<Segment>> {
    if !(angle_thresh > 0.0) || !(curvature_thresh > 0.0) {
        return Err(Error::Domain("segmentation thresholds must be > 0".into()));
    }
    if surf.is_empty() {
        return Ok(Vec::new());
    }
    let n = surf.len();
    let index = SurfaceIndex::new(geo.len(), &surf.cells);
    let cos_thresh = angle_thresh.cos();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| surf.curvature[a].total_cmp(&surf.curvature[b]).then(a.cmp(&b)));

    let mut label = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for &seed in &order {
        if label[seed] != usize::MAX {
            continue;
        }
        let g = groups.len();
        let seed_normal = surf.normals[seed];
        label[seed] = g;
        let mut members = vec![seed];
        queue.push_back(seed);
        while let Some(k) = queue.pop_front() {
            for nb in geo.neighbors26(geo.unlinear(surf.cells[k])) {
                let Some(j) = index.get(geo.linear(nb)) else { continue };
                if label[j] != usize::MAX {
                    continue;
                }
                if surf.normals[j].dot(&seed_normal) >= cos_thresh - 1e-12
                    && surf.curvature[j] <= curvature_thresh
                {
                    label[j] = g;
                    members.push(j);
                    queue.push_back(j);
                }
            }
        }
        groups.push(members);
    }

    let mut merged = vec![false; groups.len()];
    loop {
        // Smallest undersized group that has a neighbor; ties by group id.
        let mut candidate: Option<(usize, usize)> = None;
        let mut sizes: Vec<(usize, usize)> = groups
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty() && m.len() < min_size)
            .map(|(g, m)| (m.len(), g))
            .collect();
        sizes.sort_unstable();
        for (_, g) in sizes {
            let mine = mean_normal(surf, &groups[g]);
            let mut adjacent = BTreeSet::new();
            for &k in &groups[g] {
                for nb in geo.neighbors26(geo.unlinear(surf.cells[k])) {
                    if let Some(j) = index.get(geo.linear(nb)) {
                        if label[j] != g {
                            adjacent.insert(label[j]);
                        }
                    }
                }
            }
            let best = adjacent.iter().copied().fold(None::<(usize, f64)>, |best, h| {
                let d = mean_normal(surf, &groups[h]).dot(&mine);
                match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((h, d)),
                }
            });
            if let Some((h, _)) = best {
                candidate = Some((g, h));
                break;
            }
        }
        let Some((g, h)) = candidate else { break };
        let moved = std::mem::take(&mut groups[g]);
        for &k in &moved {
            label[k] = h;
        }
        groups[h].extend(moved);
        merged[h] = true;
    }

    let mut out = Vec::new();
    for (g, members) in groups.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut cells: Vec<usize> = members.iter().map(|&k| surf.cells[k]).collect();
        cells.sort_unstable();
        let (bbox, principal_axis) = fit_bbox(geo, &cells)?;
        out.push(Segment {
            id: 0,
            mean_normal: mean_normal(surf, &members),
            cells,
            bbox,
            principal_axis,
            merged: merged[g],
        });
    }
    out.sort_by_key(|s| s.cells[0]);
    for (id, s) in out.iter_mut().enumerate() {
        s.id = id;
    }
    Ok(out)
}

/// Normals followed by region growing with the scenario parameters.
pub fn segment_surfaces(
    grid: &VoxelGrid,
    surfaces: &[usize],
    params: &PlannerParams,
) -> Result<(SurfaceSet, Vec<Segment>)> {
    let surf = estimate_normals(grid, surfaces, params.normal_radius_m)?;
    let segs = region_grow(
        grid.geometry(),
        &surf,
        params.segment_angle_thresh_rad,
        params.segment_curvature_thresh,
        params.segment_min_size,
    )?;
    Ok((surf, segs))
}

/// Segment label per surface cell, as a PLY point cloud.
pub fn segments_ply(geo: &GridGeometry, segments: &[Segment]) -> String {
    let pts: Vec<(Vec3, f64)> = segments
        .iter()
        .flat_map(|s| s.cells.iter().map(move |&c| (geo.center_linear(c), s.id as f64)))
        .collect();
    crate::export::ply_points(&pts, "segment")
}
