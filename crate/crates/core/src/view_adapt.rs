//! View-angle adaptation: weight the reference surface by observation status
//! and pick the yaw that sees the most weight through the online map.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::Serialize;

use crate::viewpoints::{Viewpoint, ViewpointStatus};
use crate::world::raycast::raycast_with;
use crate::world::{cell_visible, CameraModel, CellState, GridGeometry, VoxelGrid};
use crate::{wrap_angle, Error, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    Base,
    Occluded,
    Scanned,
}

/// Weights over the reference surface cells. Cells outside the surface
/// weigh 0.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightGrid {
    cells: Vec<usize>,
    weights: Vec<f64>,
    classes: Vec<CellClass>,
}

impl WeightGrid {
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn classes(&self) -> &[CellClass] {
        &self.classes
    }

    pub fn weight_of(&self, cell: usize) -> f64 {
        self.cells.binary_search(&cell).map_or(0.0, |i| self.weights[i])
    }

    pub fn class_of(&self, cell: usize) -> Option<CellClass> {
        self.cells.binary_search(&cell).ok().map(|i| self.classes[i])
    }

    pub fn count(&self, class: CellClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    /// Copy with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> WeightGrid {
        WeightGrid {
            weights: self.weights.iter().map(|w| w * factor).collect(),
            ..self.clone()
        }
    }

    /// Weights given directly per cell, all classed Base.
    pub fn from_weights(cells: Vec<usize>, weights: Vec<f64>) -> Result<WeightGrid> {
        if cells.len() != weights.len() {
            return Err(Error::Domain("cells and weights differ in length".into()));
        }
        if cells.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("cells must be sorted and unique".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("weights must be nonnegative".into()));
        }
        let classes = vec![CellClass::Base; cells.len()];
        Ok(WeightGrid { cells, weights, classes })
    }
}

/// Uniform yaw candidates over `[-pi, pi)`.
pub fn candidate_angles(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || step > 2.0 * PI {
        return Err(Error::Domain(format!("angle step {step} must lie in (0, 2*pi]")));
    }
    let n = ((2.0 * PI / step).round() as usize).max(1);
    Ok((0..n).map(|i| -PI + 2.0 * PI * i as f64 / n as f64).collect())
}

fn online_opaque(m: &VoxelGrid) -> impl Fn(usize) -> bool + '_ {
    move |i| m.state_linear(i) != CellState::Free
}

/// Whether any cell with center within `radius` of `p` is Occupied in `m`.
pub fn occupied_within(m: &VoxelGrid, p: &Vec3, radius: f64) -> bool {
    let geo = m.geometry();
    let lo = geo.signed_cell(&(p - Vec3::repeat(radius)));
    let hi = geo.signed_cell(&(p + Vec3::repeat(radius)));
    let dims = geo.dims();
    for z in lo[2].max(0)..=hi[2].min(dims[2] as i64 - 1) {
        for y in lo[1].max(0)..=hi[1].min(dims[1] as i64 - 1) {
            for x in lo[0].max(0)..=hi[0].min(dims[0] as i64 - 1) {
                let c = [x as usize, y as usize, z as usize];
                if m.state(c) == CellState::Occupied && (geo.center(c) - p).norm() <= radius {
                    return true;
                }
            }
        }
    }
    false
}

/// Whether the central ray of a viewpoint first meets an Occupied cell of
/// `m` that is not a reference surface cell.
pub fn central_ray_blocked(m: &VoxelGrid, surfaces: &[usize], vp: &Viewpoint, range: f64) -> bool {
    let dir = Vec3::new(vp.yaw.cos(), vp.yaw.sin(), 0.0);
    let hit = raycast_with(m.geometry(), &vp.position, &dir, range, |i| m.state_linear(i) == CellState::Occupied);
    match hit {
        Ok(Some((cell, _))) => surfaces.binary_search(&m.geometry().linear(cell)).is_err(),
        _ => false,
    }
}

/// Pending viewpoints made unusable by content of the online map: occupied
/// cells within `robot_radius` of the position, or an unforeseen occupied
/// cell on the central ray before the target surface. Returns viewpoint ids.
pub fn identify_blocked(m: &VoxelGrid, surfaces: &[usize], viewpoints: &[Viewpoint], robot_radius: f64, range: f64) -> Vec<usize> {
    viewpoints
        .iter()
        .filter(|vp| vp.status == ViewpointStatus::Pending)
        .filter(|vp| occupied_within(m, &vp.position, robot_radius) || central_ray_blocked(m, surfaces, vp, range))
        .map(|vp| vp.id)
        .collect()
}

/// Nominal coverage of a blocked viewpoint that nobody has scanned yet.
pub fn occluded_regions(vp: &Viewpoint, scanned: &BTreeSet<usize>) -> Vec<usize> {
    vp.covered.iter().copied().filter(|c| !scanned.contains(c)).collect()
}

/// Assign class and weight per surface cell; Occluded wins over Scanned.
pub fn build_weights(
    surfaces: &[usize],
    occluded: &BTreeSet<usize>,
    scanned: &BTreeSet<usize>,
    w0: f64,
    w_hi: f64,
    w_lo: f64,
) -> Result<WeightGrid> {
    if !(w_lo < w0 && w0 < w_hi) || w_lo < 0.0 {
        return Err(Error::Domain(format!("weights must satisfy 0 <= {w_lo} < {w0} < {w_hi}")));
    }
    let mut cells = surfaces.to_vec();
    cells.sort_unstable();
    cells.dedup();
    let classes: Vec<CellClass> = cells
        .iter()
        .map(|c| {
            if occluded.contains(c) {
                CellClass::Occluded
            } else if scanned.contains(c) {
                CellClass::Scanned
            } else {
                CellClass::Base
            }
        })
        .collect();
    let weights = classes
        .iter()
        .map(|c| match c {
            CellClass::Base => w0,
            CellClass::Occluded => w_hi,
            CellClass::Scanned => w_lo,
        })
        .collect();
    Ok(WeightGrid { cells, weights, classes })
}

/// Weighted cells within camera range that are visible from `p` in `m`,
/// with their centers.
fn visible_weighted(p: &Vec3, camera: &CameraModel, w: &WeightGrid, m: &VoxelGrid) -> Vec<(Vec3, f64)> {
    let geo: &GridGeometry = m.geometry();
    let opaque = online_opaque(m);
    w.cells
        .iter()
        .zip(&w.weights)
        .filter(|(_, &wt)| wt != 0.0)
        .filter_map(|(&c, &wt)| {
            let cc = geo.unlinear(c);
            let center = geo.center(cc);
            if (center - p).norm() > camera.max_range_m {
                return None;
            }
            cell_visible(geo, p, cc, &opaque).then_some((center, wt))
        })
        .collect()
}

fn check_position(m: &VoxelGrid, p: &Vec3) -> Result<()> {
    if !m.geometry().contains(p) {
        return Err(Error::Domain(format!("position ({:.2}, {:.2}, {:.2}) is outside the map", p.x, p.y, p.z)));
    }
    Ok(())
}

/// Sum of weights of surface cells inside the yaw-`phi` frustum and visible
/// from `p` through the online map.
pub fn raycast_score(phi: f64, p: &Vec3, camera: &CameraModel, w: &WeightGrid, m: &VoxelGrid) -> Result<f64> {
    check_position(m, p)?;
    Ok(visible_weighted(p, camera, w, m)
        .iter()
        .filter(|(c, _)| camera.in_frustum(p, phi, c))
        .map(|(_, wt)| wt)
        .sum())
}

/// Scores for every candidate angle; visibility is evaluated once.
pub fn score_angles(angles: &[f64], p: &Vec3, camera: &CameraModel, w: &WeightGrid, m: &VoxelGrid) -> Result<Vec<f64>> {
    check_position(m, p)?;
    let vis = visible_weighted(p, camera, w, m);
    Ok(angles
        .iter()
        .map(|&phi| vis.iter().filter(|(c, _)| camera.in_frustum(p, phi, c)).map(|(_, wt)| wt).sum())
        .collect())
}

/// Index of the best score; ties go to the angle closest to `current`, then
/// to the smaller angle.
pub fn select_angle(angles: &[f64], scores: &[f64], current: f64) -> Option<usize> {
    (0..angles.len()).min_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| {
                let da = wrap_angle(angles[a] - current).abs();
                let db = wrap_angle(angles[b] - current).abs();
                da.total_cmp(&db)
            })
            .then_with(|| angles[a].total_cmp(&angles[b]))
    })
}

/// Best yaw and its score. A tie with the current yaw keeps the nearest
/// candidate to it.
pub fn best_view_angle(p: &Vec3, angles: &[f64], camera: &CameraModel, w: &WeightGrid, m: &VoxelGrid, current: f64) -> Result<(f64, f64)> {
    if angles.is_empty() {
        return Err(Error::Domain("no candidate angles".into()));
    }
    let scores = score_angles(angles, p, camera, w, m)?;
    let i = select_angle(angles, &scores, current).expect("non-empty");
    Ok((angles[i], scores[i]))
}

/// One adaptation event.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptationEvent {
    pub time_s: f64,
    pub host_viewpoint: usize,
    pub blocked_viewpoints: Vec<usize>,
    pub occluded_cells: usize,
    pub yaw_rad: f64,
    pub score: f64,
}

/// Inputs for one run of the adaptation procedure.
pub struct AdaptRequest<'a> {
    pub online: &'a VoxelGrid,
    pub surfaces: &'a [usize],
    pub blocked: &'a [&'a Viewpoint],
    pub scanned: &'a BTreeSet<usize>,
    pub position: Vec3,
    pub current_yaw: f64,
    pub camera: &'a CameraModel,
    pub weights: [f64; 3],
    pub angle_step: f64,
}

/// Occluded regions of all blocked viewpoints, weights, and the best yaw.
/// Returns `(yaw, score, occluded cell count)`.
pub fn adapt(req: &AdaptRequest) -> Result<(f64, f64, usize)> {
    let mut occluded = BTreeSet::new();
    for vp in req.blocked {
        occluded.extend(occluded_regions(vp, req.scanned));
    }
    let [w0, w_hi, w_lo] = req.weights;
    let w = build_weights(req.surfaces, &occluded, req.scanned, w0, w_hi, w_lo)?;
    let angles = candidate_angles(req.angle_step)?;
    let (phi, score) = best_view_angle(&req.position, &angles, req.camera, &w, req.online, req.current_yaw)?;
    Ok((phi, score, occluded.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn empty(dims: [usize; 3]) -> VoxelGrid {
        VoxelGrid::new(Vec3::zeros(), 0.2, dims, CellState::Free).unwrap()
    }

    fn vp(id: usize, position: Vec3, yaw: f64, covered: Vec<usize>) -> Viewpoint {
        Viewpoint {
            id,
            position,
            yaw,
            segment: 0,
            row: 0,
            step: id,
            pass: 0,
            covered,
            status: ViewpointStatus::Pending,
        }
    }

    /// Wall at x index 20 spanning y and z; viewpoints face it from x = 2.5 m.
    fn wall_world() -> (VoxelGrid, Vec<usize>) {
        let mut g = empty([24, 20, 10]);
        let mut surf = Vec::new();
        for y in 0..20 {
            for z in 0..10 {
                g.set([20, y, z], CellState::Occupied);
                g.set([21, y, z], CellState::Occupied);
                surf.push(g.geometry().linear([20, y, z]));
            }
        }
        surf.sort_unstable();
        (g, surf)
    }

    #[test]
    fn candidates_are_uniform_and_sorted() {
        let a = candidate_angles(10f64.to_radians()).unwrap();
        assert_eq!(a.len(), 36);
        assert_eq!(a[0], -PI);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(*a.last().unwrap() < PI);
    }

    #[test]
    fn blocked_detection() {
        let (reference, surf) = wall_world();
        let v = vp(0, Vec3::new(2.5, 2.0, 1.0), 0.0, vec![]);
        assert!(identify_blocked(&reference, &surf, std::slice::from_ref(&v), 0.3, 4.0).is_empty());
        // Box on the viewpoint.
        let mut m = reference.clone();
        m.fill_box(Vec3::new(2.4, 1.9, 0.9), Vec3::new(2.6, 2.1, 1.1), CellState::Occupied);
        assert_eq!(identify_blocked(&m, &surf, std::slice::from_ref(&v), 0.3, 4.0), vec![0]);
        // Box between viewpoint and wall.
        let mut m = reference.clone();
        m.fill_box(Vec3::new(3.2, 1.6, 0.6), Vec3::new(3.6, 2.4, 1.4), CellState::Occupied);
        assert_eq!(identify_blocked(&m, &surf, std::slice::from_ref(&v), 0.3, 4.0), vec![0]);
        // Raycast oracle: the first occupied cell sampled densely along the
        // central ray is not a surface cell.
        let geo = m.geometry();
        let first = (0..4000)
            .map(|k| v.position + Vec3::x() * (k as f64 * 1e-3))
            .filter_map(|p| geo.cell_of(&p))
            .find(|&c| m.state(c) == CellState::Occupied)
            .unwrap();
        assert!(surf.binary_search(&geo.linear(first)).is_err());
        // Visited viewpoints are never re-flagged.
        let mut done = v;
        done.status = ViewpointStatus::Visited;
        assert!(identify_blocked(&m, &surf, &[done], 0.3, 4.0).is_empty());
    }

    #[test]
    fn occluded_region_cases() {
        let v = vp(0, Vec3::zeros(), 0.0, vec![1, 2, 3, 5]);
        assert_eq!(occluded_regions(&v, &BTreeSet::new()), vec![1, 2, 3, 5]);
        assert!(occluded_regions(&v, &BTreeSet::from([1, 2, 3, 5, 9])).is_empty());
        // Partial scan log: recompute the difference by hand.
        let log = BTreeSet::from([2, 5]);
        let expect: Vec<usize> = v.covered.iter().copied().filter(|c| !log.contains(c)).collect();
        assert_eq!(occluded_regions(&v, &log), expect);
    }

    #[test]
    fn weight_classes() {
        let surf = vec![1, 2, 3, 4, 5];
        let w = build_weights(&surf, &BTreeSet::new(), &BTreeSet::new(), 1.0, 3.0, 0.1).unwrap();
        assert!(w.weights().iter().all(|&x| x == 1.0));
        let occ = BTreeSet::from([2, 3]);
        let scan = BTreeSet::from([3, 4]);
        let w = build_weights(&surf, &occ, &scan, 1.0, 3.0, 0.1).unwrap();
        assert_eq!(w.class_of(3), Some(CellClass::Occluded));
        assert_eq!(w.class_of(4), Some(CellClass::Scanned));
        assert_eq!(w.count(CellClass::Occluded), 2);
        assert_eq!(w.count(CellClass::Scanned), 1);
        assert_eq!(w.count(CellClass::Base), 2);
        assert_eq!(w.weight_of(99), 0.0);
        assert!(build_weights(&surf, &occ, &scan, 1.0, 0.5, 0.1).is_err());
    }

    fn single_cell_east() -> (VoxelGrid, WeightGrid, Vec3) {
        let mut g = empty([20, 20, 10]);
        let c = [15usize, 10, 5];
        g.set(c, CellState::Occupied);
        let w = WeightGrid::from_weights(vec![g.geometry().linear(c)], vec![1.0]).unwrap();
        (g, w, Vec3::new(1.5, 2.1, 1.1))
    }

    #[test]
    fn single_cell_scores() {
        let (g, w, p) = single_cell_east();
        let cam = CameraModel {
            fov_h_rad: PI / 2.0,
            ..CameraModel::default()
        };
        assert_eq!(raycast_score(0.0, &p, &cam, &w, &g).unwrap(), 1.0);
        assert_eq!(raycast_score(PI, &p, &cam, &w, &g).unwrap(), 0.0);
        let zero = w.scaled(0.0);
        for phi in candidate_angles(0.3).unwrap() {
            assert_eq!(raycast_score(phi, &p, &cam, &zero, &g).unwrap(), 0.0);
        }
        assert!(raycast_score(0.0, &Vec3::new(-1.0, 0.0, 0.0), &cam, &w, &g).is_err());
    }

    #[test]
    fn best_angle_examples() {
        let (g, w, p) = single_cell_east();
        let cam = CameraModel::default();
        let angles = candidate_angles(10f64.to_radians()).unwrap();
        // Zero weights keep the current yaw's nearest candidate.
        let (phi, _) = best_view_angle(&p, &angles, &cam, &w.scaled(0.0), &g, 0.7).unwrap();
        assert!((phi - 0.7).abs() <= 5f64.to_radians() + 1e-12);
        // Single cell east with a narrow camera: brute force over candidates.
        let narrow = CameraModel {
            fov_h_rad: 10f64.to_radians(),
            ..cam
        };
        let (phi, s) = best_view_angle(&p, &angles, &narrow, &w, &g, 0.0).unwrap();
        let brute = angles
            .iter()
            .map(|&a| raycast_score(a, &p, &narrow, &w, &g).unwrap())
            .fold(0.0, f64::max);
        assert_eq!(s, brute);
        assert!(phi.abs() <= 5f64.to_radians() + 1e-12);
    }

    #[test]
    fn symmetric_clusters_pick_smaller_angle() {
        let mut g = empty([30, 30, 10]);
        let geo = *g.geometry();
        let p = geo.center([15, 15, 5]);
        let north = [15usize, 25, 5];
        let south = [15usize, 5, 5];
        g.set(north, CellState::Occupied);
        g.set(south, CellState::Occupied);
        let mut cells = vec![geo.linear(north), geo.linear(south)];
        cells.sort_unstable();
        let w = WeightGrid::from_weights(cells, vec![1.0, 1.0]).unwrap();
        let cam = CameraModel {
            fov_h_rad: 60f64.to_radians(),
            ..CameraModel::default()
        };
        let angles = candidate_angles(10f64.to_radians()).unwrap();
        let (phi, s) = best_view_angle(&p, &angles, &cam, &w, &g, 0.0).unwrap();
        assert_eq!(s, 1.0);
        // Frustum edges at +-60 degrees tie on distance to the current yaw.
        assert!((phi + PI / 3.0).abs() < 1e-9, "{phi}");
    }

    /// Dense-sampling visibility oracle: some face of `cell` facing `p` is
    /// reachable along a segment whose samples stay in non-opaque cells.
    fn oracle_visible(m: &VoxelGrid, p: &Vec3, cell: [usize; 3]) -> bool {
        let geo = m.geometry();
        let center = geo.center(cell);
        let half = 0.5 * geo.resolution();
        crate::world::grid::FACE_OFFSETS.iter().any(|off| {
            let n = Vec3::new(off[0] as f64, off[1] as f64, off[2] as f64);
            let face = center + n * half;
            if (p - face).dot(&n) <= 1e-12 {
                return false;
            }
            let steps = 2000;
            (0..steps).all(|k| {
                let q = p + (face - p) * (k as f64 / steps as f64);
                match geo.cell_of(&q) {
                    Some(c) => c == cell || m.state(c) == CellState::Free,
                    None => false,
                }
            })
        })
    }

    #[test]
    fn cluttered_scores_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = CameraModel {
            max_range_m: 10.0,
            fov_v_rad: 170f64.to_radians(),
            ..CameraModel::default()
        };
        for _ in 0..10 {
            let mut g = empty([8, 8, 8]);
            let geo = *g.geometry();
            for i in 0..g.len() {
                if rng.gen_bool(0.15) {
                    g.set_linear(i, CellState::Occupied);
                }
            }
            let p_cell = [rng.gen_range(0..8), rng.gen_range(0..8), rng.gen_range(0..8)];
            g.set(p_cell, CellState::Free);
            let p = geo.center(p_cell) + Vec3::new(0.013, -0.021, 0.007);
            let cells = g.occupied_indices();
            let weights: Vec<f64> = cells.iter().map(|_| rng.gen_range(0.0..2.0)).collect();
            let w = WeightGrid::from_weights(cells.clone(), weights.clone()).unwrap();
            for phi in candidate_angles(30f64.to_radians()).unwrap() {
                let got = raycast_score(phi, &p, &cam, &w, &g).unwrap();
                let want: f64 = cells
                    .iter()
                    .zip(&weights)
                    .filter(|(&c, _)| {
                        let cc = geo.unlinear(c);
                        cam.in_frustum(&p, phi, &geo.center(cc)) && oracle_visible(&g, &p, cc)
                    })
                    .map(|(_, w)| w)
                    .sum();
                assert!((got - want).abs() < 1e-9, "phi {phi}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn contributing_cells_pass_single_ray_recheck() {
        let (mut g, surf) = wall_world();
        g.fill_box(Vec3::new(3.0, 1.0, 0.0), Vec3::new(3.4, 2.0, 2.0), CellState::Occupied);
        let p = Vec3::new(1.0, 2.0, 1.0);
        let w = WeightGrid::from_weights(surf.clone(), vec![1.0; surf.len()]).unwrap();
        let cam = CameraModel::default();
        let geo = g.geometry();
        for (c, _) in visible_weighted(&p, &cam, &w, &g) {
            let cell = geo.cell_of(&c).unwrap();
            assert!(oracle_visible(&g, &p, cell));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn scaling_and_additivity(seed in 0u64..1000, factor in 0.01f64..100.0) {
            let (g, surf) = wall_world();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Vec3::new(rng.gen_range(0.5..3.5), rng.gen_range(0.5..3.5), rng.gen_range(0.3..1.7));
            let cam = CameraModel::default();
            let angles = candidate_angles(10f64.to_radians()).unwrap();
            let weights: Vec<f64> = surf.iter().map(|_| rng.gen_range(0.0..3.0)).collect();
            let w = WeightGrid::from_weights(surf.clone(), weights.clone()).unwrap();
            let cur = rng.gen_range(-PI..PI);
            let (a, _) = best_view_angle(&p, &angles, &cam, &w, &g, cur).unwrap();
            let (b, _) = best_view_angle(&p, &angles, &cam, &w.scaled(factor), &g, cur).unwrap();
            prop_assert_eq!(a, b);
            // Split the support in two disjoint halves.
            let mask: Vec<bool> = surf.iter().map(|_| rng.gen_bool(0.5)).collect();
            let left = WeightGrid::from_weights(surf.clone(), weights.iter().zip(&mask).map(|(w, &m)| if m { *w } else { 0.0 }).collect()).unwrap();
            let right = WeightGrid::from_weights(surf.clone(), weights.iter().zip(&mask).map(|(w, &m)| if m { 0.0 } else { *w }).collect()).unwrap();
            for &phi in &angles {
                let whole = raycast_score(phi, &p, &cam, &w, &g).unwrap();
                let parts = raycast_score(phi, &p, &cam, &left, &g).unwrap() + raycast_score(phi, &p, &cam, &right, &g).unwrap();
                prop_assert!((whole - parts).abs() <= 1e-9 * whole.max(1.0));
            }
        }
    }
}
