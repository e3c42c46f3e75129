//! Standoff viewpoints per segment and the coverage closure pass.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::segment::{Segment, SurfaceSet};
use crate::world::{CameraModel, CellState, DistanceField, VoxelGrid};
use crate::{wrap_angle, PlannerParams, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewpointStatus {
    Pending,
    Visited,
    Blocked,
    Adapted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Viewpoint {
    pub id: usize,
    pub position: Vec3,
    /// World-frame yaw in [-pi, pi).
    pub yaw: f64,
    pub segment: usize,
    pub row: usize,
    pub step: usize,
    /// 0 for the nominal pattern, 1 for the densified closure pass.
    pub pass: u8,
    /// Sorted surface cells observed from the nominal pose on the reference map.
    pub covered: Vec<usize>,
    pub status: ViewpointStatus,
}

/// A nominal position that could not be placed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DroppedViewpoint {
    pub segment: usize,
    pub nominal_m: [f64; 3],
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanWarning {
    pub segment: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentViewpoints {
    pub viewpoints: Vec<Viewpoint>,
    pub dropped: Vec<DroppedViewpoint>,
    pub warning: Option<PlanWarning>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViewpointPlan {
    /// Ordered by (segment, pass, row, step); ids equal positions.
    pub viewpoints: Vec<Viewpoint>,
    pub dropped: Vec<DroppedViewpoint>,
    pub warnings: Vec<PlanWarning>,
    /// Surface cells no viewpoint observes, before and after densification.
    pub uncovered_nominal: Vec<usize>,
    pub uncovered: Vec<usize>,
}

/// Serializable view of a viewpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewpointRecord {
    pub id: usize,
    pub position_m: [f64; 3],
    pub yaw_rad: f64,
    pub segment: usize,
    pub status: ViewpointStatus,
}

impl From<&Viewpoint> for ViewpointRecord {
    fn from(v: &Viewpoint) -> Self {
        ViewpointRecord {
            id: v.id,
            position_m: [v.position.x, v.position.y, v.position.z],
            yaw_rad: v.yaw,
            segment: v.segment,
            status: v.status,
        }
    }
}

/// Static inputs shared by every segment.
pub struct PlacementContext<'a> {
    pub reference: &'a VoxelGrid,
    pub distance: &'a DistanceField,
    pub surfaces: &'a SurfaceSet,
    pub camera: &'a CameraModel,
    /// Required clearance from occupied cell centers (m).
    pub min_clearance: f64,
}

impl PlacementContext<'_> {
    fn feasible(&self, p: &Vec3) -> bool {
        self.reference.state_at(p) == Some(CellState::Free)
            && self.distance.clearance(p, self.min_clearance + 1e-6) >= self.min_clearance
    }

    /// Cells of `segment` observed from `(p, yaw)` on the reference map.
    pub fn covered_cells(&self, segment: &Segment, p: &Vec3, yaw: f64) -> Vec<usize> {
        let geo = self.reference.geometry();
        let opaque = |i: usize| self.reference.state_linear(i) != CellState::Free;
        segment
            .cells
            .iter()
            .copied()
            .filter(|&c| {
                let n = self.surfaces.normal_of(c).unwrap_or_else(Vec3::zeros);
                self.camera.observes(geo, p, yaw, c, &n, opaque)
            })
            .collect()
    }
}

/// Field of view spanning a footprint axis: vertical FoV for steep axes.
fn fov_along(camera: &CameraModel, axis: &Vec3) -> f64 {
    if axis.z.abs() > std::f64::consts::FRAC_1_SQRT_2 {
        camera.fov_v_rad
    } else {
        camera.fov_h_rad
    }
}

/// Footprint width at `standoff` and the step that leaves `overlap` between
/// neighboring footprints.
pub fn footprint_and_spacing(fov: f64, standoff: f64, overlap: f64) -> (f64, f64) {
    let footprint = 2.0 * standoff * (0.5 * fov).tan();
    (footprint, footprint * (1.0 - overlap))
}

/// Yaw that looks along `-normal` in the horizontal plane.
pub fn facing_yaw(normal: &Vec3) -> f64 {
    if normal.x.hypot(normal.y) < 1e-9 {
        return 0.0;
    }
    wrap_angle((-normal.y).atan2(-normal.x))
}

/// Positions stepped along the principal axis and stacked in rows along the
/// secondary in-plane axis, offset from the surface by `standoff`.
pub fn generate_viewpoints(
    ctx: &PlacementContext<'_>,
    segment: &Segment,
    standoff: f64,
    overlap: f64,
) -> SegmentViewpoints {
    let geo = ctx.reference.geometry();
    let res = geo.resolution();
    let n = segment.mean_normal;
    let yaw = facing_yaw(&n);

    let mut a1 = segment.principal_axis - n * segment.principal_axis.dot(&n);
    if a1.norm() < 1e-6 {
        a1 = n.cross(&Vec3::z());
        if a1.norm() < 1e-6 {
            a1 = Vec3::x();
        }
    }
    let a1 = a1.normalize();
    let mut a2 = n.cross(&a1).normalize();
    if a2.dot(&Vec3::new(1e-6, 1e-3, 1.0)) < 0.0 {
        a2 = -a2;
    }
    let c0 = geo.center_linear(segment.cells[0]);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &c in &segment.cells {
        let d = geo.center_linear(c) - c0;
        for (k, a) in [a1, a2].iter().enumerate() {
            let t = d.dot(a);
            lo[k] = lo[k].min(t);
            hi[k] = hi[k].max(t);
        }
    }
    let mid = c0 + a1 * (0.5 * (lo[0] + hi[0])) + a2 * (0.5 * (lo[1] + hi[1]));
    let span = [hi[0] - lo[0], hi[1] - lo[1]];

    let (_, s1) = footprint_and_spacing(fov_along(ctx.camera, &a1), standoff, overlap);
    let (fp2, s2) = footprint_and_spacing(fov_along(ctx.camera, &a2), standoff, overlap);
    let steps = ((span[0] / s1 - 1e-9).ceil() as usize).max(1);
    let rows = if span[1] > fp2 {
        ((span[1] / s2 - 1e-9).ceil() as usize).max(1)
    } else {
        1
    };

    // Offsets along the normal, nearest to the nominal standoff first.
    let mut normal_deltas = vec![0.0];
    let mut k = 1.0;
    loop {
        let out = standoff + k * res;
        let inward = standoff - k * res;
        let out_ok = out <= 2.0 * standoff + 1e-9;
        let in_ok = inward >= 0.8 * standoff - 1e-9;
        if !out_ok && !in_ok {
            break;
        }
        if out_ok {
            normal_deltas.push(k * res);
        }
        if in_ok {
            normal_deltas.push(-k * res);
        }
        k += 1.0;
    }
    let max_lateral = ((0.5 * s1) / res).floor() as i64;

    let mut result = SegmentViewpoints::default();
    for r in 0..rows {
        let o2 = (r as f64 - 0.5 * (rows - 1) as f64) * s2;
        let nominal: Vec<Vec3> = (0..steps)
            .map(|i| {
                let o1 = (i as f64 - 0.5 * (steps - 1) as f64) * s1;
                mid + a1 * o1 + a2 * o2 + n * standoff
            })
            .collect();
        // Prefer moving the whole row so it stays on one line.
        let shared = normal_deltas
            .iter()
            .find(|&&d| nominal.iter().all(|p| ctx.feasible(&(p + n * d))))
            .copied();
        for (i, p) in nominal.iter().enumerate() {
            let placed = match shared {
                Some(d) => Some(p + n * d),
                None => {
                    let toward = (mid - p).dot(&a1).signum();
                    let toward = if toward == 0.0 { 1.0 } else { toward };
                    let laterals = std::iter::once(0.0).chain((1..=max_lateral).flat_map(|l| {
                        let l = l as f64 * res;
                        [toward * l, -toward * l]
                    }));
                    let mut found = None;
                    'search: for l in laterals {
                        for d in &normal_deltas {
                            let q = p + a1 * l + n * *d;
                            if ctx.feasible(&q) {
                                found = Some(q);
                                break 'search;
                            }
                        }
                    }
                    found
                }
            };
            let Some(q) = placed else {
                result.dropped.push(DroppedViewpoint {
                    segment: segment.id,
                    nominal_m: [p.x, p.y, p.z],
                    reason: "no free position within the nudge range".into(),
                });
                continue;
            };
            let covered = ctx.covered_cells(segment, &q, yaw);
            if covered.is_empty() {
                result.dropped.push(DroppedViewpoint {
                    segment: segment.id,
                    nominal_m: [p.x, p.y, p.z],
                    reason: "observes no surface cell".into(),
                });
                continue;
            }
            result.viewpoints.push(Viewpoint {
                id: 0,
                position: q,
                yaw,
                segment: segment.id,
                row: r,
                step: i,
                pass: 0,
                covered,
                status: ViewpointStatus::Pending,
            });
        }
    }
    if result.viewpoints.is_empty() {
        let message = format!(
            "segment {} has no placeable viewpoint ({} candidates dropped)",
            segment.id,
            result.dropped.len()
        );
        warn!("{message}");
        result.warning = Some(PlanWarning {
            segment: segment.id,
            message,
        });
    }
    result
}

/// Surface cells not covered by any viewpoint.
pub fn coverage_closure_check(viewpoints: &[Viewpoint], surfaces: &[usize]) -> Vec<usize> {
    let covered: BTreeSet<usize> = viewpoints.iter().flat_map(|v| v.covered.iter().copied()).collect();
    surfaces.iter().copied().filter(|c| !covered.contains(c)).collect()
}

/// Viewpoints for every segment, followed by one densified pass that keeps
/// only new viewpoints observing a still-uncovered cell.
pub fn generate_all(ctx: &PlacementContext<'_>, segments: &[Segment], params: &PlannerParams) -> ViewpointPlan {
    let mut plan = ViewpointPlan::default();
    for seg in segments {
        let sv = generate_viewpoints(ctx, seg, params.standoff_m, params.overlap);
        plan.viewpoints.extend(sv.viewpoints);
        plan.dropped.extend(sv.dropped);
        plan.warnings.extend(sv.warning);
    }
    plan.uncovered_nominal = coverage_closure_check(&plan.viewpoints, &ctx.surfaces.cells);
    let mut uncovered: BTreeSet<usize> = plan.uncovered_nominal.iter().copied().collect();
    if !uncovered.is_empty() {
        let dense_overlap = (params.overlap + 0.25).min(0.95);
        for seg in segments {
            if !seg.cells.iter().any(|c| uncovered.contains(c)) {
                continue;
            }
            let sv = generate_viewpoints(ctx, seg, params.standoff_m, dense_overlap);
            for mut v in sv.viewpoints {
                if v.covered.iter().any(|c| uncovered.contains(c)) {
                    for c in &v.covered {
                        uncovered.remove(c);
                    }
                    v.pass = 1;
                    plan.viewpoints.push(v);
                }
            }
        }
    }
    plan.viewpoints
        .sort_by_key(|v| (v.segment, v.pass, v.row, v.step));
    for (id, v) in plan.viewpoints.iter_mut().enumerate() {
        v.id = id;
    }
    plan.uncovered = uncovered.into_iter().collect();
    if !plan.uncovered.is_empty() {
        warn!("{} surface cells remain uncovered by the viewpoint plan", plan.uncovered.len());
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{estimate_normals, region_grow};
    use crate::world::GridGeometry;

    struct Scene {
        grid: VoxelGrid,
        surf: SurfaceSet,
        segs: Vec<Segment>,
        dist: DistanceField,
    }

    fn scene(grid: VoxelGrid, surfaces: Vec<usize>) -> Scene {
        let surf = estimate_normals(&grid, &surfaces, 0.45).unwrap();
        let segs = region_grow(grid.geometry(), &surf, 20f64.to_radians(), 0.05, 8).unwrap();
        let dist = DistanceField::compute(&grid, 2.0).unwrap();
        Scene { grid, surf, segs, dist }
    }

    fn ctx<'a>(s: &'a Scene, cam: &'a CameraModel) -> PlacementContext<'a> {
        PlacementContext {
            reference: &s.grid,
            distance: &s.dist,
            surfaces: &s.surf,
            camera: cam,
            min_clearance: 0.5,
        }
    }

    /// 4.0 m wall along x at y in {0, 1}, three cells tall, free for y >= 2.
    fn short_wall() -> Scene {
        let mut g = VoxelGrid::new(Vec3::zeros(), 0.2, [20, 15, 3], CellState::Free).unwrap();
        for x in 0..20 {
            for z in 0..3 {
                g.set([x, 0, z], CellState::Occupied);
                g.set([x, 1, z], CellState::Occupied);
            }
        }
        let geo = *g.geometry();
        let s = (0..20).flat_map(|x| (0..3).map(move |z| geo.linear([x, 1, z]))).collect();
        scene(g, s)
    }

    #[test]
    fn spacing_example_gives_two_viewpoints() {
        let (_, s) = footprint_and_spacing(90f64.to_radians(), 1.5, 0.0);
        assert!((s - 3.0).abs() < 1e-12);
        let sc = short_wall();
        let cam = CameraModel::default();
        assert_eq!(sc.segs.len(), 1);
        let out = generate_viewpoints(&ctx(&sc, &cam), &sc.segs[0], 1.5, 0.0);
        assert_eq!(out.viewpoints.len(), 2);
        // Analytic footprints at the wall plane cover every wall cell.
        let half = 1.5 * (45f64.to_radians()).tan();
        for &c in &sc.segs[0].cells {
            let x = sc.grid.geometry().center_linear(c).x;
            assert!(out.viewpoints.iter().any(|v| (v.position.x - x).abs() <= half + 1e-9));
        }
        for v in &out.viewpoints {
            assert!((v.yaw + std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        }
    }

    #[test]
    fn enclosed_segment_yields_warning() {
        // A surface cell facing a one-cell pocket: no standoff position is free.
        let mut g = VoxelGrid::new(Vec3::zeros(), 0.2, [12, 12, 3], CellState::Occupied).unwrap();
        for x in 3..9 {
            g.set([x, 5, 1], CellState::Free);
        }
        let geo = *g.geometry();
        let s = (3..9).map(|x| geo.linear([x, 4, 1])).collect();
        let sc = scene(g, s);
        let cam = CameraModel::default();
        for seg in &sc.segs {
            let out = generate_viewpoints(&ctx(&sc, &cam), seg, 1.5, 0.2);
            assert!(out.viewpoints.is_empty());
            assert!(out.warning.is_some());
        }
    }

    /// Dense-sampling visibility oracle: the straight segment to some facing
    /// face center passes only through Free cells.
    fn oracle_visible(grid: &VoxelGrid, eye: &Vec3, cell: usize) -> bool {
        let geo = grid.geometry();
        let center = geo.center_linear(cell);
        let half = 0.5 * geo.resolution();
        crate::world::grid::FACE_OFFSETS.iter().any(|o| {
            let nrm = Vec3::new(o[0] as f64, o[1] as f64, o[2] as f64);
            let face = center + nrm * half;
            if (eye - face).dot(&nrm) <= 1e-12 {
                return false;
            }
            let len = (face - eye).norm();
            let steps = (len / 0.002).ceil() as usize;
            (0..steps).all(|k| {
                let p = eye + (face - eye) * (k as f64 / steps as f64);
                grid.state_at(&p) == Some(CellState::Free)
            })
        })
    }

    #[test]
    fn single_wall_fully_covered_brute_force() {
        let sc = short_wall();
        let cam = CameraModel::default();
        let params = PlannerParams::default();
        let plan = generate_all(&ctx(&sc, &cam), &sc.segs, &params);
        assert!(plan.uncovered.is_empty());
        // Brute-force frustum, incidence and sampled visibility per cell.
        for &c in &sc.surf.cells {
            let n = sc.surf.normal_of(c).unwrap();
            let center = sc.grid.geometry().center_linear(c);
            let seen = plan.viewpoints.iter().any(|v| {
                cam.registers(&v.position, v.yaw, &center, &n) && oracle_visible(&sc.grid, &v.position, c)
            });
            assert!(seen, "cell {c}");
        }
        for v in &plan.viewpoints {
            for &c in &sc.surf.cells {
                let n = sc.surf.normal_of(c).unwrap();
                let center = sc.grid.geometry().center_linear(c);
                let expect = cam.registers(&v.position, v.yaw, &center, &n) && oracle_visible(&sc.grid, &v.position, c);
                assert_eq!(v.covered.binary_search(&c).is_ok(), expect, "vp {} cell {c}", v.id);
            }
        }
    }

    #[test]
    fn short_range_camera_covers_nothing() {
        let sc = short_wall();
        let cam = CameraModel {
            max_range_m: 1.0,
            ..CameraModel::default()
        };
        let plan = generate_all(&ctx(&sc, &cam), &sc.segs, &PlannerParams::default());
        assert_eq!(plan.uncovered, sc.surf.cells);
    }

    /// L-shaped room corner: walls along x (normal +y) and along y (normal +x).
    fn l_room() -> Scene {
        let mut g = VoxelGrid::new(Vec3::zeros(), 0.2, [30, 30, 10], CellState::Free).unwrap();
        for a in 0..30 {
            for t in 0..2 {
                for z in 0..10 {
                    g.set([a, t, z], CellState::Occupied);
                    g.set([t, a, z], CellState::Occupied);
                }
            }
        }
        let geo = *g.geometry();
        let s: Vec<usize> = (2..30)
            .flat_map(|a| (0..10).flat_map(move |z| [geo.linear([a, 1, z]), geo.linear([1, a, z])]))
            .collect();
        scene(g, s)
    }

    #[test]
    fn densified_pass_never_grows_uncovered_set() {
        let sc = l_room();
        let cam = CameraModel::default();
        let params = PlannerParams::default();
        let plan = generate_all(&ctx(&sc, &cam), &sc.segs, &params);
        let before: BTreeSet<usize> = plan.uncovered_nominal.iter().copied().collect();
        let after: BTreeSet<usize> = plan.uncovered.iter().copied().collect();
        assert!(after.is_subset(&before));
        assert_eq!(after.into_iter().collect::<Vec<_>>(), coverage_closure_check(&plan.viewpoints, &sc.surf.cells));
    }

    #[test]
    fn placement_properties_hold() {
        let sc = l_room();
        let cam = CameraModel::default();
        let params = PlannerParams::default();
        let plan = generate_all(&ctx(&sc, &cam), &sc.segs, &params);
        assert!(!plan.viewpoints.is_empty());
        let geo: &GridGeometry = sc.grid.geometry();
        for v in &plan.viewpoints {
            let seg = &sc.segs[v.segment];
            assert_eq!(sc.grid.state_at(&v.position), Some(CellState::Free));
            assert!(v.yaw >= -std::f64::consts::PI && v.yaw < std::f64::consts::PI);
            assert!(v.covered.iter().all(|c| seg.cells.binary_search(c).is_ok()));
            // Standoff.
            let nearest = seg
                .cells
                .iter()
                .map(|&c| (geo.center_linear(c) - v.position).norm())
                .fold(f64::INFINITY, f64::min);
            assert!((0.8 * 1.5..=2.2 * 1.5).contains(&nearest), "{nearest}");
            // Facing.
            let dir = Vec3::new(v.yaw.cos(), v.yaw.sin(), 0.0);
            let hit = crate::world::raycast(&sc.grid, &v.position, &dir, 50.0).unwrap().unwrap();
            assert!(seg.cells.binary_search(&geo.linear(hit.cell)).is_ok());
        }
        // Rows are collinear.
        let mut rows = std::collections::BTreeMap::<(usize, u8, usize), Vec<Vec3>>::new();
        for v in &plan.viewpoints {
            rows.entry((v.segment, v.pass, v.row)).or_default().push(v.position);
        }
        for pts in rows.values().filter(|p| p.len() >= 3) {
            assert!(rms_line_distance(pts) <= 0.1, "{pts:?}");
        }
    }

    fn rms_line_distance(pts: &[Vec3]) -> f64 {
        let a = pts[0];
        let d = (pts[pts.len() - 1] - a).normalize();
        let s: f64 = pts.iter().map(|p| (p - a - d * (p - a).dot(&d)).norm_squared()).sum();
        (s / pts.len() as f64).sqrt()
    }
}
