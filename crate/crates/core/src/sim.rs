//! Deterministic mission simulator.
//!
//! One clock drives everything: at each tick the controller acts, the plant
//! integrates, dynamic obstacles move, the range sensor updates the online
//! map and the camera records newly scanned surface cells. The online map
//! starts as a copy of the reference map.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::export::{atomic_write, draw_grid_slice, ply_points, SvgCanvas};
use crate::route::{plan_route, LocalSearchSolver, RoutePlan, StageDiagnostic};
use crate::segment::{segment_surfaces, Segment, SurfaceSet};
use crate::traj_mpc::{predict_obstacles, MpcConfig, MpcController, Reference, RobotState};
use crate::traj_static::{plan_leg, BSplineTrajectory};
use crate::view_adapt::{adapt, identify_blocked, occupied_within, AdaptRequest, AdaptationEvent};
use crate::viewpoints::{generate_all, PlacementContext, Viewpoint, ViewpointPlan, ViewpointRecord, ViewpointStatus};
use crate::world::grid::cylinder_cells;
use crate::world::raycast::traverse;
use crate::world::{cell_visible, CameraModel, CellState, DistanceField, Obstacle, Scenario, VoxelGrid};
use crate::{wrap_angle, Error, PlannerParams, Result, Vec3};

/// Output of the global layer.
#[derive(Clone, Debug)]
pub struct GlobalPlan {
    pub surfaces: SurfaceSet,
    pub segments: Vec<Segment>,
    pub viewpoints: ViewpointPlan,
    pub route: RoutePlan,
}

impl GlobalPlan {
    /// Viewpoints in visiting order.
    pub fn sequence(&self) -> Vec<&Viewpoint> {
        self.route.order.iter().map(|&i| &self.viewpoints.viewpoints[i]).collect()
    }
}

/// Segmentation, viewpoint generation and sequencing on the reference map.
pub fn plan_global(scenario: &Scenario) -> Result<GlobalPlan> {
    if scenario.surfaces.is_empty() {
        return Err(Error::Mission("no inspectable surface in the scenario".into()));
    }
    let p = &scenario.params;
    let df = DistanceField::compute(&scenario.reference, p.distance_truncation_m)?;
    let (surfaces, segments) = segment_surfaces(&scenario.reference, &scenario.surfaces, p)?;
    let ctx = PlacementContext {
        reference: &scenario.reference,
        distance: &df,
        surfaces: &surfaces,
        camera: &scenario.camera,
        min_clearance: p.robot_radius_m + p.static_margin_m,
    };
    let viewpoints = generate_all(&ctx, &segments, p);
    if viewpoints.viewpoints.is_empty() {
        return Err(Error::Mission("no feasible viewpoint for any surface segment".into()));
    }
    let points: Vec<Vec3> = viewpoints.viewpoints.iter().map(|v| v.position).collect();
    let seg_of: Vec<usize> = viewpoints.viewpoints.iter().map(|v| v.segment).collect();
    let route = plan_route(&points, &seg_of, &scenario.robot_start.position, p.tau_max, p.merge_mode, &LocalSearchSolver);
    Ok(GlobalPlan {
        surfaces,
        segments,
        viewpoints,
        route,
    })
}

/// Fixed spherical ray bundle of the range sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeSensor {
    pub directions: Vec<Vec3>,
    pub range: f64,
}

impl RangeSensor {
    pub fn new(azimuth: usize, elevation: usize, half_span: f64, range: f64) -> Self {
        let mut directions = Vec::with_capacity(azimuth * elevation);
        for j in 0..elevation {
            let e = if elevation == 1 {
                0.0
            } else {
                -half_span + 2.0 * half_span * j as f64 / (elevation - 1) as f64
            };
            for i in 0..azimuth {
                let a = 2.0 * std::f64::consts::PI * i as f64 / azimuth as f64;
                directions.push(Vec3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin()));
            }
        }
        RangeSensor { directions, range }
    }

    pub fn from_params(p: &PlannerParams) -> Self {
        RangeSensor::new(p.sensor_azimuth_rays, p.sensor_elevation_rays, p.sensor_elevation_half_span_rad, p.sensor_range_m)
    }
}

/// Cells whose state in the online map changed during one sensing pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SenseUpdate {
    pub to_free: Vec<usize>,
    pub to_occupied: Vec<usize>,
}

impl SenseUpdate {
    pub fn is_empty(&self) -> bool {
        self.to_free.is_empty() && self.to_occupied.is_empty()
    }
}

/// Cast the ray bundle through the true world. Cells crossed before a hit
/// become Free and the hit cell becomes Occupied, unless `masked` holds for
/// it (tracked dynamic obstacles stay out of the map).
pub fn sense<O, M>(sensor: &RangeSensor, origin: &Vec3, opaque: O, masked: M, online: &mut VoxelGrid) -> SenseUpdate
where
    O: Fn(usize) -> bool,
    M: Fn(usize) -> bool,
{
    let geo = *online.geometry();
    let mut up = SenseUpdate::default();
    if !geo.contains(origin) {
        return up;
    }
    for dir in &sensor.directions {
        let mut crossed: Vec<usize> = Vec::new();
        let hit = traverse(&geo, origin, dir, sensor.range, |c, _| {
            let i = geo.linear(c);
            if opaque(i) {
                true
            } else {
                crossed.push(i);
                false
            }
        });
        for i in crossed {
            if online.state_linear(i) != CellState::Free {
                online.set_linear(i, CellState::Free);
                up.to_free.push(i);
            }
        }
        if let Some((c, _)) = hit {
            let i = geo.linear(c);
            if !masked(i) && online.state_linear(i) != CellState::Occupied {
                online.set_linear(i, CellState::Occupied);
                up.to_occupied.push(i);
            }
        }
    }
    up.to_free.sort_unstable();
    up.to_free.dedup();
    up.to_occupied.sort_unstable();
    up.to_occupied.dedup();
    up
}

/// Surface cells (indices into `surfaces.cells`) newly scanned from the pose:
/// frustum, range, incidence and a clear line of sight in the true world.
pub fn observe_coverage<O>(eye: &Vec3, yaw: f64, camera: &CameraModel, opaque: O, surfaces: &SurfaceSet, geo: &crate::world::GridGeometry, scanned: &[bool]) -> Vec<usize>
where
    O: Fn(usize) -> bool,
{
    let r2 = camera.max_range_m * camera.max_range_m;
    (0..surfaces.len())
        .filter(|&k| !scanned[k])
        .filter(|&k| {
            let cell = surfaces.cells[k];
            let c = geo.center_linear(cell);
            (c - eye).norm_squared() <= r2
                && camera.registers(eye, yaw, &c, &surfaces.normals[k])
                && cell_visible(geo, eye, geo.unlinear(cell), &opaque)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentCoverage {
    pub segment: usize,
    pub cells: usize,
    pub scanned: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbandonedViewpoint {
    pub id: usize,
    pub status: ViewpointStatus,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub seed: u64,
    pub view_adaptation: bool,
    pub dynamic_obstacles: bool,
    pub coverage_rate: f64,
    pub scanned_cells: usize,
    pub inspectable_cells: usize,
    /// Surface cells no planned viewpoint observes on the reference map.
    pub unplanned_cells: usize,
    pub path_length_m: f64,
    pub mission_time_s: f64,
    /// Smallest distance from the robot center to an occupied true-world cell center.
    pub min_clearance_m: f64,
    pub viewpoints_total: usize,
    pub visited: usize,
    pub blocked: usize,
    pub adapted: usize,
    pub adaptation_events: usize,
    pub abandoned: Vec<AbandonedViewpoint>,
    pub collisions: usize,
    pub replans: usize,
    pub mpc_infeasible_ticks: usize,
    pub planned_sequence: Vec<usize>,
    pub arrival_sequence: Vec<usize>,
    pub per_segment: Vec<SegmentCoverage>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    MissionStart { viewpoints: usize },
    LegPlanned { viewpoint: usize, attempt: usize, duration_s: f64, controls: usize },
    LegFailed { viewpoint: usize, attempt: usize, reason: String },
    Arrived { viewpoint: usize },
    Visited { viewpoint: usize, dwell_s: f64, footprint_scanned: usize, footprint: usize },
    Blocked { viewpoint: usize, reason: String },
    Abandoned { viewpoint: usize, reason: String },
    MapUpdated { to_free: usize, to_occupied: usize },
    Adapted(AdaptationEvent),
    Collision { clearance_m: f64 },
    MissionEnd { coverage_rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Event {
    pub time_s: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Transit,
    Dwell,
    Adapt,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Transit => "transit",
            Mode::Dwell => "dwell",
            Mode::Adapt => "adapt",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TelemetryRow {
    pub time_s: f64,
    pub mode: Mode,
    pub target: Option<usize>,
    pub p: Vec3,
    pub v: Vec3,
    pub yaw: f64,
    pub a: Vec3,
    pub objective: f64,
    pub feasible: bool,
    pub mpc_clearance_m: f64,
    pub true_clearance_m: f64,
    pub scanned: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanRecord {
    pub cell: usize,
    pub time_s: f64,
}

/// Everything a mission produces.
#[derive(Clone, Debug)]
pub struct MissionOutcome {
    pub report: CoverageReport,
    pub plan: GlobalPlan,
    pub viewpoints: Vec<Viewpoint>,
    pub events: Vec<Event>,
    pub telemetry: Vec<TelemetryRow>,
    pub scan_log: Vec<ScanRecord>,
    pub online_map: VoxelGrid,
}

/// Ticks without a feasible MPC solution before a leg is replanned.
const INFEASIBLE_LIMIT: usize = 30;
/// Ticks spent giving way to nearby dynamic obstacles before a leg is replanned.
const YIELD_LIMIT: usize = 300;
/// Distance within which an infeasible solve is attributed to a dynamic obstacle (m).
const YIELD_RADIUS_M: f64 = 3.0;
/// Extra time beyond the trajectory duration before a leg times out (s).
const LEG_SLACK_S: f64 = 15.0;
/// Speed below which the robot counts as settled (m/s).
const SETTLED_SPEED: f64 = 0.15;
/// In-place re-routes allowed per leg when new map content crosses the path.
const MAX_REROUTES: usize = 20;

/// Holds a fixed position at rest.
struct Hold(Vec3);

impl Reference for Hold {
    fn state_at(&self, _t: f64) -> RobotState {
        RobotState::at_rest(self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TickStatus {
    Feasible,
    /// Infeasible with a dynamic obstacle close by.
    Yielding,
    Infeasible,
}

enum LegResult {
    Arrived,
    Blocked,
    Failed(String),
}

struct Mission<'a> {
    sc: &'a Scenario,
    p: &'a PlannerParams,
    plan: GlobalPlan,
    vps: Vec<Viewpoint>,
    block_reason: BTreeMap<usize, String>,
    online: VoxelGrid,
    online_df: DistanceField,
    true_df: DistanceField,
    sensor: RangeSensor,
    mpc: MpcController,
    dynamic: Vec<Obstacle>,
    dyn_cells: Vec<usize>,
    ticks: u64,
    x: RobotState,
    yaw: f64,
    scanned: Vec<bool>,
    scan_log: Vec<ScanRecord>,
    events: Vec<Event>,
    telemetry: Vec<TelemetryRow>,
    path_length: f64,
    min_clearance: f64,
    collisions: usize,
    in_collision: bool,
    replans: usize,
    infeasible_ticks: usize,
    arrivals: Vec<usize>,
    adapted_events: usize,
    map_changed: bool,
}

impl<'a> Mission<'a> {
    fn new(sc: &'a Scenario, plan: GlobalPlan) -> Result<Self> {
        let p = &sc.params;
        let online = sc.reference.clone();
        let online_df = DistanceField::compute(&online, p.distance_truncation_m)?;
        let true_df = DistanceField::compute(&sc.true_world, p.distance_truncation_m)?;
        let mut dynamic = if p.dynamic_obstacles_enabled {
            sc.dynamic_obstacles.clone()
        } else {
            vec![]
        };
        if p.dynamic_phase_jitter_s > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
            for o in &mut dynamic {
                if let Some(m) = o.motion.as_mut() {
                    m.phase_s += rng.gen_range(0.0..p.dynamic_phase_jitter_s);
                }
            }
        }
        let vps = plan.viewpoints.viewpoints.clone();
        let n_surf = plan.surfaces.len();
        let mut m = Mission {
            sc,
            p,
            plan,
            vps,
            block_reason: BTreeMap::new(),
            online,
            online_df,
            true_df,
            sensor: RangeSensor::from_params(p),
            mpc: MpcController::new(MpcConfig::from_params(p)),
            dynamic,
            dyn_cells: vec![],
            ticks: 0,
            x: RobotState::at_rest(sc.robot_start.position),
            yaw: wrap_angle(sc.robot_start.yaw),
            scanned: vec![false; n_surf],
            scan_log: vec![],
            events: vec![],
            telemetry: vec![],
            path_length: 0.0,
            min_clearance: f64::INFINITY,
            collisions: 0,
            in_collision: false,
            replans: 0,
            infeasible_ticks: 0,
            arrivals: vec![],
            adapted_events: 0,
            map_changed: false,
        };
        m.update_dynamic();
        m.check_collision();
        m.perceive()?;
        Ok(m)
    }

    fn clock(&self) -> f64 {
        self.ticks as f64 * self.p.mpc_dt_s
    }

    fn log(&mut self, kind: EventKind) {
        let time_s = self.clock();
        log::debug!("t={time_s:.1} {kind:?}");
        self.events.push(Event { time_s, kind });
    }

    fn update_dynamic(&mut self) {
        let t = self.clock();
        let geo = *self.sc.geometry();
        let mut cells: Vec<usize> = self
            .dynamic
            .iter()
            .flat_map(|o| {
                let s = o.state_at(t);
                cylinder_cells(&geo, s.base, s.radius, s.height)
            })
            .collect();
        cells.sort_unstable();
        cells.dedup();
        self.dyn_cells = cells;
    }

    fn true_clearance(&self, p: &Vec3) -> f64 {
        let geo = self.sc.geometry();
        let cap = self.true_df.truncation();
        let stat = self.true_df.clearance(p, cap);
        self.dyn_cells
            .iter()
            .map(|&i| (geo.center_linear(i) - p).norm())
            .fold(stat, f64::min)
    }

    fn check_collision(&mut self) -> f64 {
        let c = self.true_clearance(&self.x.p);
        self.min_clearance = self.min_clearance.min(c);
        let hit = c < self.p.robot_radius_m;
        if hit && !self.in_collision {
            self.collisions += 1;
            self.log(EventKind::Collision { clearance_m: c });
        }
        self.in_collision = hit;
        c
    }

    /// Range sensing into the online map and camera coverage.
    fn perceive(&mut self) -> Result<()> {
        let truth = &self.sc.true_world;
        let dyn_cells = &self.dyn_cells;
        let opaque = |i: usize| truth.is_occupied_linear(i) || dyn_cells.binary_search(&i).is_ok();
        let masked = |i: usize| dyn_cells.binary_search(&i).is_ok();
        let up = sense(&self.sensor, &self.x.p, opaque, masked, &mut self.online);
        let geo = *self.sc.geometry();
        let new = observe_coverage(&self.x.p, self.yaw, &self.sc.camera, opaque, &self.plan.surfaces, &geo, &self.scanned);
        if !up.is_empty() {
            let (f, o) = (up.to_free.len(), up.to_occupied.len());
            self.online_df = DistanceField::compute(&self.online, self.p.distance_truncation_m)?;
            self.map_changed = true;
            self.log(EventKind::MapUpdated { to_free: f, to_occupied: o });
        }
        let t = self.clock();
        for k in new {
            self.scanned[k] = true;
            self.scan_log.push(ScanRecord {
                cell: self.plan.surfaces.cells[k],
                time_s: t,
            });
        }
        Ok(())
    }

    fn visible_obstacles(&self) -> Vec<Obstacle> {
        let t = self.clock();
        self.dynamic
            .iter()
            .filter(|o| {
                let s = o.state_at(t);
                (s.base.xy() - self.x.p.xy()).norm() <= self.sensor.range
            })
            .cloned()
            .collect()
    }

    /// One control tick toward `reference` at reference time `t_ref`.
    fn tick<R: Reference + ?Sized>(&mut self, reference: &R, t_ref: f64, yaw_target: f64, mode: Mode, target: Option<usize>) -> Result<TickStatus> {
        let cfg = &self.mpc.cfg;
        let preds = predict_obstacles(&self.visible_obstacles(), self.clock(), cfg.horizon, cfg.dt, cfg.dynamic_margin, cfg.growth_per_step);
        let (u, sol) = self.mpc.step(&self.x, reference, t_ref, &self.online_df, &preds);
        let status = if sol.feasible {
            TickStatus::Feasible
        } else if preds
            .iter()
            .any(|p| p.first().is_some_and(|c| c.signed_distance(&self.x.p) < YIELD_RADIUS_M))
        {
            TickStatus::Yielding
        } else {
            TickStatus::Infeasible
        };
        if !sol.feasible {
            self.infeasible_ticks += 1;
        }
        let prev = self.x.p;
        self.x = crate::traj_mpc::predict_dynamics(&self.x, &u, self.p.mpc_dt_s);
        self.path_length += (self.x.p - prev).norm();
        let max_turn = self.p.yaw_rate_rad_s * self.p.mpc_dt_s;
        let dyaw = wrap_angle(yaw_target - self.yaw);
        self.yaw = wrap_angle(self.yaw + dyaw.clamp(-max_turn, max_turn));
        self.ticks += 1;
        self.update_dynamic();
        let clearance = self.check_collision();
        self.perceive()?;
        self.telemetry.push(TelemetryRow {
            time_s: self.clock(),
            mode,
            target,
            p: self.x.p,
            v: self.x.v,
            yaw: self.yaw,
            a: u.a,
            objective: sol.objective,
            feasible: sol.feasible,
            mpc_clearance_m: sol.min_clearance,
            true_clearance_m: clearance,
            scanned: self.scan_log.len(),
        });
        Ok(status)
    }

    fn out_of_time(&self) -> bool {
        self.clock() >= self.p.mission_time_limit_s
    }

    /// Flag Pending viewpoints made unusable by new map content.
    fn refresh_blocked(&mut self) {
        let ids = identify_blocked(&self.online, &self.plan.surfaces.cells, &self.vps, self.p.robot_radius_m, self.sc.camera.max_range_m);
        for id in ids {
            let reason = if occupied_within(&self.online, &self.vps[id].position, self.p.robot_radius_m) {
                "occupied cells within robot radius"
            } else {
                "central ray obstructed"
            };
            self.mark_blocked(id, reason.to_string());
        }
    }

    fn mark_blocked(&mut self, id: usize, reason: String) {
        self.vps[id].status = ViewpointStatus::Blocked;
        self.block_reason.insert(id, reason.clone());
        self.log(EventKind::Blocked { viewpoint: id, reason });
    }

    /// Whether the rest of `traj` from `t` now passes too close to the map.
    fn path_invalid(&self, traj: &BSplineTrajectory, t: f64) -> bool {
        let need = self.p.robot_radius_m;
        let end = traj.duration();
        let mut s = t;
        while s <= end {
            let q = traj.position(s);
            if self.online_df.clearance(&q, need + 0.01) < need {
                return true;
            }
            s += 0.05;
        }
        false
    }

    fn fly_to(&mut self, id: usize, attempt: usize) -> Result<LegResult> {
        let goal = self.vps[id].position;
        let yaw_goal = self.vps[id].yaw;
        let mut reroutes = 0;
        'replan: loop {
            let traj = match plan_leg(&self.online, &self.online_df, &self.x.p, &goal, self.p) {
                Ok((t, _)) => t,
                Err(Error::Unreachable(m)) => return Ok(LegResult::Failed(format!("unreachable: {m}"))),
                Err(Error::Optimization(m)) => return Ok(LegResult::Failed(format!("optimization: {m}"))),
                Err(e) => return Err(e),
            };
            self.log(EventKind::LegPlanned {
                viewpoint: id,
                attempt,
                duration_s: traj.duration(),
                controls: traj.controls.len(),
            });
            self.mpc.reset();
            let mut t_leg = 0.0;
            let mut infeasible = 0;
            let mut yielding = 0;
            let mut slack = LEG_SLACK_S;
            loop {
                if self.out_of_time() {
                    return Ok(LegResult::Failed("mission time limit".into()));
                }
                self.map_changed = false;
                let status = self.tick(&traj, t_leg, yaw_goal, Mode::Transit, Some(id))?;
                t_leg += self.p.mpc_dt_s;
                match status {
                    TickStatus::Feasible => {
                        infeasible = 0;
                        yielding = 0;
                    }
                    TickStatus::Yielding => {
                        yielding += 1;
                        slack += self.p.mpc_dt_s;
                    }
                    TickStatus::Infeasible => infeasible += 1,
                }
                if self.map_changed {
                    self.refresh_blocked();
                    if self.vps[id].status == ViewpointStatus::Blocked {
                        return Ok(LegResult::Blocked);
                    }
                    if self.path_invalid(&traj, t_leg) {
                        reroutes += 1;
                        if reroutes > MAX_REROUTES {
                            return Ok(LegResult::Failed("path repeatedly invalidated by new map content".into()));
                        }
                        continue 'replan;
                    }
                }
                let dist = (self.x.p - goal).norm();
                if dist <= self.p.arrival_tolerance_m && self.x.v.norm() <= SETTLED_SPEED && t_leg >= traj.duration() {
                    return Ok(LegResult::Arrived);
                }
                if yielding >= YIELD_LIMIT {
                    return Ok(LegResult::Failed("dynamic obstacle did not clear".into()));
                }
                if infeasible >= INFEASIBLE_LIMIT {
                    return Ok(LegResult::Failed("no feasible tracking solution".into()));
                }
                if t_leg > traj.duration() + slack {
                    return Ok(LegResult::Failed("leg timed out".into()));
                }
            }
        }
    }

    /// Hold position and turn to `yaw`; stop when the yaw is reached and
    /// `done` holds, or after the dwell timeout.
    fn dwell<F>(&mut self, at: Vec3, yaw: f64, mode: Mode, target: Option<usize>, done: F) -> Result<f64>
    where
        F: Fn(&Self) -> bool,
    {
        let hold = Hold(at);
        self.mpc.reset();
        let start = self.clock();
        loop {
            let turned = wrap_angle(yaw - self.yaw).abs() < 1e-9;
            let elapsed = self.clock() - start;
            if (turned && done(self)) || elapsed >= self.p.dwell_timeout_s || self.out_of_time() {
                return Ok(elapsed);
            }
            self.tick(&hold, 0.0, yaw, mode, target)?;
            if self.map_changed {
                self.map_changed = false;
                self.refresh_blocked();
            }
        }
    }

    fn footprint_scanned(&self, id: usize) -> (usize, usize) {
        let cov = &self.vps[id].covered;
        let n = cov
            .iter()
            .filter(|&&c| self.plan.surfaces.index_of(c).is_some_and(|k| self.scanned[k]))
            .count();
        (n, cov.len())
    }

    fn scanned_set(&self) -> BTreeSet<usize> {
        self.plan
            .surfaces
            .cells
            .iter()
            .zip(&self.scanned)
            .filter(|(_, &s)| s)
            .map(|(&c, _)| c)
            .collect()
    }

    /// Blocked viewpoints awaiting adaptation whose host is `host`. The host
    /// is the nearest remaining stop on the same segment, or the nearest
    /// remaining stop when the segment has none; the current stop counts as
    /// remaining and `None` stands for the current position.
    fn adoptees(&self, host: Option<usize>, remaining: &[usize]) -> Vec<usize> {
        let blocked = self.vps.iter().filter(|v| v.status == ViewpointStatus::Blocked);
        let Some(h) = host else {
            return blocked.map(|v| v.id).collect();
        };
        let pool: Vec<usize> = std::iter::once(h)
            .chain(remaining.iter().copied().filter(|&r| r != h && self.vps[r].status == ViewpointStatus::Pending))
            .collect();
        blocked
            .filter(|b| {
                let same: Vec<usize> = pool.iter().copied().filter(|&r| self.vps[r].segment == b.segment).collect();
                let cands = if same.is_empty() { pool.clone() } else { same };
                let d = |r: usize| (self.vps[r].position - b.position).norm();
                cands.contains(&h) && cands.iter().all(|&r| d(h) <= d(r))
            })
            .map(|v| v.id)
            .collect()
    }

    fn adapt_here(&mut self, host: Option<usize>, blocked: Vec<usize>) -> Result<()> {
        if blocked.is_empty() {
            return Ok(());
        }
        let scanned = self.scanned_set();
        let refs: Vec<&Viewpoint> = blocked.iter().map(|&b| &self.vps[b]).collect();
        let req = AdaptRequest {
            online: &self.online,
            surfaces: &self.plan.surfaces.cells,
            blocked: &refs,
            scanned: &scanned,
            position: self.x.p,
            current_yaw: self.yaw,
            camera: &self.sc.camera,
            weights: [self.p.weight_base, self.p.weight_high, self.p.weight_low],
            angle_step: self.p.view_angle_step_rad,
        };
        let (phi, score, occluded) = adapt(&req)?;
        let mut targets: Vec<usize> = refs
            .iter()
            .flat_map(|v| v.covered.iter().copied())
            .filter_map(|c| self.plan.surfaces.index_of(c))
            .collect();
        targets.sort_unstable();
        targets.dedup();
        for &b in &blocked {
            self.vps[b].status = ViewpointStatus::Adapted;
        }
        self.adapted_events += 1;
        let event = AdaptationEvent {
            time_s: self.clock(),
            host_viewpoint: host.unwrap_or(usize::MAX),
            blocked_viewpoints: blocked,
            occluded_cells: occluded,
            yaw_rad: phi,
            score,
        };
        self.log(EventKind::Adapted(event));
        let at = self.x.p;
        self.dwell(at, phi, Mode::Adapt, host, |m| targets.iter().all(|&k| m.scanned[k]))?;
        Ok(())
    }

    fn run(mut self) -> Result<MissionOutcome> {
        let order = self.plan.route.order.clone();
        self.log(EventKind::MissionStart { viewpoints: order.len() });
        self.refresh_blocked();
        for (pos, &id) in order.iter().enumerate() {
            if self.out_of_time() {
                break;
            }
            if self.vps[id].status != ViewpointStatus::Pending {
                continue;
            }
            let mut attempt = 0;
            let arrived = loop {
                match self.fly_to(id, attempt)? {
                    LegResult::Arrived => break true,
                    LegResult::Blocked => break false,
                    LegResult::Failed(reason) => {
                        self.log(EventKind::LegFailed {
                            viewpoint: id,
                            attempt,
                            reason: reason.clone(),
                        });
                        if attempt >= self.p.max_replans || self.out_of_time() {
                            self.log(EventKind::Abandoned {
                                viewpoint: id,
                                reason: reason.clone(),
                            });
                            self.mark_blocked(id, reason);
                            break false;
                        }
                        attempt += 1;
                        self.replans += 1;
                    }
                }
            };
            let remaining: Vec<usize> = order[pos + 1..].to_vec();
            if !arrived {
                continue;
            }
            self.arrivals.push(id);
            self.log(EventKind::Arrived { viewpoint: id });
            let at = self.vps[id].position;
            let yaw = self.vps[id].yaw;
            let dwell_s = self.dwell(at, yaw, Mode::Dwell, Some(id), |m| {
                let (a, b) = m.footprint_scanned(id);
                a == b
            })?;
            self.vps[id].status = ViewpointStatus::Visited;
            let (scanned, footprint) = self.footprint_scanned(id);
            self.log(EventKind::Visited {
                viewpoint: id,
                dwell_s,
                footprint_scanned: scanned,
                footprint,
            });
            if self.p.view_adaptation {
                let adopt = self.adoptees(Some(id), &remaining);
                self.adapt_here(Some(id), adopt)?;
            }
        }
        if self.p.view_adaptation && !self.out_of_time() {
            let left = self.adoptees(None, &[]);
            self.adapt_here(None, left)?;
        }
        Ok(self.finish())
    }

    fn finish(mut self) -> MissionOutcome {
        let total = self.plan.surfaces.len();
        let scanned = self.scanned.iter().filter(|&&s| s).count();
        let coverage_rate = if total == 0 { 0.0 } else { scanned as f64 / total as f64 };
        self.log(EventKind::MissionEnd { coverage_rate });
        let per_segment = self
            .plan
            .segments
            .iter()
            .map(|s| {
                let n = s
                    .cells
                    .iter()
                    .filter(|&&c| self.plan.surfaces.index_of(c).is_some_and(|k| self.scanned[k]))
                    .count();
                SegmentCoverage {
                    segment: s.id,
                    cells: s.cells.len(),
                    scanned: n,
                    fraction: if s.cells.is_empty() { 0.0 } else { n as f64 / s.cells.len() as f64 },
                }
            })
            .collect();
        let arrived: BTreeSet<usize> = self.arrivals.iter().copied().collect();
        let abandoned = self
            .plan
            .route
            .order
            .iter()
            .filter(|id| !arrived.contains(id))
            .map(|&id| AbandonedViewpoint {
                id,
                status: self.vps[id].status,
                reason: self
                    .block_reason
                    .get(&id)
                    .cloned()
                    .unwrap_or_else(|| "mission time limit".into()),
            })
            .collect();
        let count = |s: ViewpointStatus| self.vps.iter().filter(|v| v.status == s).count();
        let report = CoverageReport {
            seed: self.sc.seed,
            view_adaptation: self.p.view_adaptation,
            dynamic_obstacles: self.p.dynamic_obstacles_enabled,
            coverage_rate,
            scanned_cells: scanned,
            inspectable_cells: total,
            unplanned_cells: self.plan.viewpoints.uncovered.len(),
            path_length_m: self.path_length,
            mission_time_s: self.clock(),
            min_clearance_m: self.min_clearance,
            viewpoints_total: self.vps.len(),
            visited: count(ViewpointStatus::Visited),
            blocked: count(ViewpointStatus::Blocked),
            adapted: count(ViewpointStatus::Adapted),
            adaptation_events: self.adapted_events,
            abandoned,
            collisions: self.collisions,
            replans: self.replans,
            mpc_infeasible_ticks: self.infeasible_ticks,
            planned_sequence: self.plan.route.order.clone(),
            arrival_sequence: self.arrivals.clone(),
            per_segment,
        };
        MissionOutcome {
            report,
            plan: self.plan,
            viewpoints: self.vps,
            events: self.events,
            telemetry: self.telemetry,
            scan_log: self.scan_log,
            online_map: self.online,
        }
    }
}

/// Plan globally, then fly the mission to completion.
pub fn run_mission(scenario: &Scenario) -> Result<MissionOutcome> {
    let plan = plan_global(scenario)?;
    run_mission_with_plan(scenario, plan)
}

/// Fly a mission along an existing global plan.
pub fn run_mission_with_plan(scenario: &Scenario, plan: GlobalPlan) -> Result<MissionOutcome> {
    if plan.viewpoints.viewpoints.is_empty() {
        return Err(Error::Mission("plan has no viewpoints".into()));
    }
    Mission::new(scenario, plan)?.run()
}

/// Coverage recomputed from the scan log alone.
pub fn coverage_from_log(scan_log: &[ScanRecord], inspectable: usize) -> f64 {
    let cells: BTreeSet<usize> = scan_log.iter().map(|r| r.cell).collect();
    if inspectable == 0 {
        0.0
    } else {
        cells.len() as f64 / inspectable as f64
    }
}

#[derive(Serialize)]
struct PlanFile<'a> {
    viewpoints: Vec<ViewpointRecord>,
    sequence: &'a [usize],
    clusters: Vec<Vec<usize>>,
    diagnostics: &'a [StageDiagnostic],
    segments: usize,
    surface_cells: usize,
    uncovered_cells: usize,
    dropped: usize,
    warnings: Vec<String>,
}

/// Plan as pretty JSON.
pub fn plan_json(plan: &GlobalPlan) -> Result<String> {
    let file = PlanFile {
        viewpoints: plan.viewpoints.viewpoints.iter().map(ViewpointRecord::from).collect(),
        sequence: &plan.route.order,
        clusters: plan.route.clusters.iter().map(|c| c.members.clone()).collect(),
        diagnostics: &plan.route.diagnostics,
        segments: plan.segments.len(),
        surface_cells: plan.surfaces.len(),
        uncovered_cells: plan.viewpoints.uncovered.len(),
        dropped: plan.viewpoints.dropped.len(),
        warnings: plan.viewpoints.warnings.iter().map(|w| format!("segment {}: {}", w.segment, w.message)).collect(),
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

/// Top-down figure: occupied map at the camera height, viewpoints, route and
/// (when given) the flown path.
pub fn svg_figure(scenario: &Scenario, plan: &GlobalPlan, flown: Option<&[Vec3]>, online: Option<&VoxelGrid>) -> String {
    let geo = scenario.geometry();
    let (lo, hi) = geo.bounds();
    let mut c = SvgCanvas::new(lo, hi, 40.0);
    let z = geo.cell_of(&scenario.robot_start.position).map_or(geo.dims()[2] / 2, |c| c[2]);
    draw_grid_slice(&mut c, &scenario.true_world, z, "#d9c8a0");
    draw_grid_slice(&mut c, &scenario.reference, z, "#555555");
    if let Some(m) = online {
        let mut extra = m.clone();
        for i in 0..extra.len() {
            if scenario.reference.is_occupied_linear(i) {
                extra.set_linear(i, CellState::Free);
            }
        }
        draw_grid_slice(&mut c, &extra, z, "#c0392b");
    }
    let seq: Vec<Vec3> = std::iter::once(scenario.robot_start.position)
        .chain(plan.sequence().iter().map(|v| v.position))
        .collect();
    c.polyline(&seq, "#2e86de", 1.5);
    if let Some(path) = flown {
        c.polyline(path, "#27ae60", 1.0);
    }
    for v in plan.sequence() {
        c.circle(&v.position, 0.12, "#2e86de", "none");
        let tip = v.position + Vec3::new(v.yaw.cos(), v.yaw.sin(), 0.0) * 0.35;
        c.line(&v.position, &tip, "#1b4f72", 1.0);
    }
    c.circle(&scenario.robot_start.position, 0.18, "#f39c12", "#000000");
    c.finish()
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

/// Per-tick telemetry as CSV.
pub fn telemetry_csv(rows: &[TelemetryRow]) -> String {
    let mut s = String::from("time_s,mode,target,x,y,z,vx,vy,vz,yaw,ax,ay,az,objective,feasible,mpc_clearance_m,true_clearance_m,scanned\n");
    for r in rows {
        let target = r.target.map_or(String::new(), |t| t.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f(r.time_s),
            r.mode.as_str(),
            target,
            fmt_f(r.p.x),
            fmt_f(r.p.y),
            fmt_f(r.p.z),
            fmt_f(r.v.x),
            fmt_f(r.v.y),
            fmt_f(r.v.z),
            fmt_f(r.yaw),
            fmt_f(r.a.x),
            fmt_f(r.a.y),
            fmt_f(r.a.z),
            fmt_f(r.objective),
            r.feasible,
            fmt_f(r.mpc_clearance_m),
            fmt_f(r.true_clearance_m),
            r.scanned
        );
    }
    s
}

/// Events as JSON lines.
pub fn events_jsonl(events: &[Event]) -> Result<String> {
    let mut s = String::new();
    for e in events {
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    Ok(s)
}

/// Surface cells tagged with first-scan time (-1 when never scanned).
pub fn coverage_ply(outcome: &MissionOutcome) -> String {
    let geo = outcome.online_map.geometry();
    let first: BTreeMap<usize, f64> = outcome.scan_log.iter().map(|r| (r.cell, r.time_s)).collect();
    let pts: Vec<(Vec3, f64)> = outcome
        .plan
        .surfaces
        .cells
        .iter()
        .map(|&c| (geo.center_linear(c), first.get(&c).copied().unwrap_or(-1.0)))
        .collect();
    ply_points(&pts, "scan_time")
}

/// Which artifacts to write.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutputToggles {
    pub svg: bool,
    pub ply: bool,
    pub csv: bool,
}

impl Default for OutputToggles {
    fn default() -> Self {
        OutputToggles {
            svg: true,
            ply: true,
            csv: true,
        }
    }
}

/// Write report, events, plan and the toggled artifacts into `dir`.
pub fn write_outputs(scenario: &Scenario, outcome: &MissionOutcome, dir: &Path, toggles: OutputToggles) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    atomic_write(&dir.join("report.json"), (serde_json::to_string_pretty(&outcome.report)? + "\n").as_bytes())?;
    atomic_write(&dir.join("events.jsonl"), events_jsonl(&outcome.events)?.as_bytes())?;
    atomic_write(&dir.join("plan.json"), plan_json(&outcome.plan)?.as_bytes())?;
    if toggles.csv {
        atomic_write(&dir.join("telemetry.csv"), telemetry_csv(&outcome.telemetry).as_bytes())?;
    }
    if toggles.ply {
        atomic_write(&dir.join("coverage.ply"), coverage_ply(outcome).as_bytes())?;
    }
    if toggles.svg {
        let path: Vec<Vec3> = std::iter::once(scenario.robot_start.position)
            .chain(outcome.telemetry.iter().map(|r| r.p))
            .collect();
        let svg = svg_figure(scenario, &outcome.plan, Some(&path), Some(&outcome.online_map));
        atomic_write(&dir.join("mission.svg"), svg.as_bytes())?;
    }
    Ok(())
}
