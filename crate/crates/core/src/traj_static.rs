//! Reference trajectories: guide path search, clamped uniform B-splines and
//! gradient-based refinement of the interior control points.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::world::{CellState, DistanceField, GridGeometry, VoxelGrid};
use crate::{Error, PlannerParams, Result, Vec3};

/// Clamped B-spline of polynomial degree `order` with uniform interior knot
/// spacing `dt`. The first and last `order - 1` control points are fixed,
/// which pins the curve ends to them with zero end velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct BSplineTrajectory {
    pub order: usize,
    pub dt: f64,
    pub controls: Vec<Vec3>,
}

/// Position, velocity and acceleration at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
}

fn clamped_knots(n: usize, degree: usize, dt: f64) -> Vec<f64> {
    let spans = n - degree;
    let mut k = vec![0.0; degree + 1];
    k.extend((1..spans).map(|i| i as f64 * dt));
    k.extend(std::iter::repeat_n(spans as f64 * dt, degree + 1));
    k
}

/// Evaluate a B-spline with arbitrary knots by De Boor's algorithm.
fn de_boor(degree: usize, knots: &[f64], ctrl: &[Vec3], t: f64) -> Vec3 {
    let n = ctrl.len();
    if degree == 0 {
        let span = find_span(knots, n, 0, t);
        return ctrl[span];
    }
    let span = find_span(knots, n, degree, t);
    let mut d: Vec<Vec3> = (0..=degree).map(|j| ctrl[span - degree + j]).collect();
    for r in 1..=degree {
        for j in (r..=degree).rev() {
            let i = span - degree + j;
            let denom = knots[i + degree + 1 - r] - knots[i];
            let alpha = if denom.abs() < 1e-300 { 0.0 } else { (t - knots[i]) / denom };
            d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
        }
    }
    d[degree]
}

/// Knot span index `i` with `knots[i] <= t < knots[i + 1]`, clamped so the
/// right domain end belongs to the last non-empty span.
fn find_span(knots: &[f64], n: usize, degree: usize, t: f64) -> usize {
    let lo = degree;
    let hi = n - 1;
    if t >= knots[hi + 1] {
        return hi;
    }
    if t <= knots[lo] {
        return lo;
    }
    let mut span = lo;
    while span < hi && knots[span + 1] <= t {
        span += 1;
    }
    span
}

/// Derivative control points and knots of a B-spline.
fn derivative(degree: usize, knots: &[f64], ctrl: &[Vec3]) -> (Vec<f64>, Vec<Vec3>) {
    let q = (0..ctrl.len() - 1)
        .map(|i| {
            let denom = knots[i + degree + 1] - knots[i + 1];
            if denom.abs() < 1e-300 {
                Vec3::zeros()
            } else {
                (ctrl[i + 1] - ctrl[i]) * (degree as f64 / denom)
            }
        })
        .collect();
    (knots[1..knots.len() - 1].to_vec(), q)
}

impl BSplineTrajectory {
    pub fn new(order: usize, dt: f64, controls: Vec<Vec3>) -> Result<Self> {
        if order < 2 {
            return Err(Error::Domain(format!("B-spline degree must be >= 2, got {order}")));
        }
        if !(dt > 0.0) {
            return Err(Error::Domain("B-spline knot interval must be > 0".into()));
        }
        if controls.len() < 2 * order {
            return Err(Error::Domain(format!(
                "need at least {} control points, got {}",
                2 * order,
                controls.len()
            )));
        }
        Ok(BSplineTrajectory { order, dt, controls })
    }

    /// Number of fixed control points at each end.
    pub fn fixed(&self) -> usize {
        self.order - 1
    }

    /// Range of optimized control point indices.
    pub fn interior(&self) -> std::ops::Range<usize> {
        self.fixed()..self.controls.len() - self.fixed()
    }

    pub fn duration(&self) -> f64 {
        (self.controls.len() - self.order) as f64 * self.dt
    }

    pub fn knots(&self) -> Vec<f64> {
        clamped_knots(self.controls.len(), self.order, self.dt)
    }

    pub fn start(&self) -> Vec3 {
        self.controls[0]
    }

    pub fn goal(&self) -> Vec3 {
        self.controls[self.controls.len() - 1]
    }

    pub fn position(&self, t: f64) -> Vec3 {
        let t = t.clamp(0.0, self.duration());
        de_boor(self.order, &self.knots(), &self.controls, t)
    }

    /// Position and first two derivatives; `t` is clamped to the domain.
    pub fn sample(&self, t: f64) -> Sample {
        let t = t.clamp(0.0, self.duration());
        let k0 = self.knots();
        let p = de_boor(self.order, &k0, &self.controls, t);
        let (k1, c1) = derivative(self.order, &k0, &self.controls);
        let v = de_boor(self.order - 1, &k1, &c1, t);
        let (k2, c2) = derivative(self.order - 1, &k1, &c1);
        let a = de_boor(self.order - 2, &k2, &c2, t);
        Sample { p, v, a }
    }

    /// Positions at `hz` samples per second, end inclusive.
    pub fn sampled(&self, hz: f64) -> Vec<(f64, Vec3)> {
        let t_end = self.duration();
        let n = (t_end * hz).ceil().max(1.0) as usize;
        (0..=n)
            .map(|i| {
                let t = (i as f64 / hz).min(t_end);
                (t, self.position(t))
            })
            .collect()
    }

    /// Control points `span - order ..= span` active at `t`.
    pub fn active_controls(&self, t: f64) -> std::ops::RangeInclusive<usize> {
        let span = find_span(&self.knots(), self.controls.len(), self.order, t.clamp(0.0, self.duration()));
        span - self.order..=span
    }
}

/// Weights of the refinement cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostWeights {
    pub alpha_control: f64,
    pub alpha_smooth: f64,
    pub alpha_static: f64,
    /// Clearance below which control points are penalized (m).
    pub d_safe: f64,
}

impl CostWeights {
    pub fn from_params(p: &PlannerParams) -> Self {
        CostWeights {
            alpha_control: p.alpha_control,
            alpha_smooth: p.alpha_smooth,
            alpha_static: p.alpha_static,
            d_safe: p.d_safe_m,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostTerm {
    Control,
    Smooth,
    Static,
}

/// Unweighted value of one term over all control points.
pub fn term_value(term: CostTerm, ctrl: &[Vec3], dt: f64, d_safe: f64, df: &DistanceField) -> f64 {
    match term {
        CostTerm::Control => {
            let s = dt.powi(4);
            ctrl.windows(3)
                .map(|w| (w[2] - 2.0 * w[1] + w[0]).norm_squared())
                .sum::<f64>()
                / s
        }
        CostTerm::Smooth => {
            let s = dt.powi(6);
            ctrl.windows(4)
                .map(|w| (w[3] - 3.0 * w[2] + 3.0 * w[1] - w[0]).norm_squared())
                .sum::<f64>()
                / s
        }
        CostTerm::Static => ctrl
            .iter()
            .map(|p| {
                let h = (d_safe - df.interpolate(p)).max(0.0);
                h * h
            })
            .sum(),
    }
}

/// Gradient of one unweighted term with respect to every control point.
pub fn term_gradient(term: CostTerm, ctrl: &[Vec3], dt: f64, d_safe: f64, df: &DistanceField) -> Vec<Vec3> {
    let mut g = vec![Vec3::zeros(); ctrl.len()];
    match term {
        CostTerm::Control => {
            let s = 2.0 / dt.powi(4);
            for i in 0..ctrl.len().saturating_sub(2) {
                let r = (ctrl[i + 2] - 2.0 * ctrl[i + 1] + ctrl[i]) * s;
                g[i] += r;
                g[i + 1] -= 2.0 * r;
                g[i + 2] += r;
            }
        }
        CostTerm::Smooth => {
            let s = 2.0 / dt.powi(6);
            for i in 0..ctrl.len().saturating_sub(3) {
                let r = (ctrl[i + 3] - 3.0 * ctrl[i + 2] + 3.0 * ctrl[i + 1] - ctrl[i]) * s;
                g[i] -= r;
                g[i + 1] += 3.0 * r;
                g[i + 2] -= 3.0 * r;
                g[i + 3] += r;
            }
        }
        CostTerm::Static => {
            for (i, p) in ctrl.iter().enumerate() {
                let (d, grad) = df.interpolate_with_gradient(p);
                let h = d_safe - d;
                if h > 0.0 {
                    g[i] = -2.0 * h * grad;
                }
            }
        }
    }
    g
}

/// Weighted total cost.
pub fn total_cost(ctrl: &[Vec3], dt: f64, w: &CostWeights, df: &DistanceField) -> f64 {
    w.alpha_control * term_value(CostTerm::Control, ctrl, dt, w.d_safe, df)
        + w.alpha_smooth * term_value(CostTerm::Smooth, ctrl, dt, w.d_safe, df)
        + w.alpha_static * term_value(CostTerm::Static, ctrl, dt, w.d_safe, df)
}

/// Weighted gradient restricted to the free (interior) control points.
pub fn total_gradient(ctrl: &[Vec3], fixed: usize, dt: f64, w: &CostWeights, df: &DistanceField) -> Vec<Vec3> {
    let gc = term_gradient(CostTerm::Control, ctrl, dt, w.d_safe, df);
    let gs = term_gradient(CostTerm::Smooth, ctrl, dt, w.d_safe, df);
    let gt = term_gradient(CostTerm::Static, ctrl, dt, w.d_safe, df);
    let n = ctrl.len();
    (0..n)
        .map(|i| {
            if i < fixed || i >= n - fixed {
                Vec3::zeros()
            } else {
                gc[i] * w.alpha_control + gs[i] * w.alpha_smooth + gt[i] * w.alpha_static
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeReport {
    /// Cost at the start and after every accepted iteration.
    pub costs: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO_C: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn clamp_into(geo: &GridGeometry, p: &Vec3) -> Vec3 {
    let (lo, hi) = geo.bounds();
    let m = 0.5 * geo.resolution();
    Vec3::new(
        p.x.clamp(lo.x + m, hi.x - m),
        p.y.clamp(lo.y + m, hi.y - m),
        p.z.clamp(lo.z + m, hi.z - m),
    )
}

/// Gradient descent with Armijo backtracking over the interior control points.
pub fn optimize(
    traj: &BSplineTrajectory,
    w: &CostWeights,
    df: &DistanceField,
    max_iters: usize,
) -> Result<(BSplineTrajectory, OptimizeReport)> {
    let fixed = traj.fixed();
    let mut ctrl = traj.controls.clone();
    let mut cost = total_cost(&ctrl, traj.dt, w, df);
    if !cost.is_finite() {
        let range = traj.interior();
        for p in &mut ctrl[range] {
            *p = clamp_into(df.geometry(), p);
        }
        cost = total_cost(&ctrl, traj.dt, w, df);
        if !cost.is_finite() {
            return Err(Error::Optimization("trajectory cost is not finite".into()));
        }
    }
    let mut report = OptimizeReport {
        costs: vec![cost],
        iterations: 0,
        converged: false,
    };
    let mut step = 1.0;
    for _ in 0..max_iters {
        let g = total_gradient(&ctrl, fixed, traj.dt, w, df);
        let gmax = g.iter().map(|v| v.amax()).fold(0.0, f64::max);
        if gmax < GRAD_TOL {
            report.converged = true;
            break;
        }
        let g2: f64 = g.iter().map(|v| v.norm_squared()).sum();
        let mut accepted = false;
        step *= 2.0;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<Vec3> = ctrl.iter().zip(&g).map(|(p, gi)| p - gi * step).collect();
            let c = total_cost(&trial, traj.dt, w, df);
            if c.is_finite() && c <= cost - ARMIJO_C * step * g2 {
                ctrl = trial;
                cost = c;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        report.iterations += 1;
        report.costs.push(cost);
    }
    // Fixed points are carried through untouched.
    let mut out = traj.clone();
    out.controls[traj.interior()].copy_from_slice(&ctrl[traj.interior()]);
    Ok((out, report))
}

/// Control point count for a path of `length` at reference speed `v_ref`.
pub fn control_count(length: f64, order: usize, dt: f64, v_ref: f64) -> usize {
    let n = (length / (v_ref * dt)).ceil() as usize + 2 * (order - 1);
    n.max(2 * order)
}

fn polyline_length(poly: &[Vec3]) -> f64 {
    poly.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

fn point_at_arclength(poly: &[Vec3], s: f64) -> Vec3 {
    let mut rem = s;
    for w in poly.windows(2) {
        let len = (w[1] - w[0]).norm();
        if rem <= len {
            return if len > 0.0 { w[0] + (w[1] - w[0]) * (rem / len) } else { w[0] };
        }
        rem -= len;
    }
    poly[poly.len() - 1]
}

/// Seed a trajectory from a polyline: clamped ends at the polyline endpoints,
/// interior controls at uniform arc-length samples.
pub fn fit_initial_controls(poly: &[Vec3], order: usize, dt: f64, v_ref: f64) -> Result<BSplineTrajectory> {
    if poly.is_empty() {
        return Err(Error::Domain("empty guide polyline".into()));
    }
    let len = polyline_length(poly);
    let n = control_count(len, order, dt, v_ref);
    let fixed = order - 1;
    let m = n - 2 * fixed;
    let start = poly[0];
    let goal = poly[poly.len() - 1];
    let mut ctrl = vec![start; fixed];
    ctrl.extend((0..m).map(|j| point_at_arclength(poly, len * (j + 1) as f64 / (m + 1) as f64)));
    ctrl.extend(std::iter::repeat_n(goal, fixed));
    BSplineTrajectory::new(order, dt, ctrl)
}

#[derive(Copy, Clone, PartialEq)]
struct Open {
    f: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Clearance settings for guide path search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuideClearance {
    /// Cells closer than this to an occupied center are never entered.
    pub hard: f64,
    /// Cells closer than this cost extra.
    pub soft: f64,
}

const SOFT_PENALTY: f64 = 4.0;

/// Shortest 26-connected path over Free cells with clearance at least
/// `clear.hard` (start and goal cells exempt), shortcut by line of sight.
pub fn init_guide_path(
    grid: &VoxelGrid,
    df: &DistanceField,
    start: &Vec3,
    goal: &Vec3,
    clear: GuideClearance,
) -> Result<Vec<Vec3>> {
    let geo = grid.geometry();
    let s = geo
        .cell_of(start)
        .ok_or_else(|| Error::Unreachable("start lies outside the grid".into()))?;
    let g = geo
        .cell_of(goal)
        .ok_or_else(|| Error::Unreachable("goal lies outside the grid".into()))?;
    let si = geo.linear(s);
    let gi = geo.linear(g);
    if si == gi {
        return Ok(vec![*start, *goal]);
    }
    if grid.state(g) != CellState::Free {
        return Err(Error::Unreachable("goal cell is not free".into()));
    }
    let passable = |i: usize| {
        i == si || i == gi || (grid.state_linear(i) == CellState::Free && df.at_linear(i) >= clear.hard - 1e-9)
    };
    let goal_c = geo.center(g);
    let h = |i: usize| (geo.center_linear(i) - goal_c).norm();
    let mut cost = vec![f64::INFINITY; grid.len()];
    let mut parent = vec![usize::MAX; grid.len()];
    let mut closed = vec![false; grid.len()];
    let mut open = BinaryHeap::new();
    cost[si] = 0.0;
    open.push(Open { f: h(si), idx: si });
    while let Some(Open { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        if idx == gi {
            break;
        }
        closed[idx] = true;
        let c = geo.unlinear(idx);
        let pc = geo.center(c);
        for nb in geo.neighbors26(c) {
            let j = geo.linear(nb);
            if closed[j] || !passable(j) {
                continue;
            }
            let step = (geo.center(nb) - pc).norm();
            let deficit = if j == gi { 0.0 } else { (clear.soft - df.at_linear(j)).max(0.0) };
            let nc = cost[idx] + step * (1.0 + SOFT_PENALTY * deficit / clear.soft.max(1e-9));
            if nc < cost[j] {
                cost[j] = nc;
                parent[j] = idx;
                open.push(Open { f: nc + h(j), idx: j });
            }
        }
    }
    if parent[gi] == usize::MAX {
        return Err(Error::Unreachable(format!(
            "no free path from ({:.2}, {:.2}, {:.2}) to ({:.2}, {:.2}, {:.2})",
            start.x, start.y, start.z, goal.x, goal.y, goal.z
        )));
    }
    let mut cells = vec![gi];
    let mut cur = gi;
    while cur != si {
        cur = parent[cur];
        cells.push(cur);
    }
    cells.reverse();
    let mut pts: Vec<Vec3> = cells.iter().map(|&i| geo.center_linear(i)).collect();
    pts[0] = *start;
    let last = pts.len() - 1;
    pts[last] = *goal;
    let interior_min = cells[1..cells.len() - 1]
        .iter()
        .map(|&i| df.at_linear(i))
        .fold(f64::INFINITY, f64::min);
    let floor = interior_min.min(clear.soft);
    Ok(shortcut(grid, df, &pts, floor))
}

/// Lowest clearance (cell values) along a straight segment, sampled finely.
fn segment_clearance(grid: &VoxelGrid, df: &DistanceField, a: &Vec3, b: &Vec3) -> f64 {
    let geo = grid.geometry();
    let len = (b - a).norm();
    let n = ((len / (0.25 * geo.resolution())).ceil() as usize).max(1);
    let mut m = f64::INFINITY;
    for k in 0..=n {
        let p = a + (b - a) * (k as f64 / n as f64);
        match geo.cell_of(&p) {
            Some(c) if grid.state(c) == CellState::Free => m = m.min(df.at(c)),
            _ => return f64::NEG_INFINITY,
        }
    }
    m
}

/// Greedy line-of-sight shortcutting that never lowers clearance below
/// `floor` except where an endpoint already sits lower.
fn shortcut(grid: &VoxelGrid, df: &DistanceField, pts: &[Vec3], floor: f64) -> Vec<Vec3> {
    let geo = grid.geometry();
    let cell_clear = |p: &Vec3| geo.cell_of(p).map_or(0.0, |c| df.at(c));
    let mut out = vec![pts[0]];
    let mut i = 0;
    while i < pts.len() - 1 {
        let mut j = pts.len() - 1;
        while j > i + 1 {
            let need = floor.min(cell_clear(&pts[i])).min(cell_clear(&pts[j])) - 1e-9;
            if segment_clearance(grid, df, &pts[i], &pts[j]) >= need {
                break;
            }
            j -= 1;
        }
        out.push(pts[j]);
        i = j;
    }
    out
}

/// Guide path, seeding and refinement for one leg.
pub fn plan_leg(
    grid: &VoxelGrid,
    df: &DistanceField,
    start: &Vec3,
    goal: &Vec3,
    params: &PlannerParams,
) -> Result<(BSplineTrajectory, OptimizeReport)> {
    let clear = GuideClearance {
        hard: params.robot_radius_m,
        soft: params.robot_radius_m + params.static_margin_m,
    };
    let poly = init_guide_path(grid, df, start, goal, clear)?;
    let init = fit_initial_controls(&poly, params.bspline_order, params.bspline_dt_s, params.v_ref_mps)?;
    optimize(&init, &CostWeights::from_params(params), df, params.opt_max_iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corridor() -> VoxelGrid {
        let mut g = VoxelGrid::new(Vec3::zeros(), 0.2, [50, 15, 10], CellState::Free).unwrap();
        for x in 0..50 {
            for z in 0..10 {
                g.set([x, 0, z], CellState::Occupied);
                g.set([x, 14, z], CellState::Occupied);
            }
        }
        g
    }

    fn straight(order: usize) -> BSplineTrajectory {
        let poly = vec![Vec3::new(1.0, 1.5, 1.0), Vec3::new(8.0, 1.5, 1.0)];
        fit_initial_controls(&poly, order, 0.5, 1.0).unwrap()
    }

    #[test]
    fn clamped_endpoints_and_zero_end_velocity() {
        let t = straight(3);
        let s0 = t.sample(0.0);
        let s1 = t.sample(t.duration());
        assert!((s0.p - t.start()).norm() < 1e-9);
        assert!((s1.p - t.goal()).norm() < 1e-9);
        assert!(s0.v.norm() < 1e-12 && s1.v.norm() < 1e-12);
        // Out-of-domain times clamp.
        assert_eq!(t.sample(-1.0).p, s0.p);
        assert_eq!(t.sample(1e3).p, s1.p);
    }

    #[test]
    fn control_count_rule() {
        assert_eq!(control_count(7.0, 3, 0.5, 1.0), 14 + 4);
        assert_eq!(control_count(0.1, 3, 0.5, 1.0), 6);
    }

    #[test]
    fn straight_segment_controls_collinear() {
        let t = straight(3);
        for p in &t.controls {
            assert!((p.y - 1.5).abs() < 1e-12 && (p.z - 1.0).abs() < 1e-12);
        }
        let len: f64 = t.sampled(200.0).windows(2).map(|w| (w[1].1 - w[0].1).norm()).sum();
        assert!(len >= 7.0 - 1e-9);
    }

    #[test]
    fn constant_controls_have_zero_velocity() {
        let t = BSplineTrajectory::new(3, 0.5, vec![Vec3::new(1.0, 2.0, 3.0); 8]).unwrap();
        for i in 0..20 {
            let s = t.sample(i as f64 * 0.1);
            assert!(s.v.norm() < 1e-12 && s.a.norm() < 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for order in [2usize, 3, 4] {
            let ctrl: Vec<Vec3> = (0..10)
                .map(|_| Vec3::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), rng.gen_range(0.0..2.0)))
                .collect();
            let t = BSplineTrajectory::new(order, 0.5, ctrl).unwrap();
            let h = 1e-6;
            for i in 1..40 {
                let tt = t.duration() * i as f64 / 40.0 + 1.3e-3;
                let s = t.sample(tt);
                let fd = (t.position(tt + h) - t.position(tt - h)) / (2.0 * h);
                assert!((fd - s.v).norm() <= 1e-5 * s.v.norm().max(1.0), "order {order}: {fd:?} vs {:?}", s.v);
                let fa = (t.sample(tt + h).v - t.sample(tt - h).v) / (2.0 * h);
                if order >= 3 {
                    assert!((fa - s.a).norm() <= 1e-4 * s.a.norm().max(1.0));
                }
            }
        }
    }

    /// Independent Cox-de Boor basis functions.
    fn basis(knots: &[f64], i: usize, p: usize, t: f64) -> f64 {
        if p == 0 {
            let last = knots[knots.len() - 1];
            let inside = knots[i] <= t && t < knots[i + 1];
            let at_end = t == last && knots[i] < knots[i + 1] && knots[i + 1] == last;
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (t - knots[i]) / d1 * basis(knots, i, p - 1, t);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - t) / d2 * basis(knots, i + 1, p - 1, t);
        }
        v
    }

    #[test]
    fn samples_lie_in_convex_hull_of_active_controls() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ctrl: Vec<Vec3> = (0..12)
            .map(|_| Vec3::new(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), rng.gen_range(0.0..2.0)))
            .collect();
        let t = BSplineTrajectory::new(3, 0.5, ctrl).unwrap();
        let knots = t.knots();
        for _ in 0..200 {
            let tt = rng.gen_range(0.0..=t.duration());
            let active = t.active_controls(tt);
            let weights: Vec<f64> = active.clone().map(|i| basis(&knots, i, 3, tt)).collect();
            assert!(weights.iter().all(|&w| w >= -1e-12));
            assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let recon = active.zip(&weights).fold(Vec3::zeros(), |a, (i, w)| a + t.controls[i] * *w);
            assert!((recon - t.position(tt)).norm() < 1e-9);
        }
    }

    /// Distance field around a single occupied block in free space.
    fn block_field() -> DistanceField {
        let mut g = VoxelGrid::new(Vec3::zeros(), 0.2, [30, 20, 10], CellState::Free).unwrap();
        g.fill_box(Vec3::new(2.8, 1.8, 0.0), Vec3::new(3.2, 2.2, 2.0), CellState::Occupied);
        DistanceField::compute(&g, 2.0).unwrap()
    }

    /// Keep FD probes away from the kinks of the trilinear interpolant.
    fn off_center_planes(p: &Vec3) -> bool {
        (0..3).all(|a| {
            let u = p[a] / 0.2 - 0.5;
            (u - u.round()).abs() > 1e-3
        })
    }

    fn rel_error(a: &[Vec3], b: &[Vec3]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max);
        let den = b.iter().map(|y| y.amax()).fold(0.0, f64::max).max(1e-8);
        num / den
    }

    #[test]
    fn term_gradients_match_central_differences() {
        let df = block_field();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        while checked < 20 {
            let ctrl: Vec<Vec3> = (0..9)
                .map(|_| Vec3::new(rng.gen_range(2.0..4.0), rng.gen_range(1.0..3.0), rng.gen_range(0.3..1.5)))
                .collect();
            if !ctrl.iter().all(off_center_planes) {
                continue;
            }
            for term in [CostTerm::Control, CostTerm::Smooth, CostTerm::Static] {
                let g = term_gradient(term, &ctrl, 0.5, 0.5, &df);
                let h = 1e-5;
                let mut fd = vec![Vec3::zeros(); ctrl.len()];
                for i in 0..ctrl.len() {
                    for a in 0..3 {
                        let mut p = ctrl.clone();
                        p[i][a] += h;
                        let up = term_value(term, &p, 0.5, 0.5, &df);
                        p[i][a] -= 2.0 * h;
                        let dn = term_value(term, &p, 0.5, 0.5, &df);
                        fd[i][a] = (up - dn) / (2.0 * h);
                    }
                }
                assert!(rel_error(&g, &fd) < 1e-4, "{term:?}: {}", rel_error(&g, &fd));
            }
            checked += 1;
        }
    }

    #[test]
    fn straight_free_corridor_stays_straight() {
        let g = corridor();
        let df = DistanceField::compute(&g, 2.0).unwrap();
        let w = CostWeights {
            alpha_control: 1.0,
            alpha_smooth: 1.0,
            alpha_static: 10.0,
            d_safe: 0.5,
        };
        let init = straight(3);
        let (opt, rep) = optimize(&init, &w, &df, 200).unwrap();
        for p in &opt.controls {
            assert!((p.y - 1.5).abs() < 1e-3 && (p.z - 1.0).abs() < 1e-3);
        }
        assert_eq!(term_value(CostTerm::Static, &opt.controls, 0.5, 0.5, &df), 0.0);
        assert!(rep.costs.windows(2).all(|c| c[1] <= c[0]));
        for i in 0..opt.fixed() {
            assert_eq!(opt.controls[i].map(f64::to_bits), init.controls[i].map(f64::to_bits));
            let j = opt.controls.len() - 1 - i;
            assert_eq!(opt.controls[j].map(f64::to_bits), init.controls[j].map(f64::to_bits));
        }
    }

    #[test]
    fn straight_corridor_guide_is_two_points() {
        let g = corridor();
        let df = DistanceField::compute(&g, 2.0).unwrap();
        let clear = GuideClearance { hard: 0.3, soft: 0.5 };
        let a = Vec3::new(0.5, 1.5, 1.0);
        let b = Vec3::new(9.5, 1.5, 1.0);
        let poly = init_guide_path(&g, &df, &a, &b, clear).unwrap();
        assert_eq!(poly, vec![a, b]);
    }

    /// Breadth-first reachability oracle over Free cells with the hard clearance.
    fn bfs_reachable(g: &VoxelGrid, df: &DistanceField, from: [usize; 3], to: [usize; 3], hard: f64, avoid: &dyn Fn([usize; 3]) -> bool) -> bool {
        let geo = g.geometry();
        let mut seen = vec![false; g.len()];
        let mut q = std::collections::VecDeque::from([from]);
        seen[geo.linear(from)] = true;
        while let Some(c) = q.pop_front() {
            if c == to {
                return true;
            }
            for n in geo.neighbors26(c) {
                let i = geo.linear(n);
                if !seen[i] && g.state(n) == CellState::Free && df.at_linear(i) >= hard - 1e-9 && !avoid(n) {
                    seen[i] = true;
                    q.push_back(n);
                }
            }
        }
        false
    }

    #[test]
    fn path_through_single_gap() {
        // Wall across the corridor at x = 5.0 m with a gap at y in [1.6, 2.6).
        let mut g = VoxelGrid::new(Vec3::zeros(), 0.2, [50, 20, 8], CellState::Free).unwrap();
        for y in 0..20 {
            if (8..13).contains(&y) {
                continue;
            }
            for z in 0..8 {
                g.set([25, y, z], CellState::Occupied);
            }
        }
        let df = DistanceField::compute(&g, 2.0).unwrap();
        let geo = *g.geometry();
        let a = Vec3::new(1.0, 0.5, 0.8);
        let b = Vec3::new(9.0, 3.5, 0.8);
        let clear = GuideClearance { hard: 0.3, soft: 0.5 };
        let poly = init_guide_path(&g, &df, &a, &b, clear).unwrap();
        // Oracle: without the gap cells the goal is unreachable.
        let gap = |c: [usize; 3]| c[0] == 25 && (8..13).contains(&c[1]);
        let (ca, cb) = (geo.cell_of(&a).unwrap(), geo.cell_of(&b).unwrap());
        assert!(bfs_reachable(&g, &df, ca, cb, 0.3, &|_| false));
        assert!(!bfs_reachable(&g, &df, ca, cb, 0.3, &gap));
        // The polyline crosses the wall plane inside the gap.
        let mut crossed = false;
        for w in poly.windows(2) {
            let steps = 400;
            for k in 0..=steps {
                let p = w[0] + (w[1] - w[0]) * (k as f64 / steps as f64);
                let c = geo.cell_of(&p).unwrap();
                assert_eq!(g.state(c), CellState::Free);
                if c[0] == 25 {
                    assert!(gap(c));
                    crossed = true;
                }
            }
        }
        assert!(crossed);
    }

    #[test]
    fn sealed_goal_is_unreachable() {
        let mut g = corridor();
        let geo = *g.geometry();
        let goal = [30usize, 7, 5];
        for n in geo.neighbors26(goal).collect::<Vec<_>>() {
            g.set(n, CellState::Occupied);
        }
        let df = DistanceField::compute(&g, 2.0).unwrap();
        let err = init_guide_path(&g, &df, &Vec3::new(1.0, 1.5, 1.0), &geo.center(goal), GuideClearance { hard: 0.3, soft: 0.5 });
        assert!(matches!(err, Err(Error::Unreachable(_))));
    }

    #[test]
    fn obstacle_on_line_is_avoided() {
        let mut g = corridor();
        // Pillar on the straight line between start and goal.
        g.fill_box(Vec3::new(4.6, 1.2, 0.0), Vec3::new(5.0, 1.8, 2.0), CellState::Occupied);
        let df = DistanceField::compute(&g, 2.0).unwrap();
        let params = PlannerParams::default();
        let a = Vec3::new(1.0, 1.5, 1.0);
        let b = Vec3::new(9.0, 1.5, 1.0);
        let (traj, rep) = plan_leg(&g, &df, &a, &b, &params).unwrap();
        assert!(rep.costs.windows(2).all(|c| c[1] <= c[0]));
        let pillar: Vec<Vec3> = g
            .occupied_indices()
            .into_iter()
            .map(|i| g.geometry().center_linear(i))
            .filter(|c| c.x > 4.5 && c.x < 5.1 && c.y > 1.1 && c.y < 1.9)
            .collect();
        let min = traj
            .sampled(200.0)
            .iter()
            .map(|(_, p)| pillar.iter().map(|c| (c - p).norm()).fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min);
        assert!(min >= 0.5 - 0.2, "{min}");
    }
}
