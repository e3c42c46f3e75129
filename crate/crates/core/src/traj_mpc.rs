//! Receding-horizon tracking with static and dynamic collision avoidance.
//!
//! The decision variables are the controls only; states are obtained by
//! rolling out the double integrator, so dynamics hold by construction.
//! Collision sets are linearized around the previous iterate and enforced as
//! quadratic penalties whose weight doubles on every convexification round.
//! Each convex subproblem is solved by accelerated projected gradient descent
//! onto the control box.

use nalgebra::DMatrix;

use crate::traj_static::BSplineTrajectory;
use crate::world::{DistanceField, Obstacle};
use crate::{PlannerParams, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotState {
    pub p: Vec3,
    pub v: Vec3,
}

impl RobotState {
    pub fn new(p: Vec3, v: Vec3) -> Self {
        RobotState { p, v }
    }

    pub fn at_rest(p: Vec3) -> Self {
        RobotState { p, v: Vec3::zeros() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlInput {
    pub a: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub lambda_u: f64,
    pub position_weight: f64,
    pub velocity_weight: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub robot_radius: f64,
    pub static_margin: f64,
    pub dynamic_margin: f64,
    pub growth_per_step: f64,
    pub max_scp_iters: usize,
    pub max_inner_iters: usize,
}

impl MpcConfig {
    pub fn from_params(p: &PlannerParams) -> Self {
        MpcConfig {
            horizon: p.mpc_horizon,
            dt: p.mpc_dt_s,
            lambda_u: p.mpc_lambda_u,
            position_weight: p.mpc_position_weight,
            velocity_weight: p.mpc_velocity_weight,
            u_min: p.u_min_mps2,
            u_max: p.u_max_mps2,
            robot_radius: p.robot_radius_m,
            static_margin: p.static_margin_m,
            dynamic_margin: p.dynamic_margin_m,
            growth_per_step: p.uncertainty_growth_m_per_step,
            max_scp_iters: p.mpc_max_scp_iters,
            max_inner_iters: p.mpc_max_inner_iters,
        }
    }

    fn clamp(&self, u: &Vec3) -> Vec3 {
        u.map(|c| c.clamp(self.u_min, self.u_max))
    }
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig::from_params(&PlannerParams::default())
    }
}

/// Double-integrator step with zero-order-hold acceleration.
pub fn predict_dynamics(x: &RobotState, u: &ControlInput, dt: f64) -> RobotState {
    RobotState {
        p: x.p + x.v * dt + u.a * (0.5 * dt * dt),
        v: x.v + u.a * dt,
    }
}

/// Vertical capsule: the set of points within `radius` of the axis segment
/// from `base` up to `base + height * z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub base: Vec3,
    pub height: f64,
    pub radius: f64,
}

impl Capsule {
    /// Closest axis point to `p`.
    pub fn axis_point(&self, p: &Vec3) -> Vec3 {
        Vec3::new(self.base.x, self.base.y, p.z.clamp(self.base.z, self.base.z + self.height))
    }

    /// Distance from `p` to the capsule surface (negative inside).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.axis_point(p)).norm() - self.radius
    }

    fn lerp(&self, other: &Capsule, s: f64) -> Capsule {
        Capsule {
            base: self.base + (other.base - self.base) * s,
            height: self.height + (other.height - self.height) * s,
            radius: self.radius + (other.radius - self.radius) * s,
        }
    }
}

/// Per-obstacle predictions for steps `0..=horizon`.
pub type Predictions = Vec<Vec<Capsule>>;

/// Constant-velocity extrapolation of each obstacle's current motion, with
/// the radius inflated by `margin + growth * k` at step `k`.
pub fn predict_obstacles(obstacles: &[Obstacle], t_now: f64, horizon: usize, dt: f64, margin: f64, growth: f64) -> Predictions {
    obstacles
        .iter()
        .map(|o| {
            let s = o.state_at(t_now);
            (0..=horizon)
                .map(|k| Capsule {
                    base: s.base + s.velocity * (k as f64 * dt),
                    height: s.height,
                    radius: s.radius + margin + growth * k as f64,
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcSolution {
    pub states: Vec<RobotState>,
    pub controls: Vec<ControlInput>,
    pub feasible: bool,
    pub objective: f64,
    /// Nonlinear constraint violation of the accepted iterate after each
    /// convexification round, starting with the initial guess.
    pub violations: Vec<f64>,
    /// Smallest clearance found by the dense re-check.
    pub min_clearance: f64,
    /// True when the braking fallback replaced the optimized controls.
    pub fallback: bool,
}

pub fn rollout(x0: &RobotState, controls: &[Vec3], dt: f64) -> Vec<RobotState> {
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(*x0);
    let mut x = *x0;
    for u in controls {
        x = predict_dynamics(&x, &ControlInput { a: *u }, dt);
        out.push(x);
    }
    out
}

/// Half-space `a . p >= b` on the position at one step.
#[derive(Clone, Copy, Debug)]
struct HalfSpace {
    step: usize,
    a: Vec3,
    b: f64,
}

/// Linearizations farther than this from becoming active are skipped.
const LINEARIZE_BUFFER: f64 = 1.0;
const PENALTY_INIT: f64 = 100.0;
const CONVERGED_DISPLACEMENT: f64 = 1e-3;
const DENSE_SUBSTEPS: usize = 10;

struct Problem<'a> {
    cfg: &'a MpcConfig,
    x0: RobotState,
    reference: &'a [RobotState],
}

impl Problem<'_> {
    fn tracking(&self, states: &[RobotState], u: &[Vec3]) -> f64 {
        let c = self.cfg;
        let s: f64 = states
            .iter()
            .zip(self.reference)
            .map(|(x, r)| c.position_weight * (x.p - r.p).norm_squared() + c.velocity_weight * (x.v - r.v).norm_squared())
            .sum();
        s + c.lambda_u * u.iter().map(|a| a.norm_squared()).sum::<f64>()
    }

    fn penalty(states: &[RobotState], cons: &[HalfSpace], mu: f64) -> f64 {
        mu * cons
            .iter()
            .map(|h| (h.b - h.a.dot(&states[h.step].p)).max(0.0).powi(2))
            .sum::<f64>()
    }

    fn value(&self, u: &[Vec3], cons: &[HalfSpace], mu: f64) -> f64 {
        let states = rollout(&self.x0, u, self.cfg.dt);
        self.tracking(&states, u) + Self::penalty(&states, cons, mu)
    }

    /// Gradient by backward accumulation through the rollout.
    fn gradient(&self, u: &[Vec3], cons: &[HalfSpace], mu: f64) -> Vec<Vec3> {
        let c = self.cfg;
        let dt = c.dt;
        let n = u.len();
        let states = rollout(&self.x0, u, dt);
        let mut lp: Vec<Vec3> = states
            .iter()
            .zip(self.reference)
            .map(|(x, r)| 2.0 * c.position_weight * (x.p - r.p))
            .collect();
        let lv: Vec<Vec3> = states
            .iter()
            .zip(self.reference)
            .map(|(x, r)| 2.0 * c.velocity_weight * (x.v - r.v))
            .collect();
        for h in cons {
            let viol = h.b - h.a.dot(&states[h.step].p);
            if viol > 0.0 {
                lp[h.step] -= 2.0 * mu * viol * h.a;
            }
        }
        let mut g = vec![Vec3::zeros(); n];
        let mut gp = lp[n];
        let mut gv = lv[n];
        for k in (0..n).rev() {
            g[k] = 2.0 * c.lambda_u * u[k] + gp * (0.5 * dt * dt) + gv * dt;
            let gp_k = lp[k] + gp;
            gv = lv[k] + gp * dt + gv;
            gp = gp_k;
        }
        g
    }
}

/// Linear maps from the control sequence (one axis) to positions and
/// velocities at steps `1..=n`.
struct Sensitivity {
    bp: DMatrix<f64>,
    bv: DMatrix<f64>,
    /// Largest eigenvalues of the position and velocity Gramians.
    ep: f64,
    ev: f64,
}

impl Sensitivity {
    fn new(n: usize, dt: f64) -> Self {
        let mut bp = DMatrix::<f64>::zeros(n, n);
        let mut bv = DMatrix::<f64>::zeros(n, n);
        for k in 1..=n {
            for j in 0..k {
                bp[(k - 1, j)] = dt * dt * ((k - j) as f64 - 0.5);
                bv[(k - 1, j)] = dt;
            }
        }
        let ep = (bp.transpose() * &bp).symmetric_eigenvalues().max();
        let ev = (bv.transpose() * &bv).symmetric_eigenvalues().max();
        Sensitivity { bp, bv, ep, ev }
    }

    /// Minimizer of the tracking objective ignoring bounds and collisions,
    /// clamped into the box. `None` when the objective is not strictly convex.
    fn unconstrained(&self, x0: &RobotState, reference: &[RobotState], cfg: &MpcConfig) -> Option<Vec<Vec3>> {
        let n = self.bp.ncols();
        let (wp, wv) = (cfg.position_weight, cfg.velocity_weight);
        let h = (self.bp.transpose() * &self.bp) * wp
            + (self.bv.transpose() * &self.bv) * wv
            + DMatrix::identity(n, n) * cfg.lambda_u;
        let chol = h.cholesky()?;
        let mut out = vec![Vec3::zeros(); n];
        for axis in 0..3 {
            let free_p = nalgebra::DVector::from_fn(n, |k, _| x0.p[axis] + (k + 1) as f64 * cfg.dt * x0.v[axis] - reference[k + 1].p[axis]);
            let free_v = nalgebra::DVector::from_fn(n, |k, _| x0.v[axis] - reference[k + 1].v[axis]);
            let rhs = -(self.bp.transpose() * free_p * wp + self.bv.transpose() * free_v * wv);
            let sol = chol.solve(&rhs);
            for (j, u) in out.iter_mut().enumerate() {
                u[axis] = sol[j];
            }
        }
        Some(out.iter().map(|u| cfg.clamp(u)).collect())
    }
}

/// Accelerated projected gradient on one penalized subproblem.
fn solve_inner(prob: &Problem, start: &[Vec3], cons: &[HalfSpace], mu: f64, lip: f64) -> Vec<Vec3> {
    let cfg = prob.cfg;
    let step = 1.0 / lip;
    let mut x = start.to_vec();
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut fx = prob.value(&x, cons, mu);
    for _ in 0..cfg.max_inner_iters {
        let g = prob.gradient(&y, cons, mu);
        let xn: Vec<Vec3> = y.iter().zip(&g).map(|(yi, gi)| cfg.clamp(&(yi - gi * step))).collect();
        let fn_ = prob.value(&xn, cons, mu);
        let moved = xn.iter().zip(&x).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        if fn_ > fx {
            // Restart momentum from the last iterate.
            y = x.clone();
            t = 1.0;
            continue;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / tn;
        y = xn.iter().zip(&x).map(|(a, b)| a + (a - b) * beta).collect();
        x = xn;
        fx = fn_;
        t = tn;
        if moved < 1e-12 {
            break;
        }
    }
    x
}

/// Static and dynamic clearances (robot radius already subtracted) at `p`
/// and predicted step position `s` in `[0, horizon]`.
fn clearance_at(p: &Vec3, s: f64, df: &DistanceField, preds: &Predictions, cfg: &MpcConfig) -> f64 {
    let cap = df.truncation();
    let mut m = df.clearance(p, cap) - cfg.robot_radius;
    for traj in preds {
        let k = (s.floor() as usize).min(traj.len() - 1);
        let k1 = (k + 1).min(traj.len() - 1);
        let cap_k = traj[k].lerp(&traj[k1], s - k as f64);
        m = m.min(cap_k.signed_distance(p) - cfg.robot_radius);
    }
    m
}

/// Dense re-check between steps under the held accelerations.
pub fn dense_min_clearance(states: &[RobotState], controls: &[Vec3], df: &DistanceField, preds: &Predictions, cfg: &MpcConfig) -> f64 {
    let mut m = f64::INFINITY;
    for (k, u) in controls.iter().enumerate() {
        let x = states[k];
        for s in 0..DENSE_SUBSTEPS {
            let tau = cfg.dt * s as f64 / DENSE_SUBSTEPS as f64;
            let p = x.p + x.v * tau + u * (0.5 * tau * tau);
            m = m.min(clearance_at(&p, k as f64 + s as f64 / DENSE_SUBSTEPS as f64, df, preds, cfg));
        }
    }
    let last = states.len() - 1;
    m.min(clearance_at(&states[last].p, last as f64, df, preds, cfg))
}

/// Violation of the margin-inflated collision sets at the step positions.
fn violation(states: &[RobotState], df: &DistanceField, preds: &Predictions, cfg: &MpcConfig) -> f64 {
    let need_s = cfg.robot_radius + cfg.static_margin;
    let mut v = 0.0;
    for (k, x) in states.iter().enumerate().skip(1) {
        v += (need_s - df.interpolate(&x.p)).max(0.0);
        for traj in preds {
            v += (-(traj[k].signed_distance(&x.p) - cfg.robot_radius)).max(0.0);
        }
    }
    v
}

fn linearize(states: &[RobotState], df: &DistanceField, preds: &Predictions, cfg: &MpcConfig) -> Vec<HalfSpace> {
    let need_s = cfg.robot_radius + cfg.static_margin;
    let mut out = Vec::new();
    for (k, x) in states.iter().enumerate().skip(1) {
        let (d, g) = df.interpolate_with_gradient(&x.p);
        let gn = g.norm();
        if d < need_s + LINEARIZE_BUFFER && gn > 1e-9 {
            // d(p) ~ d + g.(p - p_bar) >= need, normalized by |g|.
            let a = g / gn;
            out.push(HalfSpace {
                step: k,
                a,
                b: (need_s - d) / gn + a.dot(&x.p),
            });
        }
        for traj in preds {
            let c = &traj[k];
            let q = c.axis_point(&x.p);
            let off = x.p - q;
            let dist = off.norm();
            if dist - c.radius - cfg.robot_radius > LINEARIZE_BUFFER {
                continue;
            }
            let a = if dist > 1e-9 {
                off / dist
            } else {
                // Degenerate: push horizontally away along +x.
                Vec3::x()
            };
            out.push(HalfSpace {
                step: k,
                a,
                b: a.dot(&q) + c.radius + cfg.robot_radius,
            });
        }
    }
    out
}

fn max_per_step(cons: &[HalfSpace], n: usize) -> usize {
    let mut count = vec![0usize; n + 1];
    for h in cons {
        count[h.step] += 1;
    }
    count.into_iter().max().unwrap_or(0)
}

/// Full-deceleration controls along the current velocity until rest.
pub fn braking_controls(x0: &RobotState, cfg: &MpcConfig) -> Vec<Vec3> {
    let mut x = *x0;
    let mut out = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let speed = x.v.norm();
        let a = if speed < 1e-12 {
            Vec3::zeros()
        } else {
            let dir = -x.v / speed;
            // Largest scale keeping every component inside the box.
            let scale = (0..3)
                .filter(|&i| dir[i].abs() > 1e-12)
                .map(|i| if dir[i] > 0.0 { cfg.u_max / dir[i] } else { cfg.u_min / dir[i] })
                .fold(f64::INFINITY, f64::min);
            let full = dir * scale;
            // Stop exactly instead of reversing.
            if full.norm() * cfg.dt >= speed {
                cfg.clamp(&(-x.v / cfg.dt))
            } else {
                cfg.clamp(&full)
            }
        };
        out.push(a);
        x = predict_dynamics(&x, &ControlInput { a }, cfg.dt);
    }
    out
}

/// Solve one tracking problem. `reference` holds `horizon + 1` states;
/// `warm` optionally seeds the controls.
pub fn solve_mpc(
    x_now: &RobotState,
    reference: &[RobotState],
    df: &DistanceField,
    preds: &Predictions,
    cfg: &MpcConfig,
    warm: Option<&[Vec3]>,
) -> MpcSolution {
    let n = cfg.horizon;
    assert_eq!(reference.len(), n + 1, "reference window must hold horizon + 1 states");
    let prob = Problem {
        cfg,
        x0: *x_now,
        reference,
    };
    let sens = Sensitivity::new(n, cfg.dt);
    let ep = sens.ep;
    let base_lip = 2.0 * (cfg.position_weight * ep + cfg.velocity_weight * sens.ev + cfg.lambda_u);
    // Start from whichever of the warm start and the clamped unconstrained
    // optimum scores better on the first penalized model.
    let mut candidates: Vec<Vec<Vec3>> = Vec::new();
    if let Some(w) = warm.filter(|w| w.len() == n) {
        candidates.push(w.iter().map(|a| cfg.clamp(a)).collect());
    }
    candidates.extend(sens.unconstrained(x_now, reference, cfg));
    if candidates.is_empty() {
        candidates.push(vec![Vec3::zeros(); n]);
    }
    let mut u = candidates
        .into_iter()
        .map(|c| {
            let st = rollout(x_now, &c, cfg.dt);
            let score = prob.value(&c, &linearize(&st, df, preds, cfg), PENALTY_INIT);
            (score, c)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
        .expect("at least one start");
    let mut states = rollout(x_now, &u, cfg.dt);
    let mut viol = violation(&states, df, preds, cfg);
    let mut violations = vec![viol];
    let mut mu = PENALTY_INIT;
    for _ in 0..cfg.max_scp_iters {
        let cons = linearize(&states, df, preds, cfg);
        let lip = base_lip + 2.0 * mu * max_per_step(&cons, n) as f64 * ep;
        let cand = solve_inner(&prob, &u, &cons, mu, lip.max(1e-12));
        let cand_states = rollout(x_now, &cand, cfg.dt);
        let cand_viol = violation(&cand_states, df, preds, cfg);
        mu *= 2.0;
        if cand_viol > viol {
            violations.push(viol);
            continue;
        }
        let moved = cand_states
            .iter()
            .zip(&states)
            .map(|(a, b)| (a.p - b.p).norm())
            .fold(0.0, f64::max);
        u = cand;
        states = cand_states;
        viol = cand_viol;
        violations.push(viol);
        if moved < CONVERGED_DISPLACEMENT {
            break;
        }
    }
    let min_clearance = dense_min_clearance(&states, &u, df, preds, cfg);
    if min_clearance >= 0.0 {
        let objective = prob.tracking(&states, &u);
        return MpcSolution {
            states,
            controls: u.into_iter().map(|a| ControlInput { a }).collect(),
            feasible: true,
            objective,
            violations,
            min_clearance,
            fallback: false,
        };
    }
    // Braking when it is itself collision-free; otherwise the less violating
    // of braking and the last SCP iterate, so a hovering robot can evade.
    let brake = braking_controls(x_now, cfg);
    let bstates = rollout(x_now, &brake, cfg.dt);
    let bclear = dense_min_clearance(&bstates, &brake, df, preds, cfg);
    let (states, u, min_clearance, fallback) = if bclear >= 0.0 || violation(&bstates, df, preds, cfg) <= viol {
        (bstates, brake, bclear, true)
    } else {
        (states, u, min_clearance, false)
    };
    let objective = prob.tracking(&states, &u);
    MpcSolution {
        states,
        controls: u.into_iter().map(|a| ControlInput { a }).collect(),
        feasible: false,
        objective,
        violations,
        min_clearance,
        fallback,
    }
}

/// Source of reference states over time.
pub trait Reference {
    fn state_at(&self, t: f64) -> RobotState;
}

impl Reference for BSplineTrajectory {
    fn state_at(&self, t: f64) -> RobotState {
        let s = self.sample(t);
        RobotState { p: s.p, v: s.v }
    }
}

/// Receding-horizon wrapper with warm starts.
#[derive(Clone, Debug)]
pub struct MpcController {
    pub cfg: MpcConfig,
    warm: Option<Vec<Vec3>>,
}

impl MpcController {
    pub fn new(cfg: MpcConfig) -> Self {
        MpcController { cfg, warm: None }
    }

    /// Drop the warm start, e.g. after switching trajectories.
    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn reference_window<R: Reference + ?Sized>(&self, traj: &R, t: f64) -> Vec<RobotState> {
        (0..=self.cfg.horizon)
            .map(|k| traj.state_at(t + k as f64 * self.cfg.dt))
            .collect()
    }

    /// Solve at time `t` along `traj` and return the first control.
    pub fn step<R: Reference + ?Sized>(
        &mut self,
        x: &RobotState,
        traj: &R,
        t: f64,
        df: &DistanceField,
        preds: &Predictions,
    ) -> (ControlInput, MpcSolution) {
        let window = self.reference_window(traj, t);
        let sol = solve_mpc(x, &window, df, preds, &self.cfg, self.warm.as_deref());
        let mut next: Vec<Vec3> = sol.controls.iter().skip(1).map(|c| c.a).collect();
        next.push(sol.controls.last().map_or(Vec3::zeros(), |c| c.a));
        self.warm = if sol.fallback { None } else { Some(next) };
        (sol.controls[0], sol)
    }
}
