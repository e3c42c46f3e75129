//! # coverplan
//!
//! Coverage-inspection planning over voxelized reference maps, plus a
//! deterministic mission simulator that executes the plans.
//!
//! The pipeline runs in two layers:
//!
//! - **Global**: surface normals and region growing ([`segment`]), per-segment
//!   viewpoint generation ([`viewpoints`]), and viewpoint sequencing with
//!   cluster post-processing ([`route`]).
//! - **Local**: B-spline reference trajectories ([`traj_static`]), MPC tracking
//!   with static and dynamic obstacle avoidance ([`traj_mpc`]), and
//!   occlusion-aware yaw selection ([`view_adapt`]).
//!
//! [`sim`] ties everything together and reports the surface coverage achieved.
//!
//! ```no_run
//! use coverplan::{world::Scenario, sim};
//!
//! let scenario = Scenario::load("scenarios/corridor_static.json").unwrap();
//! let outcome = sim::run_mission(&scenario).unwrap();
//! println!("coverage {:.3}", outcome.report.coverage_rate);
//! ```

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod export;
pub mod params;
pub mod route;
pub mod scenarios;
pub mod segment;
pub mod sim;
pub mod traj_mpc;
pub mod traj_static;
pub mod view_adapt;
pub mod viewpoints;
pub mod world;

pub use error::{Error, Result};
pub use params::PlannerParams;

/// 3D vector in world coordinates (meters unless stated otherwise).
pub type Vec3 = nalgebra::Vector3<f64>;

/// Wrap an angle to `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.25) - 0.25).abs() < 1e-15);
    }
}
