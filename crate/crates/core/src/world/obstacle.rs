use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    Static,
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Box { min_m: [f64; 3], max_m: [f64; 3] },
    /// Vertical cylinder standing on `base_center_m`.
    Cylinder {
        base_center_m: [f64; 3],
        radius_m: f64,
        height_m: f64,
    },
}

/// Looping piecewise-linear motion at constant speed. The cylinder base
/// center follows the closed polyline through `waypoints_m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Motion {
    pub waypoints_m: Vec<[f64; 3]>,
    pub speed_mps: f64,
    #[serde(default)]
    pub phase_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub kind: ObstacleKind,
    pub shape: Shape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<Motion>,
}

/// Pose of a dynamic obstacle at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObstacleState {
    pub base: Vec3,
    pub velocity: Vec3,
    pub radius: f64,
    pub height: f64,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl Obstacle {
    pub fn validate(&self, field: &str) -> Result<()> {
        match &self.shape {
            Shape::Box { min_m, max_m } => {
                if (0..3).any(|a| min_m[a] > max_m[a]) {
                    return Err(Error::field(format!("{field}.shape"), "box min must be <= max per axis"));
                }
            }
            Shape::Cylinder { radius_m, height_m, .. } => {
                if !(*radius_m > 0.0) {
                    return Err(Error::field(format!("{field}.shape.radius_m"), "must be > 0"));
                }
                if !(*height_m > 0.0) {
                    return Err(Error::field(format!("{field}.shape.height_m"), "must be > 0"));
                }
            }
        }
        match (self.kind, &self.motion) {
            (ObstacleKind::Dynamic, None) => {
                return Err(Error::field(format!("{field}.motion"), "dynamic obstacles need a motion"));
            }
            (ObstacleKind::Dynamic, Some(m)) => {
                if !matches!(self.shape, Shape::Cylinder { .. }) {
                    return Err(Error::field(format!("{field}.shape"), "dynamic obstacles must be cylinders"));
                }
                if m.waypoints_m.is_empty() {
                    return Err(Error::field(format!("{field}.motion.waypoints_m"), "must not be empty"));
                }
                if !(m.speed_mps >= 0.0) {
                    return Err(Error::field(format!("{field}.motion.speed_mps"), "must be >= 0"));
                }
            }
            (ObstacleKind::Static, Some(_)) => {
                return Err(Error::field(format!("{field}.motion"), "static obstacles cannot move"));
            }
            (ObstacleKind::Static, None) => {}
        }
        Ok(())
    }

    /// Closed-loop length of the motion polyline.
    fn loop_length(m: &Motion) -> f64 {
        let n = m.waypoints_m.len();
        (0..n)
            .map(|i| (v3(m.waypoints_m[(i + 1) % n]) - v3(m.waypoints_m[i])).norm())
            .sum()
    }

    /// Pose at time `t`. Static obstacles and cylinders without motion return
    /// their fixed pose with zero velocity.
    pub fn state_at(&self, t: f64) -> ObstacleState {
        let (base, radius, height) = match &self.shape {
            Shape::Cylinder {
                base_center_m,
                radius_m,
                height_m,
            } => (v3(*base_center_m), *radius_m, *height_m),
            Shape::Box { min_m, max_m } => {
                let min = v3(*min_m);
                let max = v3(*max_m);
                let c = 0.5 * (min + max);
                let r = 0.5 * (max.x - min.x).hypot(max.y - min.y);
                (Vec3::new(c.x, c.y, min.z), r, max.z - min.z)
            }
        };
        let Some(m) = &self.motion else {
            return ObstacleState {
                base,
                velocity: Vec3::zeros(),
                radius,
                height,
            };
        };
        let total = Self::loop_length(m);
        let n = m.waypoints_m.len();
        if total < 1e-12 || m.speed_mps == 0.0 {
            return ObstacleState {
                base: v3(m.waypoints_m[0]),
                velocity: Vec3::zeros(),
                radius,
                height,
            };
        }
        let mut s = ((t + m.phase_s) * m.speed_mps).rem_euclid(total);
        for i in 0..n {
            let a = v3(m.waypoints_m[i]);
            let b = v3(m.waypoints_m[(i + 1) % n]);
            let len = (b - a).norm();
            if len < 1e-12 {
                continue;
            }
            if s <= len || i == n - 1 {
                let dir = (b - a) / len;
                return ObstacleState {
                    base: a + dir * s.min(len),
                    velocity: dir * m.speed_mps,
                    radius,
                    height,
                };
            }
            s -= len;
        }
        unreachable!("loop length covers every arc position")
    }
}
