use serde::{Deserialize, Serialize};

use super::{cell_visible, GridGeometry};
use crate::{wrap_angle, Error, Result, Vec3};

/// Pinhole camera with yaw-only orientation (pitch fixed at 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fov_h_rad: f64,
    pub fov_v_rad: f64,
    pub max_range_m: f64,
    pub max_incidence_rad: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            fov_h_rad: 90f64.to_radians(),
            fov_v_rad: 60f64.to_radians(),
            max_range_m: 4.0,
            max_incidence_rad: 75f64.to_radians(),
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        use std::f64::consts::PI;
        if !(self.fov_h_rad > 0.0 && self.fov_h_rad < 2.0 * PI) {
            return Err(Error::field("camera.fov_h_rad", "must lie in (0, 2*pi)"));
        }
        if !(self.fov_v_rad > 0.0 && self.fov_v_rad < PI) {
            return Err(Error::field("camera.fov_v_rad", "must lie in (0, pi)"));
        }
        if !(self.max_range_m > 0.0) {
            return Err(Error::field("camera.max_range_m", "must be > 0"));
        }
        if !(self.max_incidence_rad > 0.0) {
            return Err(Error::field("camera.max_incidence_rad", "must be > 0"));
        }
        Ok(())
    }

    /// Frustum and range test for a target point seen from `eye` at `yaw`.
    pub fn in_frustum(&self, eye: &Vec3, yaw: f64, target: &Vec3) -> bool {
        let d = target - eye;
        let dist = d.norm();
        if dist > self.max_range_m || dist < 1e-9 {
            return false;
        }
        let horiz = d.x.hypot(d.y);
        if horiz < 1e-12 {
            return false;
        }
        let bearing = d.y.atan2(d.x);
        if wrap_angle(bearing - yaw).abs() > 0.5 * self.fov_h_rad {
            return false;
        }
        d.z.atan2(horiz).abs() <= 0.5 * self.fov_v_rad
    }

    /// Incidence test: angle between the viewing ray and the surface normal.
    pub fn incidence_ok(&self, eye: &Vec3, target: &Vec3, normal: &Vec3) -> bool {
        let d = eye - target;
        let n = d.norm();
        if n < 1e-12 {
            return false;
        }
        let cos = (d / n).dot(normal).clamp(-1.0, 1.0);
        cos > 0.0 && cos.acos() <= self.max_incidence_rad
    }

    /// Frustum, range and incidence combined (visibility is checked separately).
    pub fn registers(&self, eye: &Vec3, yaw: f64, target: &Vec3, normal: &Vec3) -> bool {
        self.in_frustum(eye, yaw, target) && self.incidence_ok(eye, target, normal)
    }

    /// Whether `cell` is imaged from `(eye, yaw)`: frustum, range, incidence,
    /// and a clear line of sight through cells that are not `opaque`.
    pub fn observes<F>(&self, geo: &GridGeometry, eye: &Vec3, yaw: f64, cell: usize, normal: &Vec3, opaque: F) -> bool
    where
        F: Fn(usize) -> bool,
    {
        let c = geo.unlinear(cell);
        let center = geo.center(c);
        self.registers(eye, yaw, &center, normal) && cell_visible(geo, eye, c, opaque)
    }
}
