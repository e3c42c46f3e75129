//! Planner tunables, stored in the scenario `params` block.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Merge into the nearest same-segment cluster by endpoint distance;
    /// sequence adjacency breaks ties.
    Nearest,
    /// Merge into the closest same-segment cluster in sequence order;
    /// endpoint distance breaks ties.
    SequenceNearest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerParams {
    // segmentation
    pub normal_radius_m: f64,
    pub segment_angle_thresh_rad: f64,
    pub segment_curvature_thresh: f64,
    pub segment_min_size: usize,
    // viewpoints
    pub standoff_m: f64,
    pub overlap: f64,
    // route
    pub tau_max: usize,
    pub merge_mode: MergeMode,
    // static planner
    pub bspline_order: usize,
    pub bspline_dt_s: f64,
    pub v_ref_mps: f64,
    pub alpha_control: f64,
    pub alpha_smooth: f64,
    pub alpha_static: f64,
    pub d_safe_m: f64,
    pub opt_max_iters: usize,
    pub distance_truncation_m: f64,
    // mpc
    pub mpc_horizon: usize,
    pub mpc_dt_s: f64,
    pub mpc_lambda_u: f64,
    pub mpc_position_weight: f64,
    pub mpc_velocity_weight: f64,
    pub u_min_mps2: f64,
    pub u_max_mps2: f64,
    pub robot_radius_m: f64,
    pub static_margin_m: f64,
    pub dynamic_margin_m: f64,
    pub uncertainty_growth_m_per_step: f64,
    pub mpc_max_scp_iters: usize,
    pub mpc_max_inner_iters: usize,
    // view adaptation
    pub view_adaptation: bool,
    pub weight_base: f64,
    pub weight_high: f64,
    pub weight_low: f64,
    pub view_angle_step_rad: f64,
    // simulation
    pub dynamic_obstacles_enabled: bool,
    pub sensor_azimuth_rays: usize,
    pub sensor_elevation_rays: usize,
    pub sensor_elevation_half_span_rad: f64,
    pub sensor_range_m: f64,
    pub yaw_rate_rad_s: f64,
    pub dwell_timeout_s: f64,
    pub arrival_tolerance_m: f64,
    pub max_replans: usize,
    pub mission_time_limit_s: f64,
    pub dynamic_phase_jitter_s: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            normal_radius_m: 0.45,
            segment_angle_thresh_rad: 20f64.to_radians(),
            segment_curvature_thresh: 0.05,
            segment_min_size: 8,
            standoff_m: 1.5,
            overlap: 0.2,
            tau_max: 3,
            merge_mode: MergeMode::Nearest,
            bspline_order: 3,
            bspline_dt_s: 0.5,
            v_ref_mps: 1.0,
            alpha_control: 1.0,
            alpha_smooth: 1.0,
            alpha_static: 10.0,
            d_safe_m: 0.5,
            opt_max_iters: 200,
            distance_truncation_m: 2.0,
            mpc_horizon: 20,
            mpc_dt_s: 0.1,
            mpc_lambda_u: 0.1,
            mpc_position_weight: 1.0,
            mpc_velocity_weight: 1.0,
            u_min_mps2: -2.0,
            u_max_mps2: 2.0,
            robot_radius_m: 0.3,
            static_margin_m: 0.2,
            dynamic_margin_m: 0.2,
            uncertainty_growth_m_per_step: 0.05,
            mpc_max_scp_iters: 6,
            mpc_max_inner_iters: 120,
            view_adaptation: true,
            weight_base: 1.0,
            weight_high: 10.0,
            weight_low: 0.1,
            view_angle_step_rad: 10f64.to_radians(),
            dynamic_obstacles_enabled: true,
            sensor_azimuth_rays: 32,
            sensor_elevation_rays: 16,
            sensor_elevation_half_span_rad: 45f64.to_radians(),
            sensor_range_m: 8.0,
            yaw_rate_rad_s: 90f64.to_radians(),
            dwell_timeout_s: 3.0,
            arrival_tolerance_m: 0.2,
            max_replans: 2,
            mission_time_limit_s: 1800.0,
            dynamic_phase_jitter_s: 0.0,
        }
    }
}

macro_rules! require {
    ($cond:expr, $field:expr, $msg:expr) => {
        if !$cond {
            return Err(Error::field(concat!("params.", $field), $msg));
        }
    };
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        require!(self.normal_radius_m > 0.0, "normal_radius_m", "must be > 0");
        require!(self.segment_angle_thresh_rad > 0.0, "segment_angle_thresh_rad", "must be > 0");
        require!(self.segment_curvature_thresh > 0.0, "segment_curvature_thresh", "must be > 0");
        require!(self.standoff_m > 0.0, "standoff_m", "must be > 0");
        require!((0.0..1.0).contains(&self.overlap), "overlap", "must lie in [0, 1)");
        require!(self.tau_max >= 1, "tau_max", "must be >= 1");
        require!(self.bspline_order >= 2, "bspline_order", "must be >= 2");
        require!(self.bspline_dt_s > 0.0, "bspline_dt_s", "must be > 0");
        require!(self.v_ref_mps > 0.0, "v_ref_mps", "must be > 0");
        require!(self.alpha_control >= 0.0, "alpha_control", "must be >= 0");
        require!(self.alpha_smooth >= 0.0, "alpha_smooth", "must be >= 0");
        require!(self.alpha_static >= 0.0, "alpha_static", "must be >= 0");
        require!(self.d_safe_m >= 0.0, "d_safe_m", "must be >= 0");
        require!(self.distance_truncation_m > 0.0, "distance_truncation_m", "must be > 0");
        require!(self.mpc_horizon >= 2, "mpc_horizon", "must be >= 2");
        require!(self.mpc_dt_s > 0.0, "mpc_dt_s", "must be > 0");
        require!(self.mpc_lambda_u >= 0.0, "mpc_lambda_u", "must be >= 0");
        require!(self.mpc_position_weight >= 0.0, "mpc_position_weight", "must be >= 0");
        require!(self.mpc_velocity_weight >= 0.0, "mpc_velocity_weight", "must be >= 0");
        require!(self.u_min_mps2 < self.u_max_mps2, "u_max_mps2", "must exceed u_min_mps2");
        require!(self.robot_radius_m > 0.0, "robot_radius_m", "must be > 0");
        require!(self.static_margin_m >= 0.0, "static_margin_m", "must be >= 0");
        require!(self.dynamic_margin_m >= 0.0, "dynamic_margin_m", "must be >= 0");
        require!(self.mpc_max_scp_iters >= 1, "mpc_max_scp_iters", "must be >= 1");
        require!(self.mpc_max_inner_iters >= 1, "mpc_max_inner_iters", "must be >= 1");
        require!(
            self.weight_low < self.weight_base && self.weight_base < self.weight_high,
            "weight_base",
            "weights must satisfy weight_low < weight_base < weight_high"
        );
        require!(self.weight_low >= 0.0, "weight_low", "must be >= 0");
        require!(self.view_angle_step_rad > 0.0, "view_angle_step_rad", "must be > 0");
        require!(self.sensor_azimuth_rays >= 1, "sensor_azimuth_rays", "must be >= 1");
        require!(self.sensor_elevation_rays >= 1, "sensor_elevation_rays", "must be >= 1");
        require!(self.sensor_range_m > 0.0, "sensor_range_m", "must be > 0");
        require!(self.yaw_rate_rad_s > 0.0, "yaw_rate_rad_s", "must be > 0");
        require!(self.dwell_timeout_s >= 0.0, "dwell_timeout_s", "must be >= 0");
        require!(self.arrival_tolerance_m > 0.0, "arrival_tolerance_m", "must be > 0");
        require!(self.mission_time_limit_s > 0.0, "mission_time_limit_s", "must be > 0");
        require!(self.dynamic_phase_jitter_s >= 0.0, "dynamic_phase_jitter_s", "must be >= 0");
        Ok(())
    }

    /// Apply `key=value` patches. Values are parsed as JSON, falling back to a
    /// bare string (so `merge_mode=nearest` works unquoted).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<PlannerParams> {
        let mut value = serde_json::to_value(self)?;
        let map = value
            .as_object_mut()
            .expect("params serialize to a JSON object");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::field(o, "override must have the form key=value"))?;
            let key = key.trim();
            if !map.contains_key(key) {
                return Err(Error::field(key, "unknown parameter key"));
            }
            let parsed: Value =
                serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
            map.insert(key.to_string(), parsed);
        }
        let params: PlannerParams = serde_json::from_value(value)
            .map_err(|e| Error::field("params", e.to_string()))?;
        params.validate()?;
        Ok(params)
    }
}
