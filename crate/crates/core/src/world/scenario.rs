//! Scenario documents: reference map, unforeseen world content, dynamic
//! obstacles, robot start, camera and planner parameters.
//!
//! On disk a scenario is one JSON object with the top-level keys `grid`,
//! `surfaces`, `true_world_extras`, `dynamic_obstacles`, `robot_start`,
//! `camera`, `params` and `seed`. Occupancy is stored as run-length-encoded
//! `[start, length]` pairs over linear cell indices (x fastest).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use super::grid::{rle_decode, rle_encode, CellState, GridGeometry, VoxelGrid};
use super::obstacle::{Obstacle, ObstacleKind, Shape};
use crate::export::atomic_write;
use crate::{Error, PlannerParams, Result, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    origin_m: [f64; 3],
    resolution_m: f64,
    dims: [usize; 3],
    occupied_rle: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurfacesFile {
    cells_rle: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtrasFile {
    #[serde(default)]
    obstacles: Vec<Obstacle>,
    #[serde(default)]
    occupied_rle: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotStartFile {
    position_m: [f64; 3],
    yaw_rad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    grid: GridFile,
    surfaces: SurfacesFile,
    true_world_extras: ExtrasFile,
    dynamic_obstacles: Vec<Obstacle>,
    robot_start: RobotStartFile,
    camera: CameraModel,
    params: PlannerParams,
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotStart {
    pub position: Vec3,
    pub yaw: f64,
}

/// Content present in the true world but absent from the reference map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorldExtras {
    /// Static obstacles, rasterized by cell center.
    pub obstacles: Vec<Obstacle>,
    /// Additional occupied cells (sorted linear indices).
    pub occupied: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// Reference map: Free/Occupied only.
    pub reference: VoxelGrid,
    /// Inspectable surface cells (sorted linear indices, Occupied in the reference).
    pub surfaces: Vec<usize>,
    pub extras: WorldExtras,
    /// Reference plus extras; derived on construction.
    pub true_world: VoxelGrid,
    pub dynamic_obstacles: Vec<Obstacle>,
    pub robot_start: RobotStart,
    pub camera: CameraModel,
    pub params: PlannerParams,
    pub seed: u64,
}

fn rasterize_obstacle(grid: &mut VoxelGrid, o: &Obstacle) {
    match &o.shape {
        Shape::Box { min_m, max_m } => grid.fill_box(
            Vec3::new(min_m[0], min_m[1], min_m[2]),
            Vec3::new(max_m[0], max_m[1], max_m[2]),
            CellState::Occupied,
        ),
        Shape::Cylinder {
            base_center_m,
            radius_m,
            height_m,
        } => grid.fill_cylinder(
            Vec3::new(base_center_m[0], base_center_m[1], base_center_m[2]),
            *radius_m,
            *height_m,
            CellState::Occupied,
        ),
    }
}

fn check_runs(runs: &[[usize; 2]], len: usize, field: &str) -> Result<Vec<usize>> {
    let cells = rle_decode(runs);
    if let Some(bad) = cells.iter().find(|&&i| i >= len) {
        return Err(Error::field(field, format!("cell index {bad} out of bounds ({len} cells)")));
    }
    if cells.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::field(field, "runs must be sorted and disjoint"));
    }
    Ok(cells)
}

impl Scenario {
    /// Build and validate a scenario. The true world is derived from the
    /// reference and the extras.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        reference: VoxelGrid,
        surfaces: Vec<usize>,
        extras: WorldExtras,
        dynamic_obstacles: Vec<Obstacle>,
        robot_start: RobotStart,
        camera: CameraModel,
        params: PlannerParams,
        seed: u64,
    ) -> Result<Self> {
        if reference.cells().contains(&CellState::Unknown) {
            return Err(Error::field("grid", "reference map cells must be Free or Occupied"));
        }
        let mut surfaces = surfaces;
        surfaces.sort_unstable();
        surfaces.dedup();
        if let Some(&bad) = surfaces
            .iter()
            .find(|&&i| i >= reference.len() || !reference.is_occupied_linear(i))
        {
            return Err(Error::field(
                "surfaces.cells_rle",
                format!("surface cell {bad} is not Occupied in the reference map"),
            ));
        }
        let mut true_world = reference.clone();
        for (k, o) in extras.obstacles.iter().enumerate() {
            o.validate(&format!("true_world_extras.obstacles[{k}]"))?;
            if o.kind != ObstacleKind::Static {
                return Err(Error::field(
                    format!("true_world_extras.obstacles[{k}].kind"),
                    "true-world extras must be static",
                ));
            }
            rasterize_obstacle(&mut true_world, o);
        }
        for &i in &extras.occupied {
            if i >= true_world.len() {
                return Err(Error::field("true_world_extras.occupied_rle", "cell index out of bounds"));
            }
            true_world.set_linear(i, CellState::Occupied);
        }
        for (k, o) in dynamic_obstacles.iter().enumerate() {
            o.validate(&format!("dynamic_obstacles[{k}]"))?;
            if o.kind != ObstacleKind::Dynamic {
                return Err(Error::field(format!("dynamic_obstacles[{k}].kind"), "must be dynamic"));
            }
        }
        camera.validate()?;
        params.validate()?;
        if !robot_start.position.iter().all(|v| v.is_finite()) || !robot_start.yaw.is_finite() {
            return Err(Error::field("robot_start", "must be finite"));
        }
        match true_world.state_at(&robot_start.position) {
            None => {
                return Err(Error::Invariant("robot_start lies outside the grid".into()));
            }
            Some(CellState::Free) => {}
            Some(_) => {
                return Err(Error::Invariant(
                    "robot_start lies in a cell that is not Free in the true world".into(),
                ));
            }
        }
        Ok(Scenario {
            reference,
            surfaces,
            extras,
            true_world,
            dynamic_obstacles,
            robot_start,
            camera,
            params,
            seed,
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.reference.geometry()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let g = &file.grid;
        let geometry = GridGeometry::new(
            Vec3::new(g.origin_m[0], g.origin_m[1], g.origin_m[2]),
            g.resolution_m,
            g.dims,
        )?;
        let mut reference = VoxelGrid::with_geometry(geometry, CellState::Free);
        for i in check_runs(&g.occupied_rle, reference.len(), "grid.occupied_rle")? {
            reference.set_linear(i, CellState::Occupied);
        }
        let surfaces = check_runs(&file.surfaces.cells_rle, reference.len(), "surfaces.cells_rle")?;
        let occupied = check_runs(
            &file.true_world_extras.occupied_rle,
            reference.len(),
            "true_world_extras.occupied_rle",
        )?;
        let extras = WorldExtras {
            obstacles: file.true_world_extras.obstacles,
            occupied,
        };
        let start = RobotStart {
            position: Vec3::new(
                file.robot_start.position_m[0],
                file.robot_start.position_m[1],
                file.robot_start.position_m[2],
            ),
            yaw: file.robot_start.yaw_rad,
        };
        Scenario::new(
            reference,
            surfaces,
            extras,
            file.dynamic_obstacles,
            start,
            file.camera,
            file.params,
            file.seed,
        )
    }

    pub fn to_json_string(&self) -> Result<String> {
        let geo = self.reference.geometry();
        let o = geo.origin();
        let file = ScenarioFile {
            grid: GridFile {
                origin_m: [o.x, o.y, o.z],
                resolution_m: geo.resolution(),
                dims: geo.dims(),
                occupied_rle: rle_encode(&self.reference.occupied_indices()),
            },
            surfaces: SurfacesFile {
                cells_rle: rle_encode(&self.surfaces),
            },
            true_world_extras: ExtrasFile {
                obstacles: self.extras.obstacles.clone(),
                occupied_rle: rle_encode(&self.extras.occupied),
            },
            dynamic_obstacles: self.dynamic_obstacles.clone(),
            robot_start: RobotStartFile {
                position_m: [
                    self.robot_start.position.x,
                    self.robot_start.position.y,
                    self.robot_start.position.z,
                ],
                yaw_rad: self.robot_start.yaw,
            },
            camera: self.camera,
            params: self.params.clone(),
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = self.to_json_string()?;
        atomic_write(path.as_ref(), text.as_bytes())
    }

    /// Copy with different parameters (re-validated).
    pub fn with_params(&self, params: PlannerParams) -> Result<Self> {
        params.validate()?;
        let mut s = self.clone();
        s.params = params;
        Ok(s)
    }
}
