//! Voxel world model shared by all planners.

pub mod camera;
pub mod distance;
pub mod grid;
pub mod obstacle;
pub mod raycast;
pub mod scenario;

pub use camera::CameraModel;
pub use distance::DistanceField;
pub use grid::{CellState, GridGeometry, VoxelGrid};
pub use obstacle::{Motion, Obstacle, ObstacleKind, ObstacleState, Shape};
pub use raycast::{cell_visible, raycast, RayHit};
pub use scenario::{RobotStart, Scenario, WorldExtras};
