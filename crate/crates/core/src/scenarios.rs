//! Built-in desk-scale scenarios: a straight tunnel and a room with
//! partition walls, each with and without unforeseen content.
//!
//! Grids are 100 x 50 x 15 cells at 0.2 m. Everything that is not interior
//! space is Occupied, so every wall is at least two cells thick.

use crate::world::{CameraModel, CellState, Motion, Obstacle, ObstacleKind, RobotStart, Scenario, Shape, VoxelGrid, WorldExtras};
use crate::{PlannerParams, Result, Vec3};

pub const DIMS: [usize; 3] = [100, 50, 15];
pub const RESOLUTION: f64 = 0.2;

/// Names of the shipped scenarios, in a fixed order.
pub const NAMES: [&str; 4] = ["corridor_static", "corridor_obstacles", "room_static", "room_obstacles"];

/// Inclusive cell box.
type CellBox = ([usize; 3], [usize; 3]);

fn carve(grid: &mut VoxelGrid, b: CellBox, state: CellState) {
    for z in b.0[2]..=b.1[2] {
        for y in b.0[1]..=b.1[1] {
            for x in b.0[0]..=b.1[0] {
                grid.set([x, y, z], state);
            }
        }
    }
}

/// Occupied cells in the wall band with a horizontally adjacent Free cell.
pub fn wall_surfaces(grid: &VoxelGrid) -> Vec<usize> {
    let geo = grid.geometry();
    let dims = geo.dims();
    (0..grid.len())
        .filter(|&i| {
            let c = geo.unlinear(i);
            if grid.state(c) != CellState::Occupied || c[2] == 0 || c[2] + 1 >= dims[2] {
                return false;
            }
            geo.neighbors6(c)
                .any(|(off, n)| off[2] == 0 && grid.state(n) == CellState::Free)
        })
        .collect()
}

fn solid() -> VoxelGrid {
    VoxelGrid::new(Vec3::zeros(), RESOLUTION, DIMS, CellState::Occupied).expect("valid dims")
}

fn walker(waypoints: Vec<[f64; 3]>, speed: f64, phase: f64) -> Obstacle {
    Obstacle {
        kind: ObstacleKind::Dynamic,
        shape: Shape::Cylinder {
            base_center_m: waypoints[0],
            radius_m: 0.3,
            height_m: 1.8,
        },
        motion: Some(Motion {
            waypoints_m: waypoints,
            speed_mps: speed,
            phase_s: phase,
        }),
    }
}

fn static_box(min: [f64; 3], max: [f64; 3]) -> Obstacle {
    Obstacle {
        kind: ObstacleKind::Static,
        shape: Shape::Box { min_m: min, max_m: max },
        motion: None,
    }
}

fn assemble(reference: VoxelGrid, extras: WorldExtras, dynamic: Vec<Obstacle>, start: Vec3) -> Result<Scenario> {
    let surfaces = wall_surfaces(&reference);
    Scenario::new(
        reference,
        surfaces,
        extras,
        dynamic,
        RobotStart { position: start, yaw: 0.0 },
        CameraModel::default(),
        PlannerParams::default(),
        7,
    )
}

/// Tunnel: interior 19.2 m x 4.4 m x 2.6 m.
fn corridor_reference() -> VoxelGrid {
    let mut g = solid();
    carve(&mut g, ([2, 12, 1], [97, 33, 13]), CellState::Free);
    g
}

pub fn corridor(with_obstacles: bool) -> Result<Scenario> {
    let reference = corridor_reference();
    let (extras, dynamic) = if with_obstacles {
        let extras = WorldExtras {
            obstacles: vec![
                // Shelving just off the south wall, shadowing a full viewpoint column.
                static_box([8.2, 2.6, 0.2], [9.4, 3.2, 2.6]),
                // Equipment stand on a north-side viewpoint.
                static_box([15.8, 5.2, 0.2], [16.2, 5.6, 1.0]),
            ],
            occupied: vec![],
        };
        let dynamic = vec![
            walker(vec![[3.0, 4.6, 0.2], [17.0, 4.6, 0.2]], 0.5, 0.0),
            walker(vec![[16.0, 4.4, 0.2], [8.0, 4.4, 0.2]], 0.4, 6.0),
        ];
        (extras, dynamic)
    } else {
        (WorldExtras::default(), vec![])
    };
    assemble(reference, extras, dynamic, Vec3::new(1.5, 4.6, 1.0))
}

/// Room 19.2 m x 9.2 m with two partition walls and a pillar.
fn room_reference() -> VoxelGrid {
    let mut g = solid();
    carve(&mut g, ([2, 2, 1], [97, 47, 13]), CellState::Free);
    // Partition from the south wall.
    carve(&mut g, ([32, 2, 1], [33, 29, 13]), CellState::Occupied);
    // Partition from the north wall.
    carve(&mut g, ([66, 20, 1], [67, 47, 13]), CellState::Occupied);
    // Pillar.
    carve(&mut g, ([48, 22, 1], [52, 27, 13]), CellState::Occupied);
    g
}

pub fn room(with_obstacles: bool) -> Result<Scenario> {
    let reference = room_reference();
    let (extras, dynamic) = if with_obstacles {
        let extras = WorldExtras {
            obstacles: vec![
                // Cabinet just off the first partition's east face.
                static_box([7.0, 2.8, 0.2], [7.6, 3.6, 2.6]),
                // Equipment stand on a viewpoint beside the second partition.
                static_box([14.8, 6.6, 0.2], [15.2, 7.0, 1.0]),
            ],
            occupied: vec![],
        };
        let dynamic = vec![
            walker(vec![[15.5, 3.5, 0.2], [17.0, 3.5, 0.2], [17.0, 6.0, 0.2], [15.5, 6.0, 0.2]], 0.5, 0.0),
            walker(vec![[2.5, 7.4, 0.2], [10.0, 7.4, 0.2]], 0.4, 3.0),
        ];
        (extras, dynamic)
    } else {
        (WorldExtras::default(), vec![])
    };
    assemble(reference, extras, dynamic, Vec3::new(2.0, 5.0, 1.0))
}

/// Build a shipped scenario by name.
pub fn by_name(name: &str) -> Option<Result<Scenario>> {
    match name {
        "corridor_static" => Some(corridor(false)),
        "corridor_obstacles" => Some(corridor(true)),
        "room_static" => Some(room(false)),
        "room_obstacles" => Some(room(true)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_are_valid_and_surfaces_are_walls() {
        for name in NAMES {
            let s = by_name(name).unwrap().unwrap();
            assert_eq!(s.geometry().dims(), DIMS);
            assert!(!s.surfaces.is_empty());
            let geo = s.geometry();
            for &i in &s.surfaces {
                let c = geo.unlinear(i);
                assert!(c[2] >= 1 && c[2] <= 13);
            }
            let again = Scenario::from_json_str(&s.to_json_string().unwrap()).unwrap();
            assert_eq!(again, s);
        }
    }

    #[test]
    fn walls_are_at_least_two_cells_thick() {
        for g in [corridor_reference(), room_reference()] {
            let geo = *g.geometry();
            for i in wall_surfaces(&g) {
                let c = geo.unlinear(i);
                for (off, _) in geo.neighbors6(c).filter(|(o, n)| o[2] == 0 && g.state(*n) == CellState::Free) {
                    let back = [c[0] as i64 - off[0], c[1] as i64 - off[1], c[2] as i64];
                    let b = geo.checked(back).unwrap();
                    assert_eq!(g.state(b), CellState::Occupied, "thin wall at {c:?}");
                }
            }
        }
    }
}
