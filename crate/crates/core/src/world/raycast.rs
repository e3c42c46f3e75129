//! Voxel traversal (Amanatides-Woo DDA) and visibility queries.
//!
//! Cells are visited in order of the ray parameter at which the ray enters
//! them; each step costs O(1). Unknown cells count as opaque for [`raycast`].

use super::grid::{CellState, GridGeometry, VoxelGrid, FACE_OFFSETS};
use crate::{Error, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub cell: [usize; 3],
    /// Distance (m) from the origin to the hit cell center; 0 when the origin
    /// is already inside the hit cell.
    pub distance: f64,
    /// Ray parameter (m) at which the ray enters the hit cell.
    pub entry: f64,
    pub state: CellState,
}

/// Walk the cells crossed by `origin + t * dir`, `t` in `[0, max_range]`.
///
/// `visit(cell, t_entry)` returns `true` to stop. The walk also ends when the
/// ray leaves the grid. Returns the cell and entry parameter at which `visit`
/// stopped, if it did.
pub fn traverse<F>(
    geo: &GridGeometry,
    origin: &Vec3,
    dir: &Vec3,
    max_range: f64,
    mut visit: F,
) -> Option<([usize; 3], f64)>
where
    F: FnMut([usize; 3], f64) -> bool,
{
    let res = geo.resolution();
    let rel = (origin - geo.origin()) / res;
    let mut cell = geo.checked(geo.signed_cell(origin))?;
    let mut step = [0i64; 3];
    let mut t_next = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        if dir[a] > 0.0 {
            step[a] = 1;
            t_next[a] = ((cell[a] as f64 + 1.0) - rel[a]) * res / dir[a];
            t_delta[a] = res / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            t_next[a] = (cell[a] as f64 - rel[a]) * res / dir[a];
            t_delta[a] = -res / dir[a];
        }
    }
    let mut t = 0.0;
    loop {
        if visit(cell, t) {
            return Some((cell, t));
        }
        let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
            0
        } else if t_next[1] <= t_next[2] {
            1
        } else {
            2
        };
        t = t_next[axis];
        if !(t <= max_range) {
            return None;
        }
        let next = cell[axis] as i64 + step[axis];
        if next < 0 || next as usize >= geo.dims()[axis] {
            return None;
        }
        cell[axis] = next as usize;
        t_next[axis] += t_delta[axis];
    }
}

fn check_ray(grid: &GridGeometry, origin: &Vec3, dir: &Vec3) -> Result<()> {
    if (dir.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "ray direction must be unit length, got norm {}",
            dir.norm()
        )));
    }
    if !grid.contains(origin) {
        return Err(Error::Domain(format!(
            "ray origin ({:.3}, {:.3}, {:.3}) is outside the grid",
            origin.x, origin.y, origin.z
        )));
    }
    Ok(())
}

/// First non-Free cell along the ray within `max_range`.
pub fn raycast(grid: &VoxelGrid, origin: &Vec3, dir: &Vec3, max_range: f64) -> Result<Option<RayHit>> {
    raycast_with(grid.geometry(), origin, dir, max_range, |i| {
        grid.state_linear(i) != CellState::Free
    })
    .map(|hit| {
        hit.map(|(cell, entry)| RayHit {
            cell,
            distance: if entry == 0.0 {
                0.0
            } else {
                (grid.geometry().center(cell) - origin).norm()
            },
            entry,
            state: grid.state(cell),
        })
    })
}

/// First cell along the ray for which `opaque(linear_index)` holds.
pub fn raycast_with<F>(
    geo: &GridGeometry,
    origin: &Vec3,
    dir: &Vec3,
    max_range: f64,
    opaque: F,
) -> Result<Option<([usize; 3], f64)>>
where
    F: Fn(usize) -> bool,
{
    check_ray(geo, origin, dir)?;
    Ok(traverse(geo, origin, dir, max_range, |c, _| opaque(geo.linear(c))))
}

/// True when the open segment `from -> to` crosses no opaque cell.
///
/// The cell containing `to` is not examined, so `to` may sit on the boundary
/// of an opaque cell.
pub fn segment_clear<F>(geo: &GridGeometry, from: &Vec3, to: &Vec3, opaque: F) -> bool
where
    F: Fn(usize) -> bool,
{
    let d = to - from;
    let len = d.norm();
    if len < 1e-12 {
        return geo.cell_of(from).is_none_or(|c| !opaque(geo.linear(c)));
    }
    let dir = d / len;
    if !geo.contains(from) {
        return false;
    }
    traverse(geo, from, &dir, len - 1e-7, |c, _| opaque(geo.linear(c))).is_none()
}

/// Whether any exposed face of `cell` is visible from `from`.
///
/// A face counts when it faces `from` and the segment from `from` to the face
/// center crosses only non-opaque cells. Aiming at faces rather than the cell
/// center keeps grazing views of flat surfaces from being shadowed by the
/// neighbouring surface cell.
pub fn cell_visible<F>(geo: &GridGeometry, from: &Vec3, cell: [usize; 3], opaque: F) -> bool
where
    F: Fn(usize) -> bool,
{
    visible_face(geo, from, cell, &opaque).is_some()
}

/// Center of the first visible face of `cell` from `from`, if any.
pub fn visible_face<F>(geo: &GridGeometry, from: &Vec3, cell: [usize; 3], opaque: &F) -> Option<Vec3>
where
    F: Fn(usize) -> bool,
{
    let center = geo.center(cell);
    let half = 0.5 * geo.resolution();
    for off in FACE_OFFSETS.iter() {
        let n = Vec3::new(off[0] as f64, off[1] as f64, off[2] as f64);
        let face = center + n * half;
        if (from - face).dot(&n) <= 1e-12 {
            continue;
        }
        if segment_clear(geo, from, &face, opaque) {
            return Some(face);
        }
    }
    None
}
