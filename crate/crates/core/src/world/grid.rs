use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

/// Lattice geometry shared by grids, distance fields and surface sets.
///
/// Cells are addressed either by `[x, y, z]` indices or by a linear index with
/// x varying fastest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    origin: Vec3,
    resolution: f64,
    dims: [usize; 3],
}

/// The 6 face-neighbor offsets.
pub const FACE_OFFSETS: [[i64; 3]; 6] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

impl GridGeometry {
    pub fn new(origin: Vec3, resolution: f64, dims: [usize; 3]) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::field("grid.resolution_m", "must be > 0"));
        }
        if dims.contains(&0) {
            return Err(Error::field("grid.dims", "every dimension must be >= 1"));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::field("grid.origin_m", "must be finite"));
        }
        Ok(GridGeometry {
            origin,
            resolution,
            dims,
        })
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    #[inline]
    pub fn unlinear(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let yz = i / self.dims[0];
        [x, yz % self.dims[1], yz / self.dims[1]]
    }

    /// Signed cell coordinates of a point; may be out of bounds.
    #[inline]
    pub fn signed_cell(&self, p: &Vec3) -> [i64; 3] {
        let r = (p - self.origin) / self.resolution;
        [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
    }

    #[inline]
    pub fn checked(&self, c: [i64; 3]) -> Option<[usize; 3]> {
        if c[0] < 0 || c[1] < 0 || c[2] < 0 {
            return None;
        }
        let u = [c[0] as usize, c[1] as usize, c[2] as usize];
        if u[0] >= self.dims[0] || u[1] >= self.dims[1] || u[2] >= self.dims[2] {
            return None;
        }
        Some(u)
    }

    /// Cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        self.checked(self.signed_cell(p))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.cell_of(p).is_some()
    }

    #[inline]
    pub fn center(&self, c: [usize; 3]) -> Vec3 {
        self.origin
            + Vec3::new(
                (c[0] as f64 + 0.5) * self.resolution,
                (c[1] as f64 + 0.5) * self.resolution,
                (c[2] as f64 + 0.5) * self.resolution,
            )
    }

    #[inline]
    pub fn center_linear(&self, i: usize) -> Vec3 {
        self.center(self.unlinear(i))
    }

    /// Minimum and maximum corner of the grid volume.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let ext = Vec3::new(
            self.dims[0] as f64,
            self.dims[1] as f64,
            self.dims[2] as f64,
        ) * self.resolution;
        (self.origin, self.origin + ext)
    }

    /// In-bounds neighbors within the 26-neighborhood.
    pub fn neighbors26(&self, c: [usize; 3]) -> impl Iterator<Item = [usize; 3]> + '_ {
        let base = [c[0] as i64, c[1] as i64, c[2] as i64];
        (-1i64..=1)
            .flat_map(|dz| (-1i64..=1).flat_map(move |dy| (-1i64..=1).map(move |dx| [dx, dy, dz])))
            .filter(|d| *d != [0, 0, 0])
            .filter_map(move |d| self.checked([base[0] + d[0], base[1] + d[1], base[2] + d[2]]))
    }

    /// In-bounds face neighbors with the offset that reaches them.
    pub fn neighbors6(&self, c: [usize; 3]) -> impl Iterator<Item = ([i64; 3], [usize; 3])> + '_ {
        let base = [c[0] as i64, c[1] as i64, c[2] as i64];
        FACE_OFFSETS.iter().filter_map(move |d| {
            self.checked([base[0] + d[0], base[1] + d[1], base[2] + d[2]])
                .map(|n| (*d, n))
        })
    }
}

/// 3D occupancy lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    geometry: GridGeometry,
    cells: Vec<CellState>,
}

impl VoxelGrid {
    pub fn new(origin: Vec3, resolution: f64, dims: [usize; 3], fill: CellState) -> Result<Self> {
        let geometry = GridGeometry::new(origin, resolution, dims)?;
        Ok(Self::with_geometry(geometry, fill))
    }

    pub fn with_geometry(geometry: GridGeometry, fill: CellState) -> Self {
        VoxelGrid {
            cells: vec![fill; geometry.len()],
            geometry,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn state(&self, c: [usize; 3]) -> CellState {
        self.cells[self.geometry.linear(c)]
    }

    #[inline]
    pub fn state_linear(&self, i: usize) -> CellState {
        self.cells[i]
    }

    #[inline]
    pub fn set(&mut self, c: [usize; 3], s: CellState) {
        let i = self.geometry.linear(c);
        self.cells[i] = s;
    }

    #[inline]
    pub fn set_linear(&mut self, i: usize, s: CellState) {
        self.cells[i] = s;
    }

    pub fn is_free(&self, c: [usize; 3]) -> bool {
        self.state(c) == CellState::Free
    }

    pub fn is_occupied_linear(&self, i: usize) -> bool {
        self.cells[i] == CellState::Occupied
    }

    /// State of the cell containing `p`; `None` outside the grid.
    pub fn state_at(&self, p: &Vec3) -> Option<CellState> {
        self.geometry.cell_of(p).map(|c| self.state(c))
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    /// Sorted linear indices of all Occupied cells.
    pub fn occupied_indices(&self) -> Vec<usize> {
        self.indices_in(CellState::Occupied)
    }

    pub fn indices_in(&self, state: CellState) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == state)
            .map(|(i, _)| i)
            .collect()
    }

    /// Set every cell whose center lies in the closed box `[min, max]`.
    pub fn fill_box(&mut self, min: Vec3, max: Vec3, state: CellState) {
        for i in 0..self.cells.len() {
            let c = self.geometry.center_linear(i);
            if (0..3).all(|a| c[a] >= min[a] && c[a] <= max[a]) {
                self.cells[i] = state;
            }
        }
    }

    /// Set every cell whose center lies inside a vertical cylinder.
    pub fn fill_cylinder(&mut self, base: Vec3, radius: f64, height: f64, state: CellState) {
        for i in cylinder_cells(&self.geometry, base, radius, height) {
            self.cells[i] = state;
        }
    }
}

/// Linear indices of cells whose centers lie inside a vertical cylinder.
pub fn cylinder_cells(geo: &GridGeometry, base: Vec3, radius: f64, height: f64) -> Vec<usize> {
    let lo = geo.signed_cell(&(base - Vec3::new(radius, radius, 0.0)));
    let hi = geo.signed_cell(&(base + Vec3::new(radius, radius, height)));
    let dims = geo.dims();
    let clamp = |v: i64, d: usize| v.clamp(0, d as i64 - 1) as usize;
    let mut out = Vec::new();
    if hi[0] < 0 || hi[1] < 0 || hi[2] < 0 {
        return out;
    }
    for z in clamp(lo[2], dims[2])..=clamp(hi[2], dims[2]) {
        for y in clamp(lo[1], dims[1])..=clamp(hi[1], dims[1]) {
            for x in clamp(lo[0], dims[0])..=clamp(hi[0], dims[0]) {
                let c = geo.center([x, y, z]);
                let dx = c.x - base.x;
                let dy = c.y - base.y;
                if dx * dx + dy * dy <= radius * radius && c.z >= base.z && c.z <= base.z + height {
                    out.push(geo.linear([x, y, z]));
                }
            }
        }
    }
    out
}

/// Run-length encode a sorted list of linear indices as `[start, len]` pairs.
pub fn rle_encode(sorted: &[usize]) -> Vec<[usize; 2]> {
    let mut out: Vec<[usize; 2]> = Vec::new();
    for &i in sorted {
        match out.last_mut() {
            Some(run) if run[0] + run[1] == i => run[1] += 1,
            _ => out.push([i, 1]),
        }
    }
    out
}

pub fn rle_decode(runs: &[[usize; 2]]) -> Vec<usize> {
    runs.iter().flat_map(|r| r[0]..r[0] + r[1]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> VoxelGrid {
        VoxelGrid::new(Vec3::new(-1.0, 0.5, 2.0), 0.2, [7, 5, 3], CellState::Free).unwrap()
    }

    #[test]
    fn rejects_bad_geometry() {
        let e = VoxelGrid::new(Vec3::zeros(), -0.2, [2, 2, 2], CellState::Free).unwrap_err();
        assert!(e.to_string().contains("resolution"));
        assert!(VoxelGrid::new(Vec3::zeros(), 0.2, [0, 2, 2], CellState::Free).is_err());
    }

    #[test]
    fn index_round_trip_every_cell() {
        let g = grid();
        let geo = g.geometry();
        for i in 0..g.len() {
            let c = geo.unlinear(i);
            assert_eq!(geo.linear(c), i);
            assert_eq!(geo.cell_of(&geo.center(c)), Some(c));
        }
    }

    #[test]
    fn neighbor_counts() {
        let g = grid();
        assert_eq!(g.geometry().neighbors26([0, 0, 0]).count(), 7);
        assert_eq!(g.geometry().neighbors26([3, 2, 1]).count(), 26);
        assert_eq!(g.geometry().neighbors6([3, 2, 1]).count(), 6);
    }

    #[test]
    fn cylinder_fill_is_vertical_disc() {
        let mut g = VoxelGrid::new(Vec3::zeros(), 0.2, [20, 20, 10], CellState::Free).unwrap();
        g.fill_cylinder(Vec3::new(2.0, 2.0, 0.0), 0.3, 1.0, CellState::Occupied);
        let occ = g.occupied_indices();
        assert!(!occ.is_empty());
        for i in occ {
            let c = g.geometry().center_linear(i);
            assert!(((c.x - 2.0).powi(2) + (c.y - 2.0).powi(2)).sqrt() <= 0.3 + 1e-12);
            assert!(c.z <= 1.0);
        }
    }

    proptest! {
        #[test]
        fn rle_round_trip(mut v in proptest::collection::vec(0usize..500, 0..100)) {
            v.sort();
            v.dedup();
            prop_assert_eq!(rle_decode(&rle_encode(&v)), v);
        }

        #[test]
        fn point_to_cell_consistent(x in -1.0f64..0.4, y in 0.5f64..1.5, z in 2.0f64..2.6) {
            let g = grid();
            let p = Vec3::new(x, y, z);
            if let Some(c) = g.geometry().cell_of(&p) {
                let center = g.geometry().center(c);
                prop_assert!((center - p).abs().max() <= 0.1 + 1e-9);
            }
        }
    }
}
