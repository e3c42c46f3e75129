//! Brute-force oracles shared by the integration tests.

#![allow(dead_code)]

use coverplan::world::{CellState, VoxelGrid};
use coverplan::Vec3;

pub const RES: f64 = 0.25;

pub fn world(dims: [usize; 3], occ: &[bool]) -> VoxelGrid {
    let mut g = VoxelGrid::new(Vec3::new(-0.5, 0.3, 0.1), RES, dims, CellState::Free).unwrap();
    for (i, &o) in occ.iter().enumerate().take(g.len()) {
        if o {
            g.set_linear(i, CellState::Occupied);
        }
    }
    g
}

pub fn unit(theta: f64, z: f64) -> Vec3 {
    let r = (1.0 - z * z).sqrt();
    Vec3::new(r * theta.cos(), r * theta.sin(), z)
}

/// Entry parameter of the ray into each occupied cell (slab test); the first
/// hit is the smallest entry with a nonempty overlap.
pub fn slab_first_hit(g: &VoxelGrid, o: &Vec3, d: &Vec3, max_range: f64) -> Option<([usize; 3], f64)> {
    let geo = g.geometry();
    let res = geo.resolution();
    let mut best: Option<([usize; 3], f64)> = None;
    for i in g.occupied_indices() {
        let c = geo.unlinear(i);
        let lo = geo.center(c) - Vec3::repeat(0.5 * res);
        let hi = lo + Vec3::repeat(res);
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < lo[a] || o[a] >= hi[a] {
                    t1 = -1.0;
                }
            } else {
                let (u, v) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
                t0 = t0.max(u.min(v));
                t1 = t1.min(u.max(v));
            }
        }
        if t1 > t0 && t0 <= max_range && best.is_none_or(|(_, b)| t0 < b) {
            best = Some((c, t0));
        }
    }
    best
}

/// First occupied cell met by sampling the ray densely.
pub fn dense_first_hit(g: &VoxelGrid, o: &Vec3, d: &Vec3, max_range: f64) -> Option<([usize; 3], f64)> {
    let step = g.geometry().resolution() / 400.0;
    let n = (max_range / step) as usize;
    (0..=n).map(|k| k as f64 * step).find_map(|t| {
        let c = g.geometry().cell_of(&(o + d * t))?;
        (g.state(c) == CellState::Occupied).then_some((c, t))
    })
}

/// Truncated distance from `p` to the nearest occupied cell center.
pub fn brute_distance(g: &VoxelGrid, p: &Vec3, cap: f64) -> f64 {
    let geo = g.geometry();
    g.occupied_indices().into_iter().map(|i| (geo.center_linear(i) - p).norm()).fold(cap, f64::min)
}
