//! Raycast and distance-field checks against brute-force oracles on small
//! random worlds.

mod support;

use coverplan::world::raycast::raycast;
use coverplan::world::DistanceField;
use coverplan::Vec3;
use proptest::prelude::*;
use support::{brute_distance, dense_first_hit, slab_first_hit, unit, world, RES};

fn world_strategy() -> impl Strategy<Value = coverplan::world::VoxelGrid> {
    (1usize..=10, 1usize..=10, 1usize..=10)
        .prop_filter("at most 1000 cells", |(x, y, z)| x * y * z <= 1000)
        .prop_flat_map(|(x, y, z)| {
            (Just([x, y, z]), prop::collection::vec(prop::bool::weighted(0.15), x * y * z))
        })
        .prop_map(|(dims, occ)| world(dims, &occ))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn raycast_matches_slab_and_dense_oracles(
        g in world_strategy(),
        fo in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        theta in 0.0f64..std::f64::consts::TAU,
        z in -1.0f64..1.0,
        max_range in 0.1f64..4.0,
    ) {
        let (lo, hi) = g.geometry().bounds();
        let o = lo + (hi - lo).component_mul(&Vec3::new(fo.0, fo.1, fo.2));
        prop_assume!(g.geometry().contains(&o));
        let d = unit(theta, z);
        let got = raycast(&g, &o, &d, max_range).unwrap();
        let slab = slab_first_hit(&g, &o, &d, max_range);
        prop_assert_eq!(got.map(|h| h.cell), slab.map(|s| s.0));
        if let (Some(h), Some((_, t))) = (got, slab) {
            prop_assert!((h.entry - t).abs() <= 1e-9);
        }
        // Dense sampling can miss corner clips shorter than its step; when it
        // does find a hit, the distance agrees within half a cell.
        if let (Some(h), Some((_, t))) = (got, dense_first_hit(&g, &o, &d, max_range)) {
            prop_assert!((h.entry - t).abs() <= 0.5 * RES);
        }
    }

    #[test]
    fn raycast_hit_is_monotone_in_max_range(
        g in world_strategy(),
        fo in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        theta in 0.0f64..std::f64::consts::TAU,
        z in -1.0f64..1.0,
        r1 in 0.1f64..3.0,
        extra in 0.0f64..3.0,
    ) {
        let (lo, hi) = g.geometry().bounds();
        let o = lo + (hi - lo).component_mul(&Vec3::new(fo.0, fo.1, fo.2));
        prop_assume!(g.geometry().contains(&o));
        let d = unit(theta, z);
        let near = raycast(&g, &o, &d, r1).unwrap();
        let far = raycast(&g, &o, &d, r1 + extra).unwrap();
        if let Some(h) = near {
            prop_assert_eq!(far.map(|f| f.cell), Some(h.cell));
        }
    }

    #[test]
    fn distance_field_matches_brute_force(g in world_strategy(), trunc in 0.3f64..2.0) {
        let df = DistanceField::compute(&g, trunc).unwrap();
        let geo = g.geometry();
        for i in 0..g.len() {
            let brute = brute_distance(&g, &geo.center_linear(i), trunc);
            prop_assert!((df.at_linear(i) - brute).abs() <= 1e-9, "cell {}: {} vs {}", i, df.at_linear(i), brute);
        }
    }

    #[test]
    fn clearance_matches_brute_force(
        g in world_strategy(),
        f in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 20),
        cap in 0.1f64..2.0,
    ) {
        let df = DistanceField::compute(&g, 2.0).unwrap();
        let geo = g.geometry();
        let (lo, hi) = geo.bounds();
        for fo in f {
            let p = lo + (hi - lo).component_mul(&Vec3::new(fo.0, fo.1, fo.2));
            let brute = brute_distance(&g, &p, cap);
            prop_assert!((df.clearance(&p, cap) - brute).abs() <= 1e-9);
        }
    }
}
