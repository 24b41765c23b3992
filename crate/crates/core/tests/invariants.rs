//! Property checks on the public API.

use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use uwbcalib::fim::degeneracy_flags;
use uwbcalib::io::fmt_f64;
use uwbcalib::par::{map_indexed, Execution};
use uwbcalib::sim::montecarlo::Summary;

fn point() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-20.0..20.0f64).prop_map(Vector3::from)
}

proptest! {
    #[test]
    fn csv_floats_round_trip_bitwise(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let back: f64 = fmt_f64(x).parse().unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }

    #[test]
    fn serial_and_parallel_maps_agree(n in 0usize..200, k in 1u64..1000) {
        let f = |i: usize| (i as u64).wrapping_mul(k) ^ 0x9e37;
        prop_assert_eq!(map_indexed(n, Execution::Serial, f), map_indexed(n, Execution::Parallel, f));
    }

    #[test]
    fn degeneracy_is_invariant_under_rigid_motion(
        pts in prop::collection::vec(point(), 4..30),
        shift in point(),
        axis in point(),
        angle in -3.0..3.0f64,
    ) {
        let rot = if axis.norm() > 1e-3 {
            Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
        } else {
            Rotation3::identity()
        };
        let moved: Vec<_> = pts.iter().map(|p| rot * p + shift).collect();
        let a = degeneracy_flags(&pts);
        let b = degeneracy_flags(&moved);
        prop_assert_eq!(a.is_static, b.is_static);
        prop_assert_eq!(a.collinear, b.collinear);
        prop_assert_eq!(a.planar, b.planar);
    }

    #[test]
    fn points_on_a_line_are_collinear(
        origin in point(),
        dir in point().prop_filter("nonzero", |d| d.norm() > 0.1),
        ts in prop::collection::vec(-5.0..5.0f64, 3..20),
    ) {
        prop_assume!(ts.iter().any(|t| (t - ts[0]).abs() > 0.5));
        let pts: Vec<_> = ts.iter().map(|t| origin + dir * *t).collect();
        let flags = degeneracy_flags(&pts);
        prop_assert!(flags.collinear && flags.planar && !flags.is_static);
    }

    #[test]
    fn summary_moments_are_ordered(xs in prop::collection::vec(-1e3..1e3f64, 1..100)) {
        let s = Summary::of(&xs).unwrap();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(s.count, xs.len());
        prop_assert!(lo <= s.mean + 1e-9 && s.mean <= hi + 1e-9);
        prop_assert!(lo <= s.median && s.median <= hi);
        prop_assert!(s.std >= 0.0);
        prop_assert!(s.rmse + 1e-9 >= s.mean.abs());
    }
}
