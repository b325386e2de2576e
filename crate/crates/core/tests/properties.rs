use nalgebra::Vector3;
use parereg_core::estimator::procrustes;
use parereg_core::geom::{random_rotation, KnnIndex};
use parereg_core::metrics::rotation_error;
use parereg_core::vn::{l2_normalize, vn_linear, vn_relu, VnLinear, VnNonlinearity};
use parereg_core::{Point3, PointCloud, RigidTransform, VectorFeature};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), n)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bucketed_knn_matches_exhaustive(reference in points(1..200), queries in points(1..40), k in 1usize..12) {
        let r = PointCloud::new(reference).unwrap();
        let q = PointCloud::new(queries).unwrap();
        let a = KnnIndex::exhaustive(&r).unwrap().graph(&q, k);
        let b = KnnIndex::bucketed(&r).unwrap().graph(&q, k);
        for i in 0..q.len() {
            prop_assert_eq!(a.sq_distances(i), b.sq_distances(i));
        }
    }

    #[test]
    fn procrustes_inverts_a_motion(src in points(3..60), seed in any::<u64>(), t in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)) {
        let spread = src.iter().map(|p| (p - src[0]).norm()).fold(0.0, f64::max);
        prop_assume!(spread > 1e-3);
        let m = RigidTransform::new(random_rotation(seed), Vector3::new(t.0, t.1, t.2));
        let dst: Vec<Point3> = src.iter().map(|p| m.apply(p)).collect();
        if let Ok(fit) = procrustes(&src, &dst, None) {
            prop_assert!(rotation_error(&fit.r, &m.r) < 1e-6);
            prop_assert!((fit.t - m.t).norm() < 1e-6);
        }
    }

    #[test]
    fn vn_layers_commute_with_rotation(seed in any::<u64>(), c in 1usize..10, out in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = VectorFeature::<f64>::from_matrix(parereg_core::params::uniform(&mut rng, c, 3, 1.0)).unwrap();
        let lin = VnLinear::<f64>::random(&mut rng, out, c);
        let act = VnNonlinearity::<f64>::random(&mut rng, out);
        let r = random_rotation(seed ^ 1);
        let run = |x: &VectorFeature<f64>| vn_relu(&act, &l2_normalize(&vn_linear(&lin, x).unwrap())).unwrap();
        let a = run(&f).rotated(&r);
        let b = run(&f.rotated(&r));
        prop_assert!((a.as_matrix() - b.as_matrix()).amax() < 1e-9);
    }
}
