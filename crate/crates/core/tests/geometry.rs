use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3, Vector4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpr_core::geometry::{
    angular_error, axis_angle, backproject, orthonormality_error, pose_error, pose_from_9d, project, rigid_flow,
    rot_from_6d, CameraIntrinsics, DepthMap, Pose9D, RigidTransform,
};

fn uniform6(rng: &mut ChaCha8Rng) -> [f64; 6] {
    std::array::from_fn(|_| rng.gen_range(-1.0..1.0))
}

fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let angle = rng.gen_range(0.0..PI);
    let t = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    RigidTransform::new(axis_angle(axis, angle), t)
}

/// Homogeneous 4×4 built entry by entry, independent of the library's own
/// conversion.
fn homogeneous(t: &RigidTransform) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = t.rotation[(i, j)];
        }
        m[(i, 3)] = t.translation[i];
    }
    m[(3, 3)] = 1.0;
    m
}

/// Explicit 3×3 determinant by cofactor expansion.
fn det3(m: &Matrix3<f64>) -> f64 {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)]) - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

/// max |RᵀR − I| through explicit dot products of columns.
fn column_gram_error(r: &Matrix3<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[(k, i)] * r[(k, j)]).sum();
            worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

fn max_abs(m: &Matrix4<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

#[test]
fn six_d_seed_42_is_a_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let r = rot_from_6d(&uniform6(&mut rng)).unwrap();
    assert!(column_gram_error(&r) < 1e-6);
    assert!((det3(&r) - 1.0).abs() < 1e-6);
}

#[test]
fn pose_from_9d_seed_42_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let v: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let t = pose_from_9d(&Pose9D::from_slice(&v).unwrap()).unwrap();
    let round = homogeneous(&t) * homogeneous(&t.inverse());
    assert!(max_abs(&(round - Matrix4::identity())) < 1e-6);
    assert_eq!(t.translation, Vector3::new(v[6], v[7], v[8]));
}

#[test]
fn compose_seed_7_matches_homogeneous_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_transform(&mut rng);
    let b = random_transform(&mut rng);
    let got = homogeneous(&a.compose(&b));
    assert!(max_abs(&(got - homogeneous(&a) * homogeneous(&b))) < 1e-6);
}

#[test]
fn inverse_seed_3_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_transform(&mut rng);
    let id = t.compose(&t.inverse());
    assert!(max_abs(&(homogeneous(&id) - Matrix4::identity())) < 1e-6);
    let back = t.inverse().inverse();
    assert!(max_abs(&(homogeneous(&back) - homogeneous(&t))) < 1e-12);
    assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
}

#[test]
fn pose_error_seed_11_matches_homogeneous_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let est = random_transform(&mut rng);
    let gt = random_transform(&mut rng);
    let oracle = homogeneous(&est) * homogeneous(&gt).try_inverse().unwrap();
    assert!(max_abs(&(homogeneous(&pose_error(&est, &gt)) - oracle)) < 1e-6);
    let same = pose_error(&est, &est);
    assert!(max_abs(&(homogeneous(&same) - Matrix4::identity())) < 1e-9);
    let vs_id = pose_error(&est, &RigidTransform::identity());
    assert!(max_abs(&(homogeneous(&vs_id) - homogeneous(&est))) < 1e-12);
}

#[test]
fn angular_error_of_constructed_rotations() {
    let rz = Matrix3::new(
        (PI / 6.0).cos(),
        -(PI / 6.0).sin(),
        0.0,
        (PI / 6.0).sin(),
        (PI / 6.0).cos(),
        0.0,
        0.0,
        0.0,
        1.0,
    );
    assert!((angular_error(&rz) - PI / 6.0).abs() < 1e-9);
    assert_eq!(angular_error(&Matrix3::identity()), 0.0);
    let mut over = Matrix3::identity();
    over[(0, 0)] += 1e-12;
    assert_eq!(angular_error(&over), 0.0);
    let mut under = -Matrix3::identity();
    under[(2, 2)] = 1.0;
    under[(0, 0)] -= 1e-12;
    assert_eq!(angular_error(&under), PI);
}

#[test]
fn chained_compositions_stay_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let step = random_transform(&mut rng);
    let mut acc = RigidTransform::identity();
    for _ in 0..10_000 {
        acc = acc.compose(&step);
    }
    assert!(orthonormality_error(&acc.rotation) < 1e-9);
    assert!(acc.is_valid());
}

#[test]
fn round_trip_seed_5_and_unit_cases() {
    let k = CameraIntrinsics::new(525.0, 520.0, 319.5, 239.5, 640, 480).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let u = Vector2::new(rng.gen_range(0.0..639.0), rng.gen_range(0.0..479.0));
        let z = rng.gen_range(0.1..20.0);
        let back = project(&backproject(u, z, &k).unwrap(), &k).unwrap();
        assert!((back - u).norm() < 1e-6);
    }
    assert_eq!(backproject(Vector2::new(k.cx, k.cy), 2.0, &k).unwrap(), Vector3::new(0.0, 0.0, 2.0));
    let p = backproject(Vector2::new(k.cx + k.fx, k.cy), 1.0, &k).unwrap();
    assert!((p - Vector3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
    let k2 = CameraIntrinsics::new(100.0, 100.0, 128.0, 96.0, 256, 192).unwrap();
    assert_eq!(project(&Vector3::new(1.0, 0.0, 1.0), &k2).unwrap(), Vector2::new(228.0, 96.0));
    assert!(backproject(Vector2::zeros(), 0.0, &k).is_err());
    assert!(project(&Vector3::new(0.0, 0.0, 1e-7), &k).is_err());
}

#[test]
fn forward_translation_flow_matches_pointwise_oracle() {
    let k = CameraIntrinsics::new(30.0, 30.0, 15.5, 15.5, 32, 32).unwrap();
    let z = 2.0;
    let depth = DepthMap::filled(32, 32, z);
    let t = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -z * 0.1));
    let flow = rigid_flow(&t, &depth, &k).unwrap();
    for y in 0..32 {
        for x in 0..32 {
            let u = Vector2::new(x as f64, y as f64);
            let p = t.transform_point(&backproject(u, z, &k).unwrap());
            let w = project(&p, &k).unwrap() - u;
            let i = y * 32 + x;
            assert!((flow.flow[i] - w).norm() < 1e-6, "{x},{y}");
            let target = u + w;
            let inside = (0.0..=31.0).contains(&target.x) && (0.0..=31.0).contains(&target.y);
            assert_eq!(flow.valid[i], inside);
            // Moving toward the plane pushes pixels away from the principal point.
            let r = u - Vector2::new(k.cx, k.cy);
            assert!(w.dot(&r) >= 0.0);
        }
    }
}

#[test]
fn invalid_depth_pixels_are_invalid() {
    let k = CameraIntrinsics::new(10.0, 10.0, 3.5, 3.5, 8, 8).unwrap();
    let mut data = vec![1.5; 64];
    data[9] = 0.0;
    data[10] = -1.0;
    data[11] = f64::NAN;
    let flow = rigid_flow(&RigidTransform::identity(), &DepthMap::new(8, 8, data).unwrap(), &k).unwrap();
    assert_eq!(flow.valid_count(), 61);
    assert!(!flow.valid[9] && !flow.valid[10] && !flow.valid[11]);
}

/// The homogeneous-matrix oracle applied to a point.
fn apply_h(m: &Matrix4<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    let h = m * Vector4::new(p.x, p.y, p.z, 1.0);
    Vector3::new(h.x, h.y, h.z)
}

#[test]
fn transform_point_matches_homogeneous_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let t = random_transform(&mut rng);
        let p = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        assert!((t.transform_point(&p) - apply_h(&homogeneous(&t), &p)).norm() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gram_schmidt_is_scale_invariant(seed in any::<u64>(), l1 in 1e-3f64..1e3, l2 in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = uniform6(&mut rng);
        let mut s = r;
        s[..3].iter_mut().for_each(|v| *v *= l1);
        s[3..].iter_mut().for_each(|v| *v *= l2);
        let a = rot_from_6d(&r).unwrap();
        let b = rot_from_6d(&s).unwrap();
        prop_assert!((a - b).abs().max() < 1e-6);
    }

    #[test]
    fn six_d_output_is_a_rotation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rot_from_6d(&uniform6(&mut rng)).unwrap();
        prop_assert!(column_gram_error(&r) < 1e-6);
        prop_assert!((det3(&r) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn compose_with_inverse_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_transform(&mut rng);
        let id = t.compose(&t.inverse());
        prop_assert!(max_abs(&(homogeneous(&id) - Matrix4::identity())) < 1e-6);
        prop_assert!(angular_error(&id.rotation) < 1e-6);
    }

    #[test]
    fn axis_angle_error_is_exact(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0, angle in 0.0f64..PI) {
        prop_assume!(Vector3::new(ax, ay, az).norm() > 1e-3);
        let r = axis_angle(Vector3::new(ax, ay, az), angle);
        prop_assert!((angular_error(&r) - angle).abs() < 1e-9 || angle > PI - 1e-4);
    }

    #[test]
    fn angular_error_is_finite_and_bounded(seed in any::<u64>(), noise in -1e-9f64..1e-9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = random_transform(&mut rng).rotation;
        r[(0, 0)] += noise;
        let a = angular_error(&r);
        prop_assert!(a.is_finite() && (0.0..=PI).contains(&a));
    }

    #[test]
    fn projection_is_scale_invariant(x in -2.0f64..2.0, y in -2.0f64..2.0, z in 0.1f64..20.0, lambda in 1e-2f64..1e2) {
        let k = CameraIntrinsics::new(100.0, 90.0, 64.0, 48.0, 128, 96).unwrap();
        let p = Vector3::new(x, y, z);
        let a = project(&p, &k).unwrap();
        let b = project(&(p * lambda), &k).unwrap();
        prop_assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn project_backproject_round_trip(ux in 0.0f64..255.0, uy in 0.0f64..191.0, z in 0.1f64..20.0) {
        let k = CameraIntrinsics::new(220.0, 210.0, 127.5, 95.5, 256, 192).unwrap();
        let u = Vector2::new(ux, uy);
        let back = project(&backproject(u, z, &k).unwrap(), &k).unwrap();
        prop_assert!((back - u).norm() < 1e-6);
    }

    #[test]
    fn identity_flow_is_exactly_zero(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..16 * 12).map(|_| if rng.gen_bool(0.8) { rng.gen_range(0.1..20.0) } else { 0.0 }).collect();
        let depth = DepthMap::new(16, 12, data).unwrap();
        let k = CameraIntrinsics::new(rng.gen_range(5.0..50.0), rng.gen_range(5.0..50.0), 7.3, 5.9, 16, 12).unwrap();
        let flow = rigid_flow(&RigidTransform::identity(), &depth, &k).unwrap();
        for i in 0..16 * 12 {
            prop_assert_eq!(flow.valid[i], depth.data[i] > 0.0);
            if flow.valid[i] {
                prop_assert_eq!(flow.flow[i], Vector2::zeros());
            }
        }
    }

    #[test]
    fn pose_from_9d_satisfies_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..9).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t = pose_from_9d(&Pose9D::from_slice(&v).unwrap()).unwrap();
        prop_assert!(t.is_valid());
        prop_assert!(orthonormality_error(&t.rotation) < 1e-6);
    }
}
