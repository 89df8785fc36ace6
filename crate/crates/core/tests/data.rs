use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpr_core::data::{
    generate_pairs, load_dataset, load_depth, overlap_ratio, preprocess, preprocess_images, relative_pose, save_depth,
    DatasetFormat, DepthEncoding, Frame, LoadOptions, RgbImage,
};
use rpr_core::geometry::{angular_error, axis_angle, backproject, project, CameraIntrinsics, DepthMap, RigidTransform};
use rpr_core::synthetic::write_synthetic_dataset;
use rpr_core::Error;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Closed forms written by `tests/fixtures/generate.py`.
fn fixture_rgb(k: usize, x: usize, y: usize) -> [u8; 3] {
    [((x * 30 + k) % 256) as u8, ((y * 40 + k) % 256) as u8, ((x * y + 7 * k) % 256) as u8]
}

fn fixture_depth_raw(k: usize, x: usize, y: usize) -> u16 {
    (1000 + 100 * x + 10 * y + k) as u16
}

#[rustfmt::skip]
const SEVEN_POSES: [[f64; 16]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0, 0.25, 0.0, 1.0, 0.0, -0.125, 0.0, 0.0, 1.0, 0.5, 0.0, 0.0, 0.0, 1.0],
    [0.0, -1.0, 0.0, 1.5, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.75, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0, -3.0, 0.0, -1.0, 0.0, 0.0625, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0],
];

fn check_rgb(img: &RgbImage, k: usize) {
    assert_eq!((img.width, img.height), (8, 6));
    for y in 0..6 {
        for x in 0..8 {
            let want = fixture_rgb(k, x, y);
            for c in 0..3 {
                assert_eq!(img.data[c * 48 + y * 8 + x], f64::from(want[c]) / 255.0);
            }
        }
    }
}

#[test]
fn seven_scenes_fixture_round_trips_bit_exact() {
    let ds = load_dataset(&fixtures().join("sevenscenes"), DatasetFormat::SevenScenes, &LoadOptions::default()).unwrap();
    assert_eq!(ds.frames.len(), 5);
    assert_eq!(ds.skipped, 0);
    for (k, f) in ds.frames.iter().enumerate() {
        assert_eq!(f.id, format!("seq-01/frame-{k:06}"));
        assert_eq!(f.sequence, "seq-01");
        assert_eq!(f.pose.to_row_major(), SEVEN_POSES[k]);
        assert_eq!(f.intrinsics.width, 8);
        check_rgb(&f.load_rgb().unwrap(), k);
        let d = f.load_depth().unwrap();
        for y in 0..6 {
            for x in 0..8 {
                let want = match (k, x, y) {
                    (0, 3, 2) | (0, 0, 0) => 0.0,
                    _ => f64::from(fixture_depth_raw(k, x, y)) / 1000.0,
                };
                assert_eq!(d.get(x, y), want, "frame {k} pixel ({x},{y})");
            }
        }
    }
}

#[test]
fn depth_sentinels_decode_to_invalid() {
    let f = &load_dataset(&fixtures().join("sevenscenes"), DatasetFormat::SevenScenes, &LoadOptions::default())
        .unwrap()
        .frames[0];
    let d = f.load_depth().unwrap();
    assert!(!DepthMap::is_valid_depth(d.get(3, 2)));
    assert!(!DepthMap::is_valid_depth(d.get(0, 0)));
    assert_eq!(d.valid_count(), 46);
    assert!(d.data.iter().all(|z| z.is_finite() && *z >= 0.0));
}

#[test]
fn depth_png_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let src = fixtures().join("sevenscenes/seq-01/frame-000003.depth.png");
    let d = load_depth(&src, &DepthEncoding::SEVEN_SCENES).unwrap();
    let out = dir.path().join("d.png");
    save_depth(&out, &d, &DepthEncoding::SEVEN_SCENES).unwrap();
    assert_eq!(std::fs::read(&out).map(|_| ()).ok(), Some(()));
    assert_eq!(load_depth(&out, &DepthEncoding::SEVEN_SCENES).unwrap(), d);
    let tum = load_depth(&out, &DepthEncoding::TUM).unwrap();
    assert_eq!(tum.get(1, 1), f64::from(fixture_depth_raw(3, 1, 1)) / 5000.0);
}

#[test]
fn tum_fixture_associates_and_skips() {
    let root = fixtures().join("tum");
    let ds = load_dataset(&root, DatasetFormat::Tum, &LoadOptions::default()).unwrap();
    assert_eq!(ds.skipped, 1);
    let ts: Vec<f64> = ds.frames.iter().map(|f| f.timestamp.unwrap()).collect();
    assert_eq!(ts, vec![100.0, 100.5, 101.5]);
    assert_eq!(ds.frames[1].depth_path, root.join("depth/100.495.png"));

    // Unit quaternions with 0/±1 entries give exactly representable rotations.
    let poses = [
        RigidTransform::identity(),
        RigidTransform::new(Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)), Vector3::new(0.5, 0.0, -0.25)),
        RigidTransform::new(Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0)), Vector3::new(2.0, 0.0, 0.125)),
    ];
    for ((f, want), k) in ds.frames.iter().zip(&poses).zip([10, 11, 13]) {
        assert_eq!(f.pose.to_row_major(), want.to_row_major());
        check_rgb(&f.load_rgb().unwrap(), k);
        let d = f.load_depth().unwrap();
        assert_eq!(d.get(2, 4), f64::from(fixture_depth_raw(k, 2, 4) * 5) / 5000.0);
    }
}

#[test]
fn layout_errors() {
    let dir = tempfile::tempdir().unwrap();
    let opts = LoadOptions::default();
    assert!(matches!(load_dataset(dir.path(), DatasetFormat::SevenScenes, &opts), Err(Error::Layout { .. })));
    assert!(matches!(load_dataset(dir.path(), DatasetFormat::Tum, &opts), Err(Error::Layout { .. })));

    let seq = dir.path().join("seq-01");
    std::fs::create_dir(&seq).unwrap();
    let src = fixtures().join("sevenscenes/seq-01");
    std::fs::copy(src.join("frame-000000.color.png"), seq.join("frame-000000.color.png")).unwrap();
    std::fs::copy(src.join("frame-000000.depth.png"), seq.join("frame-000000.depth.png")).unwrap();
    assert!(matches!(load_dataset(dir.path(), DatasetFormat::SevenScenes, &opts), Err(Error::MissingPose(_))));

    let tum = dir.path().join("tum");
    std::fs::create_dir(&tum).unwrap();
    std::fs::write(tum.join("rgb.txt"), "1.0 rgb/a.png\n").unwrap();
    std::fs::write(tum.join("depth.txt"), "5.0 depth/a.png\n").unwrap();
    std::fs::write(tum.join("groundtruth.txt"), "1.0 0 0 0 0 0 0 1\n").unwrap();
    assert!(matches!(load_dataset(&tum, DatasetFormat::Tum, &opts), Err(Error::AssociationFailure { skipped: 1 })));
}

#[test]
fn manifest_loader_reads_synthetic_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let poses = write_synthetic_dataset(dir.path(), 3, 1, 0.3, 10.0).unwrap();
    let ds = load_dataset(dir.path(), DatasetFormat::Manifest, &LoadOptions::default()).unwrap();
    assert_eq!(ds.frames.len(), 3);
    for (f, p) in ds.frames.iter().zip(&poses) {
        assert_eq!(f.pose.to_row_major(), p.to_row_major());
        assert_eq!(f.sequence, "synthetic");
        let pre = preprocess(f).unwrap();
        assert_eq!(pre.image.shape(), &[3, 256, 256]);
        assert_eq!((pre.depth.width, pre.depth.height), (256, 256));
    }
    std::fs::write(dir.path().join("manifest.jsonl"), "{\"rgb\": \"a.png\"}\n").unwrap();
    assert!(load_dataset(dir.path(), DatasetFormat::Manifest, &LoadOptions::default()).is_err());
}

fn frame_at(i: usize, pose: RigidTransform, sequence: &str) -> Frame {
    Frame {
        id: format!("f{i}"),
        sequence: sequence.into(),
        rgb_path: PathBuf::new(),
        depth_path: PathBuf::new(),
        pose,
        intrinsics: CameraIntrinsics::new(585.0, 585.0, 320.0, 240.0, 640, 480).unwrap(),
        depth_encoding: DepthEncoding::SEVEN_SCENES,
        timestamp: None,
    }
}

fn random_frames(seed: u64, n: usize, spread: f64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let t = Vector3::new(rng.gen_range(-spread..spread), rng.gen_range(-spread..spread), rng.gen_range(-0.5..0.5));
            let seq = if rng.gen_bool(0.5) { "seq-01" } else { "seq-02" };
            frame_at(i, RigidTransform::new(axis_angle(axis, rng.gen_range(0.0..0.8)), t), seq)
        })
        .collect()
}

/// Pairs via 4×4 matrices and an independent trace formula.
fn pair_oracle(frames: &[Frame], trans: f64, rot_deg: f64, cross: bool) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for q in frames {
        for r in frames {
            if q.id == r.id || (cross && q.sequence == r.sequence) {
                continue;
            }
            let m = q.pose.to_homogeneous().try_inverse().unwrap() * r.pose.to_homogeneous();
            let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
            let angle = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]).norm();
            if t <= trans && angle.to_degrees() <= rot_deg {
                out.push((q.id.clone(), r.id.clone()));
            }
        }
    }
    out
}

fn ids(pairs: &[rpr_core::data::FramePair]) -> Vec<(String, String)> {
    pairs.iter().map(|p| (p.query.id.clone(), p.reference.id.clone())).collect()
}

#[test]
fn pairs_match_brute_force_seed_6() {
    let frames = random_frames(6, 10, 1.2);
    let pairs = generate_pairs(&frames, 1.5, 30.0, false);
    assert!(!pairs.is_empty());
    assert_eq!(ids(&pairs), pair_oracle(&frames, 1.5, 30.0, false));
    for p in &pairs {
        let oracle = p.query.pose.to_homogeneous().try_inverse().unwrap() * p.reference.pose.to_homogeneous();
        assert!((p.t_gt.to_homogeneous() - oracle).abs().max() < 1e-12);
    }
    let cross = generate_pairs(&frames, 1.5, 30.0, true);
    assert_eq!(ids(&cross), pair_oracle(&frames, 1.5, 30.0, true));
}

#[test]
fn pair_closed_cases() {
    let same = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
    let pairs = generate_pairs(&[frame_at(0, same, "a"), frame_at(1, same, "a")], 1.5, 30.0, false);
    assert_eq!(pairs.len(), 2);
    assert!(pairs.iter().all(|p| p.t_gt == RigidTransform::identity()));
    let far = RigidTransform::from_translation(Vector3::new(3.0, 2.0, 3.0));
    assert!(generate_pairs(&[frame_at(0, same, "a"), frame_at(1, far, "a")], 1.5, 30.0, false).is_empty());
    assert!(generate_pairs(&[frame_at(0, same, "a")], 1.5, 30.0, false).is_empty());
}

#[test]
fn preprocess_intrinsics_examples() {
    let k = CameraIntrinsics::new(500.0, 500.0, 255.5, 255.5, 512, 512).unwrap();
    let rgb = RgbImage::new(512, 512, vec![0.5; 3 * 512 * 512]).unwrap();
    let p = preprocess_images(&rgb, &DepthMap::filled(512, 512, 2.0), &k).unwrap();
    assert_eq!((p.intrinsics.fx, p.intrinsics.cx), (250.0, 127.5));

    let k256 = CameraIntrinsics::new(200.0, 210.0, 127.5, 128.0, 256, 256).unwrap();
    let rgb = RgbImage::new(256, 256, vec![0.25; 3 * 256 * 256]).unwrap();
    let p = preprocess_images(&rgb, &DepthMap::filled(256, 256, 1.0), &k256).unwrap();
    assert_eq!(p.intrinsics, k256);
    let again = preprocess_images(&rgb, &p.depth, &p.intrinsics).unwrap();
    assert_eq!(again, p);

    let bad = RgbImage::new(10, 10, vec![0.0; 300]).unwrap();
    assert!(preprocess_images(&bad, &DepthMap::filled(10, 10, 1.0), &k256).is_err());
}

#[test]
fn anisotropic_rescale_is_projectively_consistent() {
    let k = CameraIntrinsics::new(585.0, 575.0, 320.0, 240.0, 640, 480).unwrap();
    let k2 = k.scaled_to(256, 256);
    assert_eq!(k2.fx, 585.0 * 0.4);
    assert!((k2.fy - 575.0 * 256.0 / 480.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let p = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..4.0));
        let (u, u2) = (project(&p, &k).unwrap(), project(&p, &k2).unwrap());
        // Continuous coordinates with centers on integers map by (u + 0.5)s − 0.5.
        let expect = Vector2::new((u.x + 0.5) * 0.4 - 0.5, (u.y + 0.5) * 256.0 / 480.0 - 0.5);
        assert!((u2 - expect).norm() < 1e-6);
    }
}

/// Per-pixel recomputation with explicit backprojection and projection.
fn overlap_oracle(t: &RigidTransform, d: &DepthMap, k: &CameraIntrinsics) -> f64 {
    let mut hit = 0;
    for y in 0..d.height {
        for x in 0..d.width {
            let z = d.get(x, y);
            if !(z > 0.0) {
                continue;
            }
            let p = t.transform_point(&backproject(Vector2::new(x as f64, y as f64), z, k).unwrap());
            if let Ok(u) = project(&p, k) {
                if u.x >= 0.0 && u.x <= (d.width - 1) as f64 && u.y >= 0.0 && u.y <= (d.height - 1) as f64 {
                    hit += 1;
                }
            }
        }
    }
    hit as f64 / (d.width * d.height) as f64
}

fn k32() -> CameraIntrinsics {
    CameraIntrinsics::new(40.0, 40.0, 15.5, 15.5, 32, 32).unwrap()
}

#[test]
fn overlap_closed_cases() {
    let mut d = DepthMap::filled(32, 32, 2.0);
    for x in 0..32 {
        d.data[x] = 0.0;
    }
    assert_eq!(overlap_ratio(&RigidTransform::identity(), &d, &k32()).unwrap(), 31.0 / 32.0);
    let yaw = RigidTransform::new(axis_angle(Vector3::y(), PI), Vector3::zeros());
    assert_eq!(overlap_ratio(&yaw, &d, &k32()).unwrap(), 0.0);
    assert_eq!(overlap_ratio(&yaw, &DepthMap::filled(32, 32, 0.0), &k32()).unwrap(), 0.0);
}

#[test]
fn overlap_matches_per_pixel_oracle_seed_12() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let t = RigidTransform::new(
            axis_angle(axis, rng.gen_range(0.0..0.3)),
            Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
        );
        let data = (0..1024).map(|_| if rng.gen_bool(0.9) { rng.gen_range(0.5..4.0) } else { 0.0 }).collect();
        let d = DepthMap::new(32, 32, data).unwrap();
        let r = overlap_ratio(&t, &d, &k32()).unwrap();
        assert!((0.0..=1.0).contains(&r));
        assert!((r - overlap_oracle(&t, &d, &k32())).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pairs_are_symmetric_and_match_oracle(seed in any::<u64>(), n in 2usize..50) {
        let frames = random_frames(seed, n, 1.5);
        let pairs = generate_pairs(&frames, 1.5, 30.0, false);
        let got = ids(&pairs);
        prop_assert_eq!(&got, &pair_oracle(&frames, 1.5, 30.0, false));
        for (q, r) in &got {
            prop_assert!(got.contains(&(r.clone(), q.clone())));
        }
        for p in &pairs {
            prop_assert!(p.t_gt.translation.norm() <= 1.5);
            prop_assert!(angular_error(&relative_pose(&p.query.pose, &p.reference.pose).rotation) <= 30f64.to_radians());
        }
    }

    #[test]
    fn depth_encoding_round_trips_raw_values(raw in 1u16..65535) {
        let e = DepthEncoding::SEVEN_SCENES;
        prop_assert_eq!(e.encode(e.decode(raw)), raw);
        let t = DepthEncoding::TUM;
        prop_assert_eq!(t.encode(t.decode(raw)), raw);
    }
}
