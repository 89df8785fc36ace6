//! Procedural RGBD scenes: a textured plane rendered from arbitrary camera
//! poses, for tests and CPU-scale training runs.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{relative_pose, save_depth, DepthEncoding, ManifestRecord, RgbImage};
use crate::error::Result;
use crate::geometry::{axis_angle, CameraIntrinsics, DepthMap, RigidTransform};

#[derive(Debug, Clone)]
struct Blob {
    a: f64,
    b: f64,
    inv_two_r2: f64,
    reach2: f64,
    color: [f64; 3],
}

/// An infinite plane carrying a non-repeating pattern of colored blobs.
#[derive(Debug, Clone)]
pub struct TexturedPlane {
    origin: Vector3<f64>,
    normal: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    base: [f64; 3],
    blobs: Vec<Blob>,
}

/// Rendered color and depth of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub rgb: RgbImage,
    pub depth: DepthMap,
}

impl TexturedPlane {
    /// Plane through `(0, 0, distance)` facing the origin, tilted by up to
    /// 15°, with 200 blobs over an 8 m square.
    pub fn random<R: Rng>(rng: &mut R, distance: f64) -> TexturedPlane {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
        let tilt = axis_angle(axis, rng.gen_range(0.0..15f64.to_radians()));
        let normal = tilt * Vector3::new(0.0, 0.0, -1.0);
        let u = Unit::new_normalize(normal.cross(&Vector3::y())).into_inner();
        let v = normal.cross(&u);
        let base = [0.5, 0.5, 0.5].map(|c: f64| c + rng.gen_range(-0.2..0.2));
        let blobs = (0..200)
            .map(|_| {
                let r: f64 = rng.gen_range(0.12..0.5);
                Blob {
                    a: rng.gen_range(-4.0..4.0),
                    b: rng.gen_range(-4.0..4.0),
                    inv_two_r2: 1.0 / (2.0 * r * r),
                    reach2: 9.0 * r * r,
                    color: [rng.gen(), rng.gen(), rng.gen()],
                }
            })
            .collect();
        TexturedPlane {
            origin: Vector3::new(0.0, 0.0, distance),
            normal,
            u,
            v,
            base,
            blobs,
        }
    }

    /// Texture color at plane coordinates `(a, b)` in meters.
    pub fn color(&self, a: f64, b: f64) -> [f64; 3] {
        let mut c = self.base;
        for blob in &self.blobs {
            let d2 = (a - blob.a).powi(2) + (b - blob.b).powi(2);
            if d2 > blob.reach2 {
                continue;
            }
            let w = (-d2 * blob.inv_two_r2).exp();
            for i in 0..3 {
                c[i] = c[i] * (1.0 - w) + blob.color[i] * w;
            }
        }
        c
    }

    /// Renders the view of a camera with pose `cam_to_world`, averaging a
    /// 2×2 grid of rays per pixel for color and using the center ray for
    /// depth. Pixels that miss the plane get depth 0 and the base color.
    pub fn render(&self, cam_to_world: &RigidTransform, k: &CameraIntrinsics) -> RenderedView {
        let (w, h) = (k.width as usize, k.height as usize);
        let plane = w * h;
        let mut rgb = vec![0.0; 3 * plane];
        let mut depth = vec![0.0; plane];
        let o = cam_to_world.translation;
        let hit = |x: f64, y: f64| -> Option<(f64, f64, f64)> {
            let d_cam = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
            let d = cam_to_world.rotation * d_cam;
            let denom = self.normal.dot(&d);
            if denom.abs() < 1e-12 {
                return None;
            }
            let s = self.normal.dot(&(self.origin - o)) / denom;
            if s <= 0.0 {
                return None;
            }
            let p = o + d * s - self.origin;
            Some((s, self.u.dot(&p), self.v.dot(&p)))
        };
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if let Some((z, _, _)) = hit(x as f64, y as f64) {
                    depth[i] = z;
                }
                let mut acc = [0.0; 3];
                for (dx, dy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                    let c = match hit(x as f64 + dx, y as f64 + dy) {
                        Some((_, a, b)) => self.color(a, b),
                        None => self.base,
                    };
                    (0..3).for_each(|ch| acc[ch] += 0.25 * c[ch]);
                }
                (0..3).for_each(|ch| rgb[ch * plane + i] = acc[ch]);
            }
        }
        RenderedView {
            rgb: RgbImage::new(w, h, rgb).expect("sized buffer"),
            depth: DepthMap::new(w, h, depth).expect("sized buffer"),
        }
    }
}

/// Pinhole camera used for synthetic views (256×256, ~54° field of view).
pub fn synthetic_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(250.0, 250.0, 127.5, 127.5, 256, 256).expect("valid constants")
}

/// Random rigid motion with rotation angle ≤ `max_rot_deg` about a random
/// axis and translation of length ≤ `max_trans`.
pub fn random_motion<R: Rng>(rng: &mut R, max_trans: f64, max_rot_deg: f64) -> RigidTransform {
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let angle = rng.gen_range(0.0..=max_rot_deg.to_radians());
    let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let t = dir.normalize() * rng.gen_range(0.0..=max_trans);
    RigidTransform::new(axis_angle(axis, angle), t)
}

/// A reference view at the world origin and a query view at `query_pose`.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub reference: RenderedView,
    pub query: RenderedView,
    pub reference_pose: RigidTransform,
    pub query_pose: RigidTransform,
    /// `T^q_r`.
    pub t_gt: RigidTransform,
    pub intrinsics: CameraIntrinsics,
}

/// `count` pairs, each on its own random plane 2–3 m away.
pub fn synthetic_pairs(count: usize, seed: u64, max_trans: f64, max_rot_deg: f64) -> Vec<SyntheticPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = synthetic_intrinsics();
    (0..count)
        .map(|_| {
            let distance = rng.gen_range(2.0..3.0);
            let scene = TexturedPlane::random(&mut rng, distance);
            let reference_pose = RigidTransform::identity();
            let query_pose = random_motion(&mut rng, max_trans, max_rot_deg);
            SyntheticPair {
                reference: scene.render(&reference_pose, &k),
                query: scene.render(&query_pose, &k),
                t_gt: relative_pose(&query_pose, &reference_pose),
                reference_pose,
                query_pose,
                intrinsics: k,
            }
        })
        .collect()
}

/// Query-to-reference motion bound `(meters, degrees)` of the candidate
/// selection fixture.
pub const SELECTION_FIXTURE_MOTION: (f64, f64) = (0.02, 1.0);

/// The ground-truth pose followed by a 5° rotation offset and a 0.3 m
/// translation offset of it.
pub fn perturbed_candidates(t_gt: &RigidTransform) -> [RigidTransform; 3] {
    let rot = RigidTransform::new(axis_angle(Vector3::new(0.3, 1.0, 0.2), 5f64.to_radians()), Vector3::zeros());
    let shift = RigidTransform::from_translation(Vector3::new(0.3, 0.0, 0.0));
    [*t_gt, rot.compose(t_gt), shift.compose(t_gt)]
}

/// Writes `frames` views of one random plane as a manifest dataset under
/// `dir` (PNG color, millimeter PNG depth, `manifest.jsonl`). The camera
/// poses are drawn around the origin within `max_trans` / `max_rot_deg`.
pub fn write_synthetic_dataset(
    dir: &Path,
    frames: usize,
    seed: u64,
    max_trans: f64,
    max_rot_deg: f64,
) -> Result<Vec<RigidTransform>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = synthetic_intrinsics();
    let scene = TexturedPlane::random(&mut rng, 2.5);
    fs::create_dir_all(dir)?;
    let mut manifest = fs::File::create(dir.join("manifest.jsonl"))?;
    let mut poses = Vec::with_capacity(frames);
    let enc = DepthEncoding {
        scale: 1000.0,
        invalid: None,
    };
    for i in 0..frames {
        let pose = if i == 0 {
            RigidTransform::identity()
        } else {
            random_motion(&mut rng, max_trans, max_rot_deg)
        };
        let view = scene.render(&pose, &k);
        let rgb = format!("frame-{i:04}.color.png");
        let depth = format!("frame-{i:04}.depth.png");
        view.rgb.save(&dir.join(&rgb))?;
        save_depth(&dir.join(&depth), &view.depth, &enc)?;
        let record = ManifestRecord {
            id: Some(format!("frame-{i:04}")),
            sequence: Some("synthetic".into()),
            rgb,
            depth,
            pose: pose.to_row_major().to_vec(),
            intrinsics: k,
            depth_scale: Some(enc.scale),
            depth_invalid: None,
            timestamp: None,
        };
        let line = serde_json::to_string(&record).map_err(|e| crate::Error::Config(e.to_string()))?;
        writeln!(manifest, "{line}")?;
        poses.push(pose);
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_view_depth_matches_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scene = TexturedPlane::random(&mut rng, 2.5);
        let k = CameraIntrinsics::new(40.0, 40.0, 15.5, 15.5, 32, 32).unwrap();
        let view = scene.render(&RigidTransform::identity(), &k);
        assert_eq!(view.depth.valid_count(), 32 * 32);
        // The center ray hits the plane close to its anchor point.
        let z = view.depth.get(16, 16);
        assert!((z - 2.5).abs() < 0.3, "{z}");
        assert!(view.rgb.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn motion_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let m = random_motion(&mut rng, 0.4, 12.0);
            assert!(m.translation.norm() <= 0.4 + 1e-12);
            assert!(crate::geometry::angular_error(&m.rotation) <= 12f64.to_radians() + 1e-9);
        }
    }
}
