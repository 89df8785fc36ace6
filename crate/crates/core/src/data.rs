//! Dataset ingestion, preprocessing to network resolution, training-pair
//! generation and overlap analysis.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_error, rigid_flow, CameraIntrinsics, DepthMap, RigidTransform};
use crate::model::{IMAGENET_MEAN, IMAGENET_STD, INPUT_SIZE};
use crate::tensor::Tensor;

/// Maximum timestamp gap when associating TUM streams, in seconds.
pub const TUM_MAX_DT: f64 = 0.02;

/// RGB image, channel-first, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<RgbImage> {
        if data.len() != 3 * width * height {
            return Err(Error::shape("RgbImage", 3 * width * height, data.len()));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn load(path: &Path) -> Result<RgbImage> {
        let img = image::open(path)
            .map_err(|e| decode_error(path, e))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[c * w * h + y as usize * w + x as usize] = f64::from(p.0[c]) / 255.0;
            }
        }
        Ok(RgbImage { width: w, height: h, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let plane = self.width * self.height;
        let img = ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            Rgb([0, 1, 2].map(|c| (self.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8))
        });
        img.save(path).map_err(|e| decode_error(path, e))
    }

    /// Bilinear resize with pixel centers on integers
    /// (`src = (dst + 0.5)·scale − 0.5`, clamped to the border).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> RgbImage {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let taps = |dst: usize, scale: f64, len: usize| {
            let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, s - i0 as f64)
        };
        let xs: Vec<_> = (0..width).map(|x| taps(x, sx, self.width)).collect();
        let (src_plane, plane) = (self.width * self.height, width * height);
        let mut data = vec![0.0; 3 * plane];
        for y in 0..height {
            let (y0, y1, fy) = taps(y, sy, self.height);
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                for c in 0..3 {
                    let src = &self.data[c * src_plane..(c + 1) * src_plane];
                    let top = src[y0 * self.width + x0] * (1.0 - fx) + src[y0 * self.width + x1] * fx;
                    let bot = src[y1 * self.width + x0] * (1.0 - fx) + src[y1 * self.width + x1] * fx;
                    data[c * plane + y * width + x] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        RgbImage { width, height, data }
    }

    /// Per-channel `(v − mean) / std` with the backbone's statistics.
    pub fn normalized(&self) -> Tensor {
        let plane = self.width * self.height;
        let mut data = self.data.clone();
        for c in 0..3 {
            data[c * plane..(c + 1) * plane]
                .iter_mut()
                .for_each(|v| *v = (*v - IMAGENET_MEAN[c]) / IMAGENET_STD[c]);
        }
        Tensor::from_vec(&[3, self.height, self.width], data).expect("consistent image size")
    }
}

fn decode_error(path: &Path, e: impl fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// How raw 16-bit depth values map to meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEncoding {
    /// Raw units per meter.
    pub scale: f64,
    /// Raw value marking a missing measurement besides 0.
    pub invalid: Option<u16>,
}

impl DepthEncoding {
    /// Millimeters, `65535` invalid.
    pub const SEVEN_SCENES: DepthEncoding = DepthEncoding {
        scale: 1000.0,
        invalid: Some(65535),
    };
    /// Fifths of a millimeter.
    pub const TUM: DepthEncoding = DepthEncoding {
        scale: 5000.0,
        invalid: None,
    };

    pub fn decode(&self, raw: u16) -> f64 {
        if raw == 0 || Some(raw) == self.invalid {
            0.0
        } else {
            f64::from(raw) / self.scale
        }
    }

    pub fn encode(&self, meters: f64) -> u16 {
        if !DepthMap::is_valid_depth(meters) {
            return 0;
        }
        let max = self.invalid.map_or(u16::MAX, |v| v.saturating_sub(1));
        (meters * self.scale).round().clamp(1.0, f64::from(max)) as u16
    }
}

/// Decodes a 16-bit single-channel depth PNG to meters; invalid pixels
/// become 0.
pub fn load_depth(path: &Path, enc: &DepthEncoding) -> Result<DepthMap> {
    let img = image::open(path).map_err(|e| decode_error(path, e))?;
    let img = match img {
        image::DynamicImage::ImageLuma16(i) => i,
        other => {
            return Err(decode_error(
                path,
                format!("expected 16-bit grayscale depth, got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| enc.decode(p.0[0])).collect();
    DepthMap::new(w, h, data)
}

pub fn save_depth(path: &Path, depth: &DepthMap, enc: &DepthEncoding) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(depth.width as u32, depth.height as u32, |x, y| {
            Luma([enc.encode(depth.get(x as usize, y as usize))])
        });
    img.save(path).map_err(|e| decode_error(path, e))
}

/// One posed RGBD frame on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub id: String,
    pub sequence: String,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
    /// `T^M`: camera to map frame.
    pub pose: RigidTransform,
    /// At the native image resolution.
    pub intrinsics: CameraIntrinsics,
    pub depth_encoding: DepthEncoding,
    pub timestamp: Option<f64>,
}

impl Frame {
    pub fn load_rgb(&self) -> Result<RgbImage> {
        RgbImage::load(&self.rgb_path)
    }

    pub fn load_depth(&self) -> Result<DepthMap> {
        load_depth(&self.depth_path, &self.depth_encoding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    SevenScenes,
    Tum,
    Manifest,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sevenscenes" | "7scenes" => Ok(DatasetFormat::SevenScenes),
            "tum" => Ok(DatasetFormat::Tum),
            "manifest" => Ok(DatasetFormat::Manifest),
            _ => Err(Error::Config(format!("unknown dataset format {s:?}"))),
        }
    }
}

/// Loaded frames plus the number of frames skipped during association.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Replaces the format's default intrinsics (given at their own
    /// resolution, rescaled to the images).
    pub intrinsics: Option<CameraIntrinsics>,
}

/// 7Scenes Kinect intrinsics at 640×480.
pub fn seven_scenes_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(585.0, 585.0, 320.0, 240.0, 640, 480).expect("valid constants")
}

/// Default TUM intrinsics at 640×480.
pub fn tum_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).expect("valid constants")
}

fn layout(path: &Path, reason: impl Into<String>) -> Error {
    Error::Layout {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn intrinsics_for(image: &Path, base: CameraIntrinsics) -> Result<CameraIntrinsics> {
    let (w, h) = image::image_dimensions(image).map_err(|e| decode_error(image, e))?;
    Ok(if (w, h) == (base.width, base.height) {
        base
    } else {
        base.scaled_to(w, h)
    })
}

pub fn load_dataset(root: &Path, format: DatasetFormat, opts: &LoadOptions) -> Result<Dataset> {
    let ds = match format {
        DatasetFormat::SevenScenes => load_seven_scenes(root, opts)?,
        DatasetFormat::Tum => load_tum(root, opts)?,
        DatasetFormat::Manifest => load_manifest(root)?,
    };
    if ds.frames.is_empty() {
        return Err(if ds.skipped > 0 {
            Error::AssociationFailure { skipped: ds.skipped }
        } else {
            layout(root, "no frames found")
        });
    }
    Ok(ds)
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| layout(dir, e.to_string()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.sort();
    Ok(v)
}

fn load_seven_scenes(root: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let base = opts.intrinsics.unwrap_or_else(seven_scenes_intrinsics);
    let seqs: Vec<PathBuf> = sorted_dir(root)?
        .into_iter()
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seq-")))
        .collect();
    if seqs.is_empty() {
        return Err(layout(root, "no seq-XX directories"));
    }
    let mut frames = Vec::new();
    for seq in seqs {
        let seq_name = seq.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        for p in sorted_dir(&seq)? {
            let Some(name) = p.file_name().and_then(|n| n.to_str()) else { continue };
            let Some(stem) = name.strip_suffix(".color.png") else { continue };
            let pose_path = seq.join(format!("{stem}.pose.txt"));
            let depth_path = seq.join(format!("{stem}.depth.png"));
            let text = fs::read_to_string(&pose_path)
                .map_err(|_| Error::MissingPose(pose_path.display().to_string()))?;
            let pose = RigidTransform::parse_pose_text(&text).map_err(|e| layout(&pose_path, e.to_string()))?;
            if !depth_path.exists() {
                return Err(layout(&depth_path, "missing depth image"));
            }
            frames.push(Frame {
                id: format!("{seq_name}/{stem}"),
                sequence: seq_name.clone(),
                intrinsics: intrinsics_for(&p, base)?,
                rgb_path: p,
                depth_path,
                pose,
                depth_encoding: DepthEncoding::SEVEN_SCENES,
                timestamp: None,
            });
        }
    }
    Ok(Dataset { frames, skipped: 0 })
}

fn read_tum_list(path: &Path, min_fields: usize) -> Result<Vec<(f64, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| layout(path, e.to_string()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < min_fields {
            return Err(layout(path, format!("line {}: expected {min_fields} fields", n + 1)));
        }
        let ts = fields[0]
            .parse::<f64>()
            .map_err(|e| layout(path, format!("line {}: {e}", n + 1)))?;
        out.push((ts, fields[1..].iter().map(|s| s.to_string()).collect()));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Index of the entry nearest to `t` within `max_dt` in a time-sorted list.
fn nearest<T>(list: &[(f64, T)], t: f64, max_dt: f64) -> Option<usize> {
    let i = list.partition_point(|e| e.0 < t);
    [i.checked_sub(1), (i < list.len()).then_some(i)]
        .into_iter()
        .flatten()
        .min_by(|&a, &b| (list[a].0 - t).abs().total_cmp(&(list[b].0 - t).abs()))
        .filter(|&j| (list[j].0 - t).abs() <= max_dt)
}

fn load_tum(root: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let base = opts.intrinsics.unwrap_or_else(tum_intrinsics);
    let rgb = read_tum_list(&root.join("rgb.txt"), 2)?;
    let depth = read_tum_list(&root.join("depth.txt"), 2)?;
    let gt = read_tum_list(&root.join("groundtruth.txt"), 8)?;
    let sequence = root.file_name().and_then(|n| n.to_str()).unwrap_or("tum").to_string();
    let mut frames = Vec::new();
    let mut skipped = 0;
    for (ts, fields) in &rgb {
        let (Some(d), Some(g)) = (nearest(&depth, *ts, TUM_MAX_DT), nearest(&gt, *ts, TUM_MAX_DT)) else {
            skipped += 1;
            continue;
        };
        let v: Vec<f64> = gt[g]
            .1
            .iter()
            .take(7)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| layout(&root.join("groundtruth.txt"), e.to_string()))?;
        let q = UnitQuaternion::from_quaternion(Quaternion::new(v[6], v[3], v[4], v[5]));
        let pose = RigidTransform::new(q.to_rotation_matrix().into_inner(), Vector3::new(v[0], v[1], v[2]));
        let rgb_path = root.join(&fields[0]);
        frames.push(Frame {
            id: format!("{sequence}/{}", fields[0]),
            sequence: sequence.clone(),
            intrinsics: intrinsics_for(&rgb_path, base)?,
            rgb_path,
            depth_path: root.join(&depth[d].1[0]),
            pose,
            depth_encoding: DepthEncoding::TUM,
            timestamp: Some(*ts),
        });
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} rgb frames without depth or pose within {TUM_MAX_DT} s", root.display());
    }
    Ok(Dataset { frames, skipped })
}

/// One line of a JSON-lines manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub sequence: Option<String>,
    pub rgb: String,
    pub depth: String,
    /// Row-major 4×4 camera-to-map matrix.
    pub pose: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    /// Raw depth units per meter (default 1000).
    #[serde(default)]
    pub depth_scale: Option<f64>,
    #[serde(default)]
    pub depth_invalid: Option<u16>,
    #[serde(default)]
    pub timestamp: Option<f64>,
}

fn load_manifest(root: &Path) -> Result<Dataset> {
    let (dir, file) = if root.is_dir() {
        (root.to_path_buf(), root.join("manifest.jsonl"))
    } else {
        (root.parent().unwrap_or(Path::new(".")).to_path_buf(), root.to_path_buf())
    };
    let text = fs::read_to_string(&file).map_err(|e| layout(&file, e.to_string()))?;
    let mut frames = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ManifestRecord =
            serde_json::from_str(line).map_err(|e| layout(&file, format!("line {}: {e}", n + 1)))?;
        if r.pose.len() != 16 {
            return Err(Error::MissingPose(format!("{} line {}", file.display(), n + 1)));
        }
        let pose = RigidTransform::from_row_major(&r.pose)?;
        if !pose.is_valid() {
            return Err(layout(&file, format!("line {}: pose is not rigid", n + 1)));
        }
        r.intrinsics.validate()?;
        frames.push(Frame {
            id: r.id.clone().unwrap_or_else(|| r.rgb.clone()),
            sequence: r.sequence.clone().unwrap_or_default(),
            rgb_path: dir.join(&r.rgb),
            depth_path: dir.join(&r.depth),
            pose,
            intrinsics: r.intrinsics,
            depth_encoding: DepthEncoding {
                scale: r.depth_scale.unwrap_or(1000.0),
                invalid: r.depth_invalid,
            },
            timestamp: r.timestamp,
        });
    }
    Ok(Dataset { frames, skipped: 0 })
}

/// A training/evaluation sample with `T_gt = T^q_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub query: Frame,
    pub reference: Frame,
    pub t_gt: RigidTransform,
}

/// `T^q_r = (T^M_q)⁻¹ · T^M_r`: reference camera to query camera.
pub fn relative_pose(query: &RigidTransform, reference: &RigidTransform) -> RigidTransform {
    query.inverse().compose(reference)
}

/// All ordered pairs `(query, reference)`, `i ≠ j`, whose relative motion
/// is within both thresholds; with `cross_sequence_only` pairs inside one
/// sequence are dropped.
pub fn generate_pairs(frames: &[Frame], trans_thresh: f64, rot_thresh_deg: f64, cross_sequence_only: bool) -> Vec<FramePair> {
    let rot_thresh = rot_thresh_deg.to_radians();
    let mut pairs = Vec::new();
    for (i, q) in frames.iter().enumerate() {
        for (j, r) in frames.iter().enumerate() {
            if i == j || (cross_sequence_only && q.sequence == r.sequence) {
                continue;
            }
            let t = relative_pose(&q.pose, &r.pose);
            if t.translation.norm() <= trans_thresh && angular_error(&t.rotation) <= rot_thresh {
                pairs.push(FramePair {
                    query: q.clone(),
                    reference: r.clone(),
                    t_gt: t,
                });
            }
        }
    }
    pairs
}

/// A frame at network resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    /// Normalized `[3, 256, 256]`.
    pub image: Tensor,
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
}

/// Resizes to 256×256 (RGB bilinear, depth nearest), normalizes the RGB and
/// rescales the intrinsics.
pub fn preprocess_images(rgb: &RgbImage, depth: &DepthMap, k: &CameraIntrinsics) -> Result<Preprocessed> {
    if (rgb.width, rgb.height) != (k.width as usize, k.height as usize) {
        return Err(Error::shape(
            "preprocess intrinsics",
            format!("{}x{}", rgb.width, rgb.height),
            format!("{}x{}", k.width, k.height),
        ));
    }
    let s = INPUT_SIZE;
    Ok(Preprocessed {
        image: rgb.resize_bilinear(s, s).normalized(),
        depth: depth.resize_nearest(s, s).sanitized(),
        intrinsics: k.scaled_to(s as u32, s as u32),
    })
}

pub fn preprocess(frame: &Frame) -> Result<Preprocessed> {
    preprocess_images(&frame.load_rgb()?, &frame.load_depth()?, &frame.intrinsics)
}

/// Fraction of reference pixels whose ground-truth warp lands inside the
/// query image in front of the camera (0 when no depth is valid).
pub fn overlap_ratio(t_gt: &RigidTransform, depth: &DepthMap, k: &CameraIntrinsics) -> Result<f64> {
    if depth.valid_count() == 0 {
        return Ok(0.0);
    }
    let flow = rigid_flow(t_gt, depth, k)?;
    Ok(flow.valid_count() as f64 / (depth.width * depth.height) as f64)
}
