//! SE(3)/SO(3) algebra, the 6D rotation parameterization, pinhole projection
//! and rigid flow.
//!
//! Frame convention: a relative pose `T^q_r` maps points expressed in the
//! reference camera into the query camera. Global poses `T^M_c` map camera
//! points into the map frame (camera-to-world).

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum norm accepted for either Gram–Schmidt input direction.
pub const DEGENERACY_EPS: f64 = 1e-8;
/// Minimum camera-frame depth accepted by [`project`].
pub const MIN_PROJECT_DEPTH: f64 = 1e-6;
/// Drift in `RᵀR − I` above which composition re-orthonormalizes.
const REORTHO_TOL: f64 = 1e-9;

/// The 9-vector regressed by the network: six rotation parameters followed by
/// a translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose9D {
    pub r: [f64; 6],
    pub t: [f64; 3],
}

impl Pose9D {
    pub const IDENTITY: Pose9D = Pose9D {
        r: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        t: [0.0; 3],
    };

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::shape("Pose9D", 9, v.len()));
        }
        let mut r = [0.0; 6];
        let mut t = [0.0; 3];
        r.copy_from_slice(&v[..6]);
        t.copy_from_slice(&v[6..]);
        Ok(Pose9D { r, t })
    }

    pub fn to_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..6].copy_from_slice(&self.r);
        out[6..].copy_from_slice(&self.t);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.t.iter()).all(|v| v.is_finite())
    }
}

/// Maps the 6D representation onto SO(3) by Gram–Schmidt.
///
/// The two 3-subvectors of `r` become the first two columns of the result
/// after orthonormalization; the third column is their cross product.
pub fn rot_from_6d(r: &[f64; 6]) -> Result<Matrix3<f64>> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateRotationInput("non-finite entry"));
    }
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if n1 < DEGENERACY_EPS {
        return Err(Error::DegenerateRotationInput("first column has zero norm"));
    }
    let b1 = a1 / n1;
    let ortho = a2 - b1 * b1.dot(&a2);
    let n2 = ortho.norm();
    if n2 < DEGENERACY_EPS {
        return Err(Error::DegenerateRotationInput(
            "second column is parallel to the first",
        ));
    }
    let b2 = ortho / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

pub fn pose_from_9d(xi: &Pose9D) -> Result<RigidTransform> {
    let rotation = rot_from_6d(&xi.r)?;
    if !xi.t.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("translation"));
    }
    Ok(RigidTransform {
        rotation,
        translation: Vector3::from(xi.t),
    })
}

/// Rotation angle of `dr` in radians, in `[0, π]`.
pub fn angular_error(dr: &Matrix3<f64>) -> f64 {
    let c = ((dr.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

/// Rotation matrix for `angle` radians about `axis` (Rodrigues).
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// ‖RᵀR − I‖_∞ (max-abs entry).
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

/// Element of SE(3): `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Checks the rotation invariants (orthonormal within 1e-6, det within 1±1e-6).
    pub fn is_valid(&self) -> bool {
        let det = self.rotation.determinant();
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && orthonormality_error(&self.rotation) <= 1e-6
            && (det - 1.0).abs() <= 1e-6
    }

    /// `self · other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_error(&rotation) > REORTHO_TOL {
            rotation = reorthonormalize(&rotation);
        }
        RigidTransform {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> RigidTransform {
        RigidTransform {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Row-major 4×4 homogeneous entries.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64]) -> Result<RigidTransform> {
        if v.len() != 16 {
            return Err(Error::shape("pose matrix", 16, v.len()));
        }
        let m = Matrix4::from_row_slice(v);
        Ok(Self::from_homogeneous(&m))
    }

    /// Formats as four lines of four whitespace-separated decimals, the
    /// layout of 7Scenes `.pose.txt` files.
    pub fn to_pose_text(&self) -> String {
        let v = self.to_row_major();
        let mut s = String::new();
        for row in v.chunks(4) {
            let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    /// Parses 16 whitespace-separated decimals (row-major).
    pub fn parse_pose_text(text: &str) -> Result<RigidTransform> {
        let vals: std::result::Result<Vec<f64>, _> =
            text.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| Error::Config(format!("bad pose value: {e}")))?;
        if vals.len() != 16 {
            return Err(Error::shape("pose text", 16, vals.len()));
        }
        Self::from_row_major(&vals)
    }
}

/// Serialized as the 16 row-major entries of the homogeneous matrix.
impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        RigidTransform::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

/// Re-projects a drifted rotation onto SO(3) using its first two columns.
fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = r.column(0);
    let c1 = r.column(1);
    let six = [c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]];
    rot_from_6d(&six).unwrap_or(*r)
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// `ΔT = T_est · T_gt⁻¹`.
pub fn pose_error(t_est: &RigidTransform, t_gt: &RigidTransform) -> RigidTransform {
    t_est.compose(&t_gt.inverse())
}

/// Pinhole intrinsics at a given image resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("invalid intrinsics {self:?}")));
        }
        if ![self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("intrinsics"));
        }
        Ok(())
    }

    /// Rescales to a new resolution keeping pixel centers on integers:
    /// `f' = f·s`, `c' = (c + 0.5)·s − 0.5`.
    pub fn scaled_to(&self, width: u32, height: u32) -> CameraIntrinsics {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

pub fn backproject(u: Vector2<f64>, z: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::InvalidDepth(z));
    }
    Ok(Vector3::new(
        (u.x - k.cx) / k.fx * z,
        (u.y - k.cy) / k.fy * z,
        z,
    ))
}

pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector2<f64>> {
    if !(p.z >= MIN_PROJECT_DEPTH) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok(Vector2::new(
        k.fx * p.x / p.z + k.cx,
        k.fy * p.y / p.z + k.cy,
    ))
}

/// Metric depth grid. Entries that are not finite and strictly positive are
/// treated as missing.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape("DepthMap", width * height, data.len()));
        }
        Ok(DepthMap {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        DepthMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid_depth(z: f64) -> bool {
        z.is_finite() && z > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&z| Self::is_valid_depth(z)).count()
    }

    /// Nearest-neighbour resize; each output pixel takes the input pixel
    /// containing its center.
    pub fn resize_nearest(&self, width: usize, height: usize) -> DepthMap {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let src_y = (((y as f64 + 0.5) * sy).floor() as usize).min(self.height - 1);
            for x in 0..width {
                let src_x = (((x as f64 + 0.5) * sx).floor() as usize).min(self.width - 1);
                data.push(self.get(src_x, src_y));
            }
        }
        DepthMap {
            width,
            height,
            data,
        }
    }

    /// Copy with invalid entries replaced by 0.
    pub fn sanitized(&self) -> DepthMap {
        DepthMap {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&z| if Self::is_valid_depth(z) { z } else { 0.0 })
                .collect(),
        }
    }
}

/// Per-pixel 2D displacement with a validity mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub flow: Vec<Vector2<f64>>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            flow: vec![Vector2::zeros(); width * height],
            valid: vec![true; width * height],
        }
    }

    /// Constant displacement at every pixel, all marked valid.
    pub fn constant(width: usize, height: usize, d: Vector2<f64>) -> Self {
        FlowField {
            width,
            height,
            flow: vec![d; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Rigid flow induced on the reference view by the relative pose `t`
/// (reference camera to query camera).
pub fn rigid_flow(t: &RigidTransform, depth: &DepthMap, k: &CameraIntrinsics) -> Result<FlowField> {
    if depth.width != k.width as usize || depth.height != k.height as usize {
        return Err(Error::shape(
            "rigid_flow",
            format!("{}x{}", k.width, k.height),
            format!("{}x{}", depth.width, depth.height),
        ));
    }
    let (w, h) = (depth.width, depth.height);
    let mut out = FlowField {
        width: w,
        height: h,
        flow: vec![Vector2::zeros(); w * h],
        valid: vec![false; w * h],
    };
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let z = depth.data[idx];
            if !DepthMap::is_valid_depth(z) {
                continue;
            }
            // Normalized-coordinate form of π(T·K⁻¹[u;1]·z) − u; exactly zero
            // for the identity transform.
            let m = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let q = t.rotation * m + t.translation / z;
            if !(q.z * z >= MIN_PROJECT_DEPTH) {
                continue;
            }
            let d = Vector2::new(k.fx * (q.x / q.z - m.x), k.fy * (q.y / q.z - m.y));
            let target = Vector2::new(x as f64, y as f64) + d;
            out.flow[idx] = d;
            out.valid[idx] =
                target.x >= 0.0 && target.x <= max_x && target.y >= 0.0 && target.y <= max_y;
        }
    }
    Ok(out)
}
