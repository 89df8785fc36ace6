//! Rigid transforms on the tape, for gradients through the 6D mapping,
//! composition and the pose loss.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{self, Pose9D, RigidTransform};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `rotation: [3, 3]`, `translation: [3, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct PoseVar {
    pub rotation: Var,
    pub translation: Var,
}

impl PoseVar {
    pub fn constant(tape: &mut Tape, t: &RigidTransform) -> Self {
        let r: Vec<f64> = (0..9).map(|i| t.rotation[(i / 3, i % 3)]).collect();
        PoseVar {
            rotation: tape.constant(Tensor::from_vec(&[3, 3], r).expect("3x3")),
            translation: tape.constant(
                Tensor::from_vec(&[3, 1], t.translation.iter().copied().collect()).expect("3x1"),
            ),
        }
    }

    pub fn value(&self, tape: &Tape) -> RigidTransform {
        let r = tape.value(self.rotation).data();
        let t = tape.value(self.translation).data();
        RigidTransform::new(Matrix3::from_row_slice(r), Vector3::new(t[0], t[1], t[2]))
    }
}

/// Differentiable Gram–Schmidt map of a `[9]` network output to SE(3).
///
/// Checks the value-level preconditions first so a degenerate output is
/// reported as [`Error::DegenerateRotationInput`] instead of producing NaNs.
pub fn pose_from_9d_var(tape: &mut Tape, xi: Var) -> Result<PoseVar> {
    let v = tape.value(xi).data().to_vec();
    if v.len() != 9 {
        return Err(Error::shape("pose_from_9d", 9, v.len()));
    }
    geometry::pose_from_9d(&Pose9D::from_slice(&v)?)?;
    let a1 = tape.slice(xi, 0, 3)?;
    let a2 = tape.slice(xi, 3, 3)?;
    let t = tape.slice(xi, 6, 3)?;
    let b1 = tape.normalize(a1);
    let proj = tape.dot(b1, a2)?;
    let along = tape.mul_scalar(b1, proj)?;
    let ortho = tape.sub(a2, along)?;
    let b2 = tape.normalize(ortho);
    let b3 = tape.cross3(b1, b2)?;
    let rotation = tape.stack_columns3([b1, b2, b3])?;
    let translation = tape.reshape(t, &[3, 1])?;
    Ok(PoseVar {
        rotation,
        translation,
    })
}

/// `a · b`.
pub fn compose_var(tape: &mut Tape, a: PoseVar, b: PoseVar) -> Result<PoseVar> {
    let rotation = tape.matmul(a.rotation, b.rotation)?;
    let rt = tape.matmul(a.rotation, b.translation)?;
    let translation = tape.add(rt, a.translation)?;
    Ok(PoseVar {
        rotation,
        translation,
    })
}

/// Clamp margin for `arccos` inside the differentiable loss.
pub const ACOS_EPS: f64 = 1e-7;

/// `(Δθ, ‖Δt‖)` of `ΔT = T_est · T_gt⁻¹` as scalar nodes.
pub fn pose_error_var(tape: &mut Tape, est: PoseVar, gt: &RigidTransform) -> Result<(Var, Var)> {
    let inv = PoseVar::constant(tape, &gt.inverse());
    let delta = compose_var(tape, est, inv)?;
    let tr = tape.trace(delta.rotation)?;
    let cos = tape.affine(tr, 0.5, -0.5);
    let angle = tape.acos_clamped(cos, ACOS_EPS);
    let tnorm = tape.norm(delta.translation, 1e-24);
    Ok((angle, tnorm))
}
