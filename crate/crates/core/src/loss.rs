//! Pose supervision: per-layer rotation angle plus weighted translation
//! error, summed over the two layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_error, pose_error, RigidTransform};
use crate::model::TwoLayerEstimate;
use crate::pose_var::{pose_error_var, PoseVar};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the layer-2 loss.
    pub beta: f64,
    /// Translation weight of layer 1, in 1/m.
    pub gamma1: f64,
    /// Translation weight of layer 2, in 1/m.
    pub gamma2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 4.0,
            gamma1: 3.0,
            gamma2: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.beta, self.gamma1, self.gamma2].iter().all(|&w| w > 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be positive, got {self:?}")))
        }
    }
}

/// `Δθ + γ·‖Δt‖` for `ΔT = T_est · T_gt⁻¹`.
pub fn layer_loss(t_est: &RigidTransform, t_gt: &RigidTransform, gamma: f64) -> f64 {
    let d = pose_error(t_est, t_gt);
    angular_error(&d.rotation) + gamma * d.translation.norm()
}

/// Per-layer losses and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub layer1: f64,
    pub layer2: f64,
    pub total: f64,
}

pub fn total_loss_parts(est: &TwoLayerEstimate, t_gt: &RigidTransform, w: &LossWeights) -> LossParts {
    let layer1 = layer_loss(&est.t1, t_gt, w.gamma1);
    let layer2 = layer_loss(&est.t2, t_gt, w.gamma2);
    LossParts {
        layer1,
        layer2,
        total: layer1 + w.beta * layer2,
    }
}

/// `Loss₁ + β·Loss₂`.
pub fn total_loss(est: &TwoLayerEstimate, t_gt: &RigidTransform, w: &LossWeights) -> f64 {
    total_loss_parts(est, t_gt, w).total
}

/// Tape form of [`layer_loss`] with the `arccos` argument clamped.
pub fn layer_loss_var(tape: &mut Tape, est: PoseVar, t_gt: &RigidTransform, gamma: f64) -> Result<Var> {
    let (angle, tnorm) = pose_error_var(tape, est, t_gt)?;
    let weighted = tape.affine(tnorm, gamma, 0.0);
    tape.add(angle, weighted)
}

/// Tape form of [`total_loss`].
pub fn total_loss_var(
    tape: &mut Tape,
    t1: PoseVar,
    t2: PoseVar,
    t_gt: &RigidTransform,
    w: &LossWeights,
) -> Result<Var> {
    let l1 = layer_loss_var(tape, t1, t_gt, w.gamma1)?;
    let l2 = layer_loss_var(tape, t2, t_gt, w.gamma2)?;
    let l2 = tape.affine(l2, w.beta, 0.0);
    tape.add(l1, l2)
}
