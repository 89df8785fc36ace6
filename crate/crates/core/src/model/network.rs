//! The two-layer coarse-to-fine regression network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correlation::{global_correlation_var, local_correlation_var, warp_var, NcConfig, NcFilter};
use crate::error::{Error, Result};
use crate::geometry::{rigid_flow, CameraIntrinsics, DepthMap, Pose9D, RigidTransform};
use crate::params::{Bound, ParamStore};
use crate::pose_var::{compose_var, pose_from_9d_var, PoseVar};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::backbone::{Backbone, BackboneOutput, F1_SIZE, F2_SIZE};
use super::motion::{MotionNet, MotionNetConfig, MotionTrace, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub motion: MotionNetConfig,
    #[serde(default)]
    pub nc: NcConfig,
    /// Apply neighbourhood consensus to the layer-1 volume.
    #[serde(default = "yes")]
    pub use_nc: bool,
    /// Local correlation radius `n`; the window is `(2n+1)²`.
    #[serde(default = "default_radius")]
    pub window_radius: usize,
    /// Per-pixel L2 normalization of features before correlation.
    #[serde(default = "yes")]
    pub normalize_features: bool,
    /// Seed of the parameter initialization.
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

fn default_radius() -> usize {
    4
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            motion: MotionNetConfig::default(),
            nc: NcConfig::default(),
            use_nc: true,
            window_radius: default_radius(),
            normalize_features: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.motion.validate()?;
        self.nc.validate()?;
        if self.window_radius == 0 {
            return Err(Error::Config("window_radius must be >= 1".into()));
        }
        Ok(())
    }
}

/// Layer-1 coarse pose, layer-2 refined pose and the raw outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerEstimate {
    pub t1: RigidTransform,
    pub t2: RigidTransform,
    pub xi1: Pose9D,
    pub xi2: Pose9D,
}

/// Shapes and masks observed during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Layer-1 matching volume before reshaping (`[H, W, H, W]` for score
    /// maps, `[2·C1, H, W]` for feature concatenation).
    pub l1_volume: Vec<usize>,
    /// Layer-2 matching volume (`[(2n+1)², H, W]` or `[2·C2, H, W]`).
    pub l2_volume: Vec<usize>,
    pub l1_motion: MotionTrace,
    pub l2_motion: MotionTrace,
    /// Layer-2 warp mask over the 32×32 reference grid.
    pub warp_mask: Vec<bool>,
}

/// Everything one pair contributes to the forward pass, at network
/// resolution.
#[derive(Debug, Clone)]
pub struct PairInput<'a> {
    pub reference: &'a BackboneOutput,
    pub query: &'a BackboneOutput,
    pub depth_f1: DepthMap,
    pub depth_f2: DepthMap,
    pub k_f1: CameraIntrinsics,
    pub k_f2: CameraIntrinsics,
}

impl<'a> PairInput<'a> {
    /// Resamples the reference depth (nearest) and intrinsics to both
    /// feature grids. `k` must describe the grid of `depth`.
    pub fn new(
        reference: &'a BackboneOutput,
        query: &'a BackboneOutput,
        depth: &DepthMap,
        k: &CameraIntrinsics,
    ) -> Result<Self> {
        if (k.width as usize, k.height as usize) != (depth.width, depth.height) {
            return Err(Error::shape(
                "PairInput intrinsics",
                format!("{}x{}", depth.width, depth.height),
                format!("{}x{}", k.width, k.height),
            ));
        }
        let s1 = F1_SIZE as u32;
        let s2 = F2_SIZE as u32;
        Ok(PairInput {
            reference,
            query,
            depth_f1: depth.resize_nearest(F1_SIZE, F1_SIZE).sanitized(),
            depth_f2: depth.resize_nearest(F2_SIZE, F2_SIZE).sanitized(),
            k_f1: k.scaled_to(s1, s1),
            k_f2: k.scaled_to(s2, s2),
        })
    }
}

/// Tape nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct TapeEstimate {
    pub xi1: Var,
    pub xi2: Var,
    pub t1: PoseVar,
    pub t2: PoseVar,
    pub trace: ForwardTrace,
}

#[derive(Debug, Clone)]
pub struct RprNetwork {
    cfg: NetworkConfig,
    channels: (usize, usize),
    params: ParamStore,
    nc: Option<NcFilter>,
    layer1: MotionNet,
    layer2: MotionNet,
}

impl RprNetwork {
    /// Fresh network for backbone channels `(C1, C2)`, initialized from
    /// `cfg.seed`.
    pub fn new(cfg: &NetworkConfig, channels: (usize, usize)) -> Result<RprNetwork> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let variant = cfg.motion.variant;
        let nc = if variant.uses_correlation() && cfg.use_nc {
            Some(NcFilter::new(&mut params, "nc", &cfg.nc, &mut rng)?)
        } else {
            None
        };
        let side = 2 * cfg.window_radius + 1;
        let (in1, in2) = match variant {
            Variant::FeatureCat => (2 * channels.0, 2 * channels.1),
            _ => (F1_SIZE * F1_SIZE, side * side),
        };
        let layer1 = MotionNet::new(&mut params, "layer1", &cfg.motion, in1, &mut rng)?;
        let layer2 = MotionNet::new(&mut params, "layer2", &cfg.motion, in2, &mut rng)?;
        Ok(RprNetwork {
            cfg: cfg.clone(),
            channels,
            params,
            nc,
            layer1,
            layer2,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn channels(&self) -> (usize, usize) {
        self.channels
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn nc_filter(&self) -> Option<&NcFilter> {
        self.nc.as_ref()
    }

    pub fn layers(&self) -> (&MotionNet, &MotionNet) {
        (&self.layer1, &self.layer2)
    }

    /// Makes both regression heads output the identity pose for any input.
    pub fn zero_regression_heads(&mut self) {
        self.layer1.zero_output_weight(&mut self.params);
        self.layer2.zero_output_weight(&mut self.params);
    }

    /// Records the full two-layer pass on `tape`. The layer-2 flow is
    /// computed from the value of `T1`; gradients reach `T1` through the
    /// composition `T2 = T1 · δT` and the features through the warp.
    pub fn forward_tape(&self, tape: &mut Tape, params: &Bound, input: &PairInput<'_>) -> Result<TapeEstimate> {
        let (c1, c2) = self.channels;
        for (f, c, s) in [
            (&input.reference.f1, c1, F1_SIZE),
            (&input.query.f1, c1, F1_SIZE),
            (&input.reference.f2, c2, F2_SIZE),
            (&input.query.f2, c2, F2_SIZE),
        ] {
            if f.shape() != [c, s, s] {
                return Err(Error::shape("network features", format!("[{c}, {s}, {s}]"), format!("{:?}", f.shape())));
            }
        }
        let variant = self.cfg.motion.variant;
        let normalize = self.cfg.normalize_features;
        let f1_r = tape.constant(input.reference.f1.clone());
        let f1_q = tape.constant(input.query.f1.clone());

        let (volume1, l1_volume) = if variant.uses_correlation() {
            let mut c = global_correlation_var(tape, f1_r, f1_q, normalize)?;
            if let Some(nc) = &self.nc {
                c = nc.forward(tape, params, c)?;
            }
            let shape = tape.value(c).shape().to_vec();
            let p = shape[0] * shape[1];
            let q = shape[2] * shape[3];
            // Reference pixels stay spatial; query pixels become channels.
            let flat = tape.reshape(c, &[p, q])?;
            let t = tape.transpose2(flat)?;
            (tape.reshape(t, &[q, shape[0], shape[1]])?, shape)
        } else {
            let v = tape.concat(&[f1_r, f1_q])?;
            let shape = tape.value(v).shape().to_vec();
            (v, shape)
        };
        let depth1 = self.cfg.motion.use_depth.then_some(&input.depth_f1);
        let (xi1, l1_motion) = self.layer1.forward(tape, params, volume1, depth1)?;
        let t1 = pose_from_9d_var(tape, xi1)?;

        let flow = rigid_flow(&t1.value(tape), &input.depth_f2, &input.k_f2)?;
        let f2_r = tape.constant(input.reference.f2.clone());
        let f2_q = tape.constant(input.query.f2.clone());
        let (warped, warp_mask) = warp_var(tape, f2_q, &flow)?;
        let volume2 = if variant.uses_correlation() {
            local_correlation_var(tape, f2_r, warped, self.cfg.window_radius, normalize)?
        } else {
            tape.concat(&[f2_r, warped])?
        };
        let l2_volume = tape.value(volume2).shape().to_vec();
        let depth2 = self.cfg.motion.use_depth.then_some(&input.depth_f2);
        let (xi2, l2_motion) = self.layer2.forward(tape, params, volume2, depth2)?;
        let delta = pose_from_9d_var(tape, xi2)?;
        let t2 = compose_var(tape, t1, delta)?;
        Ok(TapeEstimate {
            xi1,
            xi2,
            t1,
            t2,
            trace: ForwardTrace {
                l1_volume,
                l2_volume,
                l1_motion,
                l2_motion,
                warp_mask,
            },
        })
    }

    /// Inference with the stored parameters.
    pub fn forward(&self, input: &PairInput<'_>) -> Result<(TwoLayerEstimate, ForwardTrace)> {
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape, false);
        let est = self.forward_tape(&mut tape, &params, input)?;
        let xi1 = Pose9D::from_slice(tape.value(est.xi1).data())?;
        let xi2 = Pose9D::from_slice(tape.value(est.xi2).data())?;
        if !xi1.is_finite() || !xi2.is_finite() {
            return Err(Error::NonFinite("network output"));
        }
        Ok((
            TwoLayerEstimate {
                t1: est.t1.value(&tape),
                t2: est.t2.value(&tape),
                xi1,
                xi2,
            },
            est.trace,
        ))
    }

    /// Backbone extraction followed by [`RprNetwork::forward`]. Images are
    /// normalized `[3, 256, 256]`; `depth` and `k` describe the reference
    /// at 256×256.
    pub fn two_layer_forward(
        &self,
        backbone: &Backbone,
        query: &Tensor,
        reference: &Tensor,
        depth: &DepthMap,
        k: &CameraIntrinsics,
    ) -> Result<(TwoLayerEstimate, ForwardTrace)> {
        if backbone.channels() != self.channels {
            return Err(Error::shape(
                "backbone channels",
                format!("{:?}", self.channels),
                format!("{:?}", backbone.channels()),
            ));
        }
        let fq = backbone.extract(query)?;
        let fr = backbone.extract(reference)?;
        self.forward(&PairInput::new(&fr, &fq, depth, k)?)
    }
}
