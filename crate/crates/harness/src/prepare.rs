//! Frames at network resolution with cached backbone features.

use rayon::prelude::*;
use rpr_core::data::{preprocess, Frame};
use rpr_core::model::{Backbone, BackboneOutput, PairInput};
use rpr_core::synthetic::SyntheticPair;
use rpr_core::{CameraIntrinsics, DepthMap, RigidTransform};

use crate::error::Result;

/// A frame after preprocessing and feature extraction. The backbone is
/// frozen, so features are computed once per frame.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub id: String,
    pub sequence: String,
    /// `T^M` (identity for queries of unknown pose).
    pub pose: RigidTransform,
    pub features: BackboneOutput,
    /// Depth at 256×256.
    pub depth: DepthMap,
    /// Intrinsics at 256×256.
    pub intrinsics: CameraIntrinsics,
}

impl PreparedFrame {
    /// Network input with `self` as reference and `query` as query.
    pub fn pair_input<'a>(&'a self, query: &'a PreparedFrame) -> Result<PairInput<'a>> {
        Ok(PairInput::new(&self.features, &query.features, &self.depth, &self.intrinsics)?)
    }
}

pub fn prepare_frame(backbone: &Backbone, frame: &Frame) -> Result<PreparedFrame> {
    let p = preprocess(frame)?;
    Ok(PreparedFrame {
        id: frame.id.clone(),
        sequence: frame.sequence.clone(),
        pose: frame.pose,
        features: backbone.extract(&p.image)?,
        depth: p.depth,
        intrinsics: p.intrinsics,
    })
}

/// Prepares frames in parallel; the output keeps the input order.
pub fn prepare_frames(backbone: &Backbone, frames: &[Frame]) -> Result<Vec<PreparedFrame>> {
    frames.par_iter().map(|f| prepare_frame(backbone, f)).collect()
}

/// The two rendered views of a synthetic pair as prepared frames, tagged
/// `{tag}/ref` and `{tag}/query`.
pub fn prepare_synthetic(backbone: &Backbone, pair: &SyntheticPair, tag: &str) -> Result<[PreparedFrame; 2]> {
    let make = |view: &rpr_core::synthetic::RenderedView, pose: RigidTransform, name: &str| -> Result<PreparedFrame> {
        Ok(PreparedFrame {
            id: format!("{tag}/{name}"),
            sequence: tag.to_string(),
            pose,
            features: backbone.extract(&view.rgb.normalized())?,
            depth: view.depth.clone(),
            intrinsics: pair.intrinsics,
        })
    };
    Ok([
        make(&pair.reference, pair.reference_pose, "ref")?,
        make(&pair.query, pair.query_pose, "query")?,
    ])
}
