//! Ranking of regressed candidate poses by how many reference pixels find
//! a confident match in the warped query features.

use std::cmp::Ordering;

use crate::correlation::{global_correlation, warp, FeatureMap};
use crate::error::{Error, Result};
use crate::geometry::{rigid_flow, CameraIntrinsics, DepthMap, RigidTransform};

/// Default softmax confidence threshold.
pub const DEFAULT_ALPHA: f64 = 0.007;

/// Inlier statistics of one candidate pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Score {
    pub inliers: usize,
    pub valid: usize,
}

/// Warps `f1_q` onto the reference grid with the flow induced by `t`, then
/// counts the reference pixels with in-bounds flow whose softmax over
/// their correlation row peaks above `alpha`.
pub fn score_candidate(
    f1_r: &FeatureMap,
    f1_q: &FeatureMap,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    t: &RigidTransform,
    alpha: f64,
    normalize: bool,
) -> Result<Score> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (_, h, w) = f1_r.dims3()?;
    if f1_q.shape() != f1_r.shape() {
        return Err(Error::shape(
            "score_candidate features",
            format!("{:?}", f1_r.shape()),
            format!("{:?}", f1_q.shape()),
        ));
    }
    let flow = rigid_flow(t, depth, k)?;
    if (flow.width, flow.height) != (w, h) {
        return Err(Error::shape("score_candidate depth", format!("{w}x{h}"), format!("{}x{}", flow.width, flow.height)));
    }
    let (warped, _) = warp(f1_q, &flow)?;
    let c = global_correlation(f1_r, &warped, normalize)?;
    let q = h * w;
    let mut score = Score::default();
    for (u, row) in c.data().chunks_exact(q).enumerate() {
        if !flow.valid[u] {
            continue;
        }
        score.valid += 1;
        if max_softmax(row) > alpha {
            score.inliers += 1;
        }
    }
    Ok(score)
}

/// Largest entry of `softmax(row)`.
pub fn max_softmax(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    1.0 / row.iter().map(|&v| (v - m).exp()).sum::<f64>()
}

/// A scored candidate; `rank` is its retrieval rank (0 = nearest).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub id: String,
    pub rank: usize,
    pub pose: RigidTransform,
    pub score: Score,
}

/// Ordering used by [`select_best`]: more inliers, then higher inlier
/// ratio, then better retrieval rank.
fn better(a: &CandidateResult, b: &CandidateResult) -> Ordering {
    let (sa, sb) = (a.score, b.score);
    sa.inliers
        .cmp(&sb.inliers)
        // inliers_a / valid_a vs inliers_b / valid_b without division; an
        // empty candidate has ratio 0.
        .then_with(|| {
            let ra = (sa.inliers as u128) * (sb.valid.max(1) as u128);
            let rb = (sb.inliers as u128) * (sa.valid.max(1) as u128);
            ra.cmp(&rb)
        })
        .then_with(|| b.rank.cmp(&a.rank))
}

pub fn select_best(candidates: &[CandidateResult]) -> Result<&CandidateResult> {
    candidates
        .iter()
        .max_by(|a, b| better(a, b))
        .ok_or(Error::EmptyCandidates)
}
