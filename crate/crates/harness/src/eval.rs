//! Localization protocol: retrieve the top-N map frames, regress the
//! relative pose to each, compose global poses and pick one candidate by
//! inlier count (`corr`) or by true error (`gt`).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use rpr_core::data::{relative_pose, Frame};
use rpr_core::geometry::angular_error;
use rpr_core::model::RprNetwork;
use rpr_core::retrieval::{build_index, global_pose, DescriptorSource, MapEntry, RetrievalIndex};
use rpr_core::selection::{score_candidate, select_best, CandidateResult};
use rpr_core::RigidTransform;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::prepare::PreparedFrame;

/// `(translation m, rotation deg)` gates of the threshold table.
pub const THRESHOLDS: [(f64, f64); 3] = [(0.25, 5.0), (0.5, 5.0), (1.0, 5.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Most inliers after warping with the candidate pose.
    Corr,
    /// Smallest true error.
    Gt,
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMode::Corr => "corr",
            SelectionMode::Gt => "gt",
        })
    }
}

impl FromStr for SelectionMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corr" => Ok(SelectionMode::Corr),
            "gt" => Ok(SelectionMode::Gt),
            _ => Err(HarnessError::Config(format!("unknown selection mode {s:?} (expected corr or gt)"))),
        }
    }
}

/// Source of relative poses `T^q_r`.
pub trait Regressor: Sync {
    fn regress(&self, query: &PreparedFrame, reference: &PreparedFrame) -> Result<RigidTransform>;
}

/// The layer-2 estimate of a trained network.
pub struct NetworkRegressor<'a>(pub &'a RprNetwork);

impl Regressor for NetworkRegressor<'_> {
    fn regress(&self, query: &PreparedFrame, reference: &PreparedFrame) -> Result<RigidTransform> {
        let (est, _) = self.0.forward(&reference.pair_input(query)?)?;
        Ok(est.t2)
    }
}

/// Ground-truth relative poses from the frames' own poses.
pub struct OracleRegressor;

impl Regressor for OracleRegressor {
    fn regress(&self, query: &PreparedFrame, reference: &PreparedFrame) -> Result<RigidTransform> {
        Ok(relative_pose(&query.pose, &reference.pose))
    }
}

/// Rotation error in degrees and translation error in meters of a global
/// pose estimate.
pub fn pose_errors(est: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    let rot = angular_error(&(est.rotation * gt.rotation.transpose())).to_degrees();
    (rot, (est.translation - gt.translation).norm())
}

/// Number of threshold gates an error pair fails.
pub fn gates_failed(rot_deg: f64, trans_m: f64) -> usize {
    THRESHOLDS.iter().filter(|&&(t, r)| !(trans_m <= t && rot_deg <= r)).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Global pose, retrieval rank and inlier score.
    pub result: CandidateResult,
    /// Regressed `T^q_r`.
    pub relative: RigidTransform,
}

/// Regresses and scores each reference in retrieval order.
pub fn localize_candidates(
    regressor: &dyn Regressor,
    query: &PreparedFrame,
    references: &[&PreparedFrame],
    alpha: f64,
    normalize: bool,
) -> Result<Vec<Candidate>> {
    references
        .iter()
        .enumerate()
        .map(|(rank, r)| {
            let relative = regressor.regress(query, r)?;
            let input = r.pair_input(query)?;
            let score = score_candidate(
                &r.features.f1,
                &query.features.f1,
                &input.depth_f1,
                &input.k_f1,
                &relative,
                alpha,
                normalize,
            )?;
            Ok(Candidate {
                result: CandidateResult {
                    id: r.id.clone(),
                    rank,
                    pose: global_pose(&r.pose, &relative),
                    score,
                },
                relative,
            })
        })
        .collect()
}

/// Index of the candidate chosen by inlier count.
pub fn corr_choice(candidates: &[Candidate]) -> Result<usize> {
    let results: Vec<CandidateResult> = candidates.iter().map(|c| c.result.clone()).collect();
    Ok(select_best(&results)?.rank)
}

/// One evaluated query with the errors of every candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query: String,
    pub sequence: String,
    pub candidates: Vec<Candidate>,
    /// `(rotation deg, translation m)` per candidate.
    pub errors: Vec<(f64, f64)>,
    pub corr: usize,
    /// Fewest failed gates, then smallest translation, rotation and rank.
    pub gt: usize,
}

impl QueryOutcome {
    pub fn chosen(&self, mode: SelectionMode) -> usize {
        match mode {
            SelectionMode::Corr => self.corr,
            SelectionMode::Gt => self.gt,
        }
    }

    pub fn error(&self, mode: SelectionMode) -> (f64, f64) {
        self.errors[self.chosen(mode)]
    }
}

/// Candidate with the fewest failed gates, then smallest translation,
/// rotation and rank.
pub fn gt_choice(errors: &[(f64, f64)]) -> usize {
    (0..errors.len())
        .min_by(|&a, &b| {
            let (ra, ta) = errors[a];
            let (rb, tb) = errors[b];
            gates_failed(ra, ta)
                .cmp(&gates_failed(rb, tb))
                .then(ta.total_cmp(&tb))
                .then(ra.total_cmp(&rb))
                .then(a.cmp(&b))
        })
        .expect("at least one candidate")
}

/// Index entries for prepared map frames; `frames` supplies the file paths
/// and native intrinsics.
pub fn map_entries(frames: &[Frame], prepared: &[PreparedFrame], source: &dyn DescriptorSource) -> Result<Vec<MapEntry>> {
    frames
        .iter()
        .zip(prepared)
        .map(|(f, p)| {
            Ok(MapEntry {
                id: f.id.clone(),
                descriptor: source.descriptor(&f.id, &p.features)?,
                pose: f.pose,
                rgb_path: f.rgb_path.display().to_string(),
                depth_path: f.depth_path.display().to_string(),
                intrinsics: f.intrinsics,
            })
        })
        .collect()
}

/// Index over prepared frames alone, with empty file paths.
pub fn index_prepared(prepared: &[PreparedFrame], source: &dyn DescriptorSource) -> Result<RetrievalIndex> {
    let entries = prepared
        .iter()
        .map(|p| {
            Ok(MapEntry {
                id: p.id.clone(),
                descriptor: source.descriptor(&p.id, &p.features)?,
                pose: p.pose,
                rgb_path: String::new(),
                depth_path: String::new(),
                intrinsics: p.intrinsics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(build_index(entries)?)
}

/// Retrieves, regresses and scores every query in parallel; the outcomes
/// keep the query order.
pub fn run_queries(
    regressor: &dyn Regressor,
    map: &[PreparedFrame],
    index: &RetrievalIndex,
    queries: &[PreparedFrame],
    source: &dyn DescriptorSource,
    top_n: usize,
    alpha: f64,
    normalize: bool,
) -> Result<Vec<QueryOutcome>> {
    if queries.is_empty() {
        return Err(HarnessError::EmptyQuery);
    }
    if map.is_empty() {
        return Err(rpr_core::Error::EmptyMap.into());
    }
    let by_id: HashMap<&str, &PreparedFrame> = map.iter().map(|f| (f.id.as_str(), f)).collect();
    queries
        .par_iter()
        .map(|q| {
            let descriptor = source.descriptor(&q.id, &q.features)?;
            let refs: Vec<&PreparedFrame> = index
                .query_top_n(&descriptor, top_n)?
                .iter()
                .map(|h| {
                    by_id.get(h.entry.id.as_str()).copied().ok_or_else(|| HarnessError::Report {
                        path: Default::default(),
                        reason: format!("index entry {} has no map frame", h.entry.id),
                    })
                })
                .collect::<Result<_>>()?;
            let candidates = localize_candidates(regressor, q, &refs, alpha, normalize)?;
            let errors: Vec<(f64, f64)> = candidates.iter().map(|c| pose_errors(&c.result.pose, &q.pose)).collect();
            Ok(QueryOutcome {
                query: q.id.clone(),
                sequence: q.sequence.clone(),
                corr: corr_choice(&candidates)?,
                gt: gt_choice(&errors),
                candidates,
                errors,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub sequence: String,
    pub queries: usize,
    pub median_rot_deg: f64,
    pub median_trans_m: f64,
    /// Percentage of queries within each of [`THRESHOLDS`].
    pub percent: [f64; 3],
}

impl SequenceReport {
    fn from_errors(sequence: &str, errors: &[(f64, f64)]) -> SequenceReport {
        let n = errors.len();
        let pct = |i: usize| {
            let (t, r) = THRESHOLDS[i];
            100.0 * errors.iter().filter(|&&(er, et)| et <= t && er <= r).count() as f64 / n as f64
        };
        SequenceReport {
            sequence: sequence.to_string(),
            queries: n,
            median_rot_deg: median(errors.iter().map(|e| e.0).collect()),
            median_trans_m: median(errors.iter().map(|e| e.1).collect()),
            percent: [pct(0), pct(1), pct(2)],
        }
    }

    /// Medians as `deg/m`.
    pub fn median_str(&self) -> String {
        format!("{:.2}/{:.2}", self.median_rot_deg, self.median_trans_m)
    }
}

/// Median with the mean of the two middle values for even counts.
pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    (v[n / 2] + v[(n - 1) / 2]) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: SelectionMode,
    pub top_n: usize,
    pub thresholds: [(f64, f64); 3],
    pub sequences: Vec<SequenceReport>,
    pub overall: SequenceReport,
}

/// Threshold label as `(0.25m,5deg)`.
pub fn threshold_label((t, r): (f64, f64)) -> String {
    format!("({t:?}m,{r}deg)")
}

impl EvalReport {
    pub fn from_outcomes(outcomes: &[QueryOutcome], mode: SelectionMode, top_n: usize) -> Result<EvalReport> {
        if outcomes.is_empty() {
            return Err(HarnessError::EmptyQuery);
        }
        let mut seqs: Vec<&str> = outcomes.iter().map(|o| o.sequence.as_str()).collect();
        seqs.sort_unstable();
        seqs.dedup();
        let sequences = seqs
            .iter()
            .map(|s| {
                let e: Vec<(f64, f64)> = outcomes.iter().filter(|o| o.sequence == *s).map(|o| o.error(mode)).collect();
                SequenceReport::from_errors(s, &e)
            })
            .collect();
        let all: Vec<(f64, f64)> = outcomes.iter().map(|o| o.error(mode)).collect();
        Ok(EvalReport {
            mode,
            top_n,
            thresholds: THRESHOLDS,
            sequences,
            overall: SequenceReport::from_errors("all", &all),
        })
    }

    fn rows(&self) -> impl Iterator<Item = &SequenceReport> {
        self.sequences.iter().chain(std::iter::once(&self.overall))
    }

    pub fn to_table(&self) -> String {
        let labels: Vec<String> = self.thresholds.iter().map(|&t| threshold_label(t)).collect();
        let mut s = format!("selection: {}  top-N: {}\n", self.mode, self.top_n);
        s += &format!(
            "{:<24} {:>7} {:>14} {:>14} {:>14} {:>14}\n",
            "sequence", "queries", "median deg/m", labels[0], labels[1], labels[2]
        );
        for r in self.rows() {
            s += &format!(
                "{:<24} {:>7} {:>14} {:>14.1} {:>14.1} {:>14.1}\n",
                r.sequence,
                r.queries,
                r.median_str(),
                r.percent[0],
                r.percent[1],
                r.percent[2]
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header = vec!["sequence", "mode", "top_n", "queries", "median_deg_m", "median_rot_deg", "median_trans_m"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend(self.thresholds.iter().map(|&t| threshold_label(t)));
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for r in self.rows() {
            let mut rec = vec![
                r.sequence.clone(),
                self.mode.to_string(),
                self.top_n.to_string(),
                r.queries.to_string(),
                r.median_str(),
                r.median_rot_deg.to_string(),
                r.median_trans_m.to_string(),
            ];
            rec.extend(r.percent.iter().map(|p| p.to_string()));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| HarnessError::Report {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        fs::write(path, json)?;
        Ok(())
    }
}

/// Per-query rows: selected candidate, its errors and inliers.
pub fn write_query_csv(path: &Path, outcomes: &[QueryOutcome], mode: SelectionMode) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["query", "sequence", "mode", "selected", "rank", "rot_err_deg", "trans_err_m", "inliers", "valid"])
        .map_err(|e| csv_error(path, e))?;
    for o in outcomes {
        let i = o.chosen(mode);
        let c = &o.candidates[i].result;
        let (r, t) = o.errors[i];
        w.write_record([
            o.query.clone(),
            o.sequence.clone(),
            mode.to_string(),
            c.id.clone(),
            c.rank.to_string(),
            r.to_string(),
            t.to_string(),
            c.score.inliers.to_string(),
            c.score.valid.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Report {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}
