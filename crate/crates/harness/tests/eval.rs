mod common;

use std::path::Path;

use common::tiny_network;
use proptest::prelude::*;
use rpr_core::data::{load_dataset, DatasetFormat, LoadOptions};
use rpr_core::model::{Backbone, NetworkConfig, RprNetwork};
use rpr_core::retrieval::{build_index, PooledFeatures, RetrievalIndex};
use rpr_core::selection::{CandidateResult, Score, DEFAULT_ALPHA};
use rpr_core::synthetic::write_synthetic_dataset;
use rpr_core::RigidTransform;
use rpr_harness::commands::localize_prepared;
use rpr_harness::eval::{
    gates_failed, gt_choice, map_entries, run_queries, threshold_label, Candidate, EvalReport, NetworkRegressor,
    OracleRegressor, QueryOutcome, Regressor, SelectionMode, SequenceReport, THRESHOLDS,
};
use rpr_harness::prepare::{prepare_frames, PreparedFrame};
use rpr_harness::HarnessError;

struct Split {
    map: Vec<PreparedFrame>,
    queries: Vec<PreparedFrame>,
    index: RetrievalIndex,
}

/// Eight frames of one synthetic scene: five map frames, three queries.
fn split(dir: &Path) -> Split {
    write_synthetic_dataset(dir, 8, 3, 1.0, 20.0).unwrap();
    let frames = load_dataset(dir, DatasetFormat::Manifest, &LoadOptions::default()).unwrap().frames;
    let prepared = prepare_frames(&Backbone::test_pyramid(0), &frames).unwrap();
    let index = build_index(map_entries(&frames[..5], &prepared[..5], &PooledFeatures).unwrap()).unwrap();
    let mut prepared = prepared;
    let queries = prepared.split_off(5);
    Split {
        map: prepared,
        queries,
        index,
    }
}

fn evaluate(s: &Split, regressor: &dyn Regressor, top_n: usize) -> Vec<QueryOutcome> {
    run_queries(regressor, &s.map, &s.index, &s.queries, &PooledFeatures, top_n, DEFAULT_ALPHA, true).unwrap()
}

#[test]
fn oracle_regressor_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let s = split(dir.path());
    let outcomes = evaluate(&s, &OracleRegressor, 3);
    assert_eq!(outcomes.len(), 3);
    assert!(outcomes.iter().all(|o| o.candidates.len() == 3));
    for mode in [SelectionMode::Corr, SelectionMode::Gt] {
        let r = EvalReport::from_outcomes(&outcomes, mode, 3).unwrap();
        assert_eq!(r.overall.percent, [100.0; 3]);
        assert!(r.overall.median_rot_deg < 1e-5 && r.overall.median_trans_m < 1e-12, "{r:?}");
        assert_eq!(r.overall.median_str(), "0.00/0.00");
        assert_eq!(r.sequences.len(), 1);
        assert_eq!(r.sequences[0].sequence, "synthetic");
    }
}

#[test]
fn gt_selection_dominates_corr_for_untrained_networks() {
    let dir = tempfile::tempdir().unwrap();
    let s = split(dir.path());
    for seed in 0..3 {
        let net = RprNetwork::new(&NetworkConfig { seed, ..tiny_network() }, (32, 32)).unwrap();
        let outcomes = evaluate(&s, &NetworkRegressor(&net), 4);
        for o in &outcomes {
            let (gr, gt) = o.error(SelectionMode::Gt);
            let (cr, ct) = o.error(SelectionMode::Corr);
            let (g, c) = (gates_failed(gr, gt), gates_failed(cr, ct));
            assert!(g < c || (g == c && gt <= ct), "{}: gt {gr}/{gt} corr {cr}/{ct}", o.query);
        }
        let gt = EvalReport::from_outcomes(&outcomes, SelectionMode::Gt, 4).unwrap();
        let corr = EvalReport::from_outcomes(&outcomes, SelectionMode::Corr, 4).unwrap();
        for i in 0..3 {
            assert!(gt.overall.percent[i] >= corr.overall.percent[i]);
        }
    }
}

#[test]
fn empty_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let s = split(dir.path());
    let e = run_queries(&OracleRegressor, &s.map, &s.index, &[], &PooledFeatures, 1, DEFAULT_ALPHA, true).unwrap_err();
    assert!(matches!(e, HarnessError::EmptyQuery));
    assert_eq!(e.exit_code(), 3);
    let e = run_queries(&OracleRegressor, &[], &s.index, &s.queries, &PooledFeatures, 1, DEFAULT_ALPHA, true).unwrap_err();
    assert!(matches!(e, HarnessError::Core(rpr_core::Error::EmptyMap)));
    assert_eq!(e.exit_code(), 3);
    assert!(matches!(
        EvalReport::from_outcomes(&[], SelectionMode::Corr, 1),
        Err(HarnessError::EmptyQuery)
    ));
}

fn sequence_report(rot: f64, trans: f64) -> SequenceReport {
    SequenceReport {
        sequence: "chess".into(),
        queries: 1,
        median_rot_deg: rot,
        median_trans_m: trans,
        percent: [0.0, 0.0, 100.0],
    }
}

#[test]
fn report_formats() {
    assert_eq!(sequence_report(3.22, 0.11).median_str(), "3.22/0.11");
    assert_eq!(sequence_report(3.2249, 0.1051).median_str(), "3.22/0.11");
    let labels: Vec<String> = THRESHOLDS.iter().map(|&t| threshold_label(t)).collect();
    assert_eq!(labels, ["(0.25m,5deg)", "(0.5m,5deg)", "(1.0m,5deg)"]);

    let report = EvalReport {
        mode: SelectionMode::Gt,
        top_n: 5,
        thresholds: THRESHOLDS,
        sequences: vec![sequence_report(3.22, 0.11)],
        overall: SequenceReport {
            sequence: "all".into(),
            ..sequence_report(3.22, 0.11)
        },
    };
    let table = report.to_table();
    assert!(table.starts_with("selection: gt  top-N: 5\n"));
    for l in &labels {
        assert!(table.contains(l.as_str()));
    }
    assert!(table.contains("median deg/m"));
    assert!(table.lines().nth(2).unwrap().contains("3.22/0.11"));

    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("r.csv");
    report.write_csv(&csv_path).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sequence,mode,top_n,queries,median_deg_m,median_rot_deg,median_trans_m,\"(0.25m,5deg)\",\"(0.5m,5deg)\",\"(1.0m,5deg)\""
    );
    assert_eq!(lines.next().unwrap(), "chess,gt,5,1,3.22/0.11,3.22,0.11,0,0,100");

    let json_path = dir.path().join("r.json");
    report.write_json(&json_path).unwrap();
    let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn selection_mode_parses() {
    assert_eq!("corr".parse::<SelectionMode>().unwrap(), SelectionMode::Corr);
    assert_eq!("gt".parse::<SelectionMode>().unwrap(), SelectionMode::Gt);
    assert_eq!("best".parse::<SelectionMode>().unwrap_err().exit_code(), 2);
}

fn fake_outcome(errors: Vec<(f64, f64)>, corr: usize, inliers: &[usize]) -> QueryOutcome {
    let candidates = inliers
        .iter()
        .enumerate()
        .map(|(rank, &n)| Candidate {
            result: CandidateResult {
                id: format!("m{rank}"),
                rank,
                pose: RigidTransform::identity(),
                score: Score { inliers: n, valid: 100 },
            },
            relative: RigidTransform::identity(),
        })
        .collect();
    QueryOutcome {
        query: "q".into(),
        sequence: "s".into(),
        candidates,
        gt: gt_choice(&errors),
        corr,
        errors,
    }
}

fn error_pair() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..12.0, 0.0f64..1.5)
}

proptest! {
    #[test]
    fn reports_are_monotone_and_gt_dominates(
        queries in prop::collection::vec((prop::collection::vec(error_pair(), 1..6), any::<prop::sample::Index>()), 1..20)
    ) {
        let outcomes: Vec<QueryOutcome> = queries
            .into_iter()
            .map(|(errors, pick)| {
                let n = errors.len();
                fake_outcome(errors, pick.index(n), &vec![0; n])
            })
            .collect();
        for o in &outcomes {
            let (gr, gt) = o.errors[o.gt];
            for &(r, t) in &o.errors {
                let (g, c) = (gates_failed(gr, gt), gates_failed(r, t));
                prop_assert!(g < c || (g == c && gt <= t));
            }
        }
        let gt = EvalReport::from_outcomes(&outcomes, SelectionMode::Gt, 5).unwrap();
        let corr = EvalReport::from_outcomes(&outcomes, SelectionMode::Corr, 5).unwrap();
        for r in [&gt, &corr] {
            let p = r.overall.percent;
            prop_assert!(p.iter().all(|v| (0.0..=100.0).contains(v)));
            prop_assert!(p[0] <= p[1] && p[1] <= p[2]);
        }
        for i in 0..3 {
            prop_assert!(gt.overall.percent[i] >= corr.overall.percent[i]);
        }
    }
}

#[test]
fn gt_choice_tie_breaks() {
    assert_eq!(gt_choice(&[(1.0, 0.3), (6.0, 0.1), (2.0, 0.3)]), 0);
    assert_eq!(gt_choice(&[(6.0, 0.1), (4.0, 0.9)]), 1);
    assert_eq!(gt_choice(&[(2.0, 0.2), (1.0, 0.2), (1.0, 0.2)]), 1);
}

/// Regresses the identity, as for two identical images.
struct IdentityStub;

impl Regressor for IdentityStub {
    fn regress(&self, _: &PreparedFrame, _: &PreparedFrame) -> rpr_harness::Result<RigidTransform> {
        Ok(RigidTransform::identity())
    }
}

/// Regresses a pose that moves every reference pixel out of view.
struct AwayStub;

impl Regressor for AwayStub {
    fn regress(&self, _: &PreparedFrame, _: &PreparedFrame) -> rpr_harness::Result<RigidTransform> {
        Ok(RigidTransform::from_translation(nalgebra::Vector3::new(100.0, 0.0, 0.0)))
    }
}

#[test]
fn localize_identical_image_returns_map_pose() {
    let dir = tempfile::tempdir().unwrap();
    let s = split(dir.path());
    let mut query = s.map[2].clone();
    query.id = "query".into();
    query.pose = RigidTransform::identity();
    let refs: Vec<PreparedFrame> = s
        .index
        .query_top_n(&rpr_core::retrieval::pooled_descriptor(&query.features).unwrap(), 3)
        .unwrap()
        .iter()
        .map(|h| s.map.iter().find(|m| m.id == h.entry.id).unwrap().clone())
        .collect();
    assert_eq!(refs[0].id, s.map[2].id);
    let r = localize_prepared(&IdentityStub, &query, &refs, DEFAULT_ALPHA, true).unwrap();
    assert_eq!(r.selected, s.map[2].id);
    assert_eq!(r.pose, s.map[2].pose.to_row_major());
    assert_eq!(r.candidates.len(), 3);
    assert!(r.candidates[0].inliers > r.candidates[1].inliers.max(r.candidates[2].inliers));
}

#[test]
fn single_candidate_is_passed_through() {
    let dir = tempfile::tempdir().unwrap();
    let s = split(dir.path());
    let r = localize_prepared(&AwayStub, &s.queries[0], &s.map[4..], DEFAULT_ALPHA, true).unwrap();
    assert_eq!(r.selected, s.map[4].id);
    assert_eq!(r.candidates[0].inliers, 0);
    let t = RigidTransform::from_translation(nalgebra::Vector3::new(100.0, 0.0, 0.0));
    let want = s.map[4].pose.compose(&t.inverse()).to_row_major();
    assert_eq!(r.pose, want);
}

#[test]
fn malformed_index_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.idx");
    std::fs::write(&path, b"NOTANIDX\x00\x01\x02\x03").unwrap();
    let e = RetrievalIndex::read(&path).unwrap_err();
    assert!(matches!(e, rpr_core::Error::IndexFormat(_)), "{e:?}");
    assert_eq!(HarnessError::from(e).exit_code(), 3);
}
