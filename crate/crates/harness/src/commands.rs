//! Subcommand implementations behind the `rpr` binary.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rpr_core::data::{generate_pairs, load_dataset, preprocess_images, DatasetFormat, DepthEncoding, Frame, RgbImage};
use rpr_core::geometry::angular_error;
use rpr_core::model::{Backbone, Checkpoint, RprNetwork};
use rpr_core::retrieval::{DescFiles, DescriptorSource, PooledFeatures, RetrievalIndex};
use rpr_core::{DepthMap, RigidTransform};
use serde::Serialize;

use crate::config::Config;
use crate::error::{HarnessError, Result};
use crate::eval::{
    corr_choice, localize_candidates, map_entries, run_queries, write_query_csv, EvalReport, NetworkRegressor,
    OracleRegressor, Regressor,
};
use crate::overlap::{overlap_rows, write_csv};
use crate::prepare::{prepare_frame, prepare_frames, PreparedFrame};
use crate::train::{train, write_history, CheckpointSink, TrainOutcome, TrainPair};
use crate::{overlap, plot};

fn required<'a>(v: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    v.as_ref().ok_or_else(|| HarnessError::Config(format!("{key} is not set")))
}

fn load_frames(cfg: &Config, root: &Path) -> Result<Vec<Frame>> {
    let ds = load_dataset(root, cfg.data.format, &cfg.data.load_options())?;
    if ds.skipped > 0 {
        log::warn!("{}: {} frames skipped during association", root.display(), ds.skipped);
    }
    Ok(ds.frames)
}

fn descriptor_source(cfg: &Config) -> Box<dyn DescriptorSource> {
    match &cfg.eval.descriptors {
        Some(dir) => Box::new(DescFiles { dir: dir.clone() }),
        None => Box::new(PooledFeatures),
    }
}

fn load_network(cfg: &Config, backbone: &Backbone) -> Result<RprNetwork> {
    let path = required(&cfg.eval.checkpoint, "eval.checkpoint")?;
    let ck = Checkpoint::load(path)?;
    if ck.meta.backbone != backbone.id() {
        return Err(HarnessError::Config(format!(
            "checkpoint was trained on backbone {:?}, configured backbone is {:?}",
            ck.meta.backbone,
            backbone.id()
        )));
    }
    Ok(ck.to_network()?)
}

/// Depth encoding of map frames given by the configured format.
pub fn depth_encoding(format: DatasetFormat) -> DepthEncoding {
    match format {
        DatasetFormat::SevenScenes => DepthEncoding::SEVEN_SCENES,
        DatasetFormat::Tum => DepthEncoding::TUM,
        DatasetFormat::Manifest => DepthEncoding {
            scale: 1000.0,
            invalid: None,
        },
    }
}

/// All ordered pairs within the configured thresholds, as indices into
/// `frames`.
pub fn training_pairs(cfg: &Config, frames: &[Frame]) -> Vec<TrainPair> {
    let pos: HashMap<&str, usize> = frames.iter().enumerate().map(|(i, f)| (f.id.as_str(), i)).collect();
    generate_pairs(frames, cfg.data.trans_thresh, cfg.data.rot_thresh_deg, cfg.data.cross_sequence_only)
        .into_iter()
        .map(|p| TrainPair {
            query: pos[p.query.id.as_str()],
            reference: pos[p.reference.id.as_str()],
            t_gt: p.t_gt,
        })
        .collect()
}

pub fn cmd_train(cfg: &Config) -> Result<TrainOutcome> {
    let out = &cfg.output.dir;
    cfg.write_snapshot(out)?;
    let backbone = cfg.backbone.build()?;
    let frames = load_frames(cfg, required(&cfg.data.train_root, "data.train_root")?)?;
    let pairs = training_pairs(cfg, &frames);
    log::info!("{} frames, {} pairs", frames.len(), pairs.len());
    if pairs.is_empty() {
        return Err(HarnessError::NoPairs);
    }
    let prepared = prepare_frames(&backbone, &frames)?;
    let mut net = RprNetwork::new(&cfg.network, backbone.channels())?;
    let sink = CheckpointSink {
        dir: out.join("checkpoints"),
        backbone: backbone.id().to_string(),
    };
    let outcome = train(&cfg.train, &mut net, &prepared, &pairs, Some(&sink))?;
    write_history(&out.join("history.json"), &outcome)?;
    println!(
        "trained {} epochs ({} steps); best epoch {} loss {:.6}; checkpoint {}",
        outcome.history.len(),
        outcome.steps,
        outcome.best_epoch,
        outcome.best_loss,
        sink.best_path().display()
    );
    Ok(outcome)
}

pub fn cmd_evaluate(cfg: &Config, oracle: bool) -> Result<EvalReport> {
    let out = &cfg.output.dir;
    cfg.write_snapshot(out)?;
    let backbone = cfg.backbone.build()?;
    let map_frames = load_frames(cfg, required(&cfg.data.map_root, "data.map_root")?)?;
    let query_frames = load_frames(cfg, required(&cfg.data.query_root, "data.query_root")?)?;
    let map = prepare_frames(&backbone, &map_frames)?;
    let queries = prepare_frames(&backbone, &query_frames)?;
    let source = descriptor_source(cfg);
    let index = rpr_core::retrieval::build_index(map_entries(&map_frames, &map, source.as_ref())?)?;
    let net;
    let regressor: Box<dyn Regressor> = if oracle {
        Box::new(OracleRegressor)
    } else {
        net = load_network(cfg, &backbone)?;
        Box::new(NetworkRegressor(&net))
    };
    let normalize = cfg.network.normalize_features;
    let outcomes = run_queries(
        regressor.as_ref(),
        &map,
        &index,
        &queries,
        source.as_ref(),
        cfg.eval.top_n,
        cfg.eval.alpha,
        normalize,
    )?;
    let report = EvalReport::from_outcomes(&outcomes, cfg.eval.selection, cfg.eval.top_n)?;
    report.write_csv(&out.join("report.csv"))?;
    report.write_json(&out.join("report.json"))?;
    let table = report.to_table();
    fs::write(out.join("report.txt"), &table)?;
    write_query_csv(&out.join("queries.csv"), &outcomes, cfg.eval.selection)?;
    print!("{table}");
    Ok(report)
}

pub fn cmd_build_index(cfg: &Config, path: Option<&Path>) -> Result<RetrievalIndex> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => cfg.eval.index.clone().unwrap_or_else(|| cfg.output.dir.join("map.idx")),
    };
    let backbone = cfg.backbone.build()?;
    let frames = load_frames(cfg, required(&cfg.data.map_root, "data.map_root")?)?;
    let prepared = prepare_frames(&backbone, &frames)?;
    let source = descriptor_source(cfg);
    let index = rpr_core::retrieval::build_index(map_entries(&frames, &prepared, source.as_ref())?)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
        cfg.write_snapshot(dir)?;
    }
    index.write(&path)?;
    println!("indexed {} frames (dim {}) into {}", index.len(), index.dim(), path.display());
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateReport {
    pub id: String,
    pub rank: usize,
    pub inliers: usize,
    pub valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizeReport {
    /// `T^M_q`, row-major.
    pub pose: [f64; 16],
    pub selected: String,
    pub candidates: Vec<CandidateReport>,
}

/// Localizes one prepared query against the indexed map frames.
pub fn localize_prepared(
    regressor: &dyn Regressor,
    query: &PreparedFrame,
    references: &[PreparedFrame],
    alpha: f64,
    normalize: bool,
) -> Result<LocalizeReport> {
    let refs: Vec<&PreparedFrame> = references.iter().collect();
    let candidates = localize_candidates(regressor, query, &refs, alpha, normalize)?;
    let best = &candidates[corr_choice(&candidates)?].result;
    Ok(LocalizeReport {
        pose: best.pose.to_row_major(),
        selected: best.id.clone(),
        candidates: candidates
            .iter()
            .map(|c| CandidateReport {
                id: c.result.id.clone(),
                rank: c.result.rank,
                inliers: c.result.score.inliers,
                valid: c.result.score.valid,
            })
            .collect(),
    })
}

pub fn cmd_localize(cfg: &Config, query_rgb: &Path) -> Result<LocalizeReport> {
    let backbone = cfg.backbone.build()?;
    let index = RetrievalIndex::read(required(&cfg.eval.index, "eval.index")?)?;
    let net = load_network(cfg, &backbone)?;
    let rgb = RgbImage::load(query_rgb)?;
    let k = cfg
        .data
        .intrinsics
        .unwrap_or_else(|| index.entries()[0].intrinsics)
        .scaled_to(rgb.width as u32, rgb.height as u32);
    let blank = DepthMap::filled(rgb.width, rgb.height, 0.0);
    let pre = preprocess_images(&rgb, &blank, &k)?;
    let id = query_rgb.display().to_string();
    let query = PreparedFrame {
        id: id.clone(),
        sequence: String::new(),
        pose: RigidTransform::identity(),
        features: backbone.extract(&pre.image)?,
        depth: pre.depth,
        intrinsics: pre.intrinsics,
    };
    let descriptor = descriptor_source(cfg).descriptor(&id, &query.features)?;
    let encoding = depth_encoding(cfg.data.format);
    let references = index
        .query_top_n(&descriptor, cfg.eval.top_n)?
        .iter()
        .map(|h| {
            let e = h.entry;
            let frame = Frame {
                id: e.id.clone(),
                sequence: String::new(),
                rgb_path: PathBuf::from(&e.rgb_path),
                depth_path: PathBuf::from(&e.depth_path),
                pose: e.pose,
                intrinsics: e.intrinsics,
                depth_encoding: encoding,
                timestamp: None,
            };
            prepare_frame(&backbone, &frame)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = localize_prepared(
        &NetworkRegressor(&net),
        &query,
        &references,
        cfg.eval.alpha,
        cfg.network.normalize_features,
    )?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Config(e.to_string()))?;
    println!("{json}");
    Ok(report)
}

/// Writes the training pairs as CSV: ids, translation, rotation and the 16
/// row-major entries of `T^q_r`.
pub fn cmd_pairs(cfg: &Config, path: Option<&Path>) -> Result<usize> {
    let frames = load_frames(cfg, required(&cfg.data.train_root, "data.train_root")?)?;
    let pairs = training_pairs(cfg, &frames);
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.join("pairs.csv"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
        cfg.write_snapshot(dir)?;
    }
    let mut w = csv::Writer::from_path(&path).map_err(|e| crate::eval::csv_error(&path, e))?;
    w.write_record(["query", "reference", "trans_m", "rot_deg", "t_gt"])
        .map_err(|e| crate::eval::csv_error(&path, e))?;
    for p in &pairs {
        let m: Vec<String> = p.t_gt.to_row_major().iter().map(f64::to_string).collect();
        w.write_record([
            frames[p.query].id.clone(),
            frames[p.reference].id.clone(),
            p.t_gt.translation.norm().to_string(),
            angular_error(&p.t_gt.rotation).to_degrees().to_string(),
            m.join(" "),
        ])
        .map_err(|e| crate::eval::csv_error(&path, e))?;
    }
    w.flush()?;
    println!("{} pairs from {} frames written to {}", pairs.len(), frames.len(), path.display());
    Ok(pairs.len())
}

pub fn cmd_overlap_report(cfg: &Config, oracle: bool) -> Result<Vec<overlap::OverlapRow>> {
    let out = &cfg.output.dir;
    cfg.write_snapshot(out)?;
    let root = cfg
        .data
        .query_root
        .as_ref()
        .or(cfg.data.train_root.as_ref())
        .ok_or_else(|| HarnessError::Config("data.query_root or data.train_root must be set".into()))?;
    let backbone = cfg.backbone.build()?;
    let frames = load_frames(cfg, root)?;
    let pairs = training_pairs(cfg, &frames);
    let prepared = prepare_frames(&backbone, &frames)?;
    let net;
    let regressor: Box<dyn Regressor> = if oracle {
        Box::new(OracleRegressor)
    } else {
        net = load_network(cfg, &backbone)?;
        Box::new(NetworkRegressor(&net))
    };
    let rows = overlap_rows(regressor.as_ref(), &prepared, &pairs)?;
    let path = out.join("overlap.csv");
    write_csv(&path, &rows)?;
    let flagged = rows.iter().filter(|r| r.flagged).count();
    println!("{} pairs ({flagged} flagged) written to {}", rows.len(), path.display());
    Ok(rows)
}

pub fn cmd_plot(input: &Path, output: &Path, zero_flagged: bool) -> Result<()> {
    let rows = overlap::read_csv(input)?;
    fs::write(output, plot::overlap_scatter(&rows, zero_flagged))?;
    println!("plotted {} rows to {}", rows.len(), output.display());
    Ok(())
}
