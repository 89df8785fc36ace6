//! Per-pair overlap ratio against rotation error, for the overlap scatter
//! plot.

use std::path::Path;

use rayon::prelude::*;
use rpr_core::data::overlap_ratio;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::eval::{csv_error, pose_errors, Regressor};
use crate::prepare::PreparedFrame;
use crate::train::TrainPair;

/// Pairs below this overlap are flagged.
pub const OVERLAP_FLAG: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub query: String,
    pub reference: String,
    /// Ground-truth overlap at 32×32.
    pub overlap: f64,
    pub rot_err_deg: f64,
    pub trans_err_m: f64,
    pub flagged: bool,
}

pub fn overlap_rows(regressor: &dyn Regressor, frames: &[PreparedFrame], pairs: &[TrainPair]) -> Result<Vec<OverlapRow>> {
    pairs
        .par_iter()
        .map(|p| {
            let (q, r) = (&frames[p.query], &frames[p.reference]);
            let input = r.pair_input(q)?;
            let overlap = overlap_ratio(&p.t_gt, &input.depth_f2, &input.k_f2)?;
            let (rot_err_deg, trans_err_m) = pose_errors(&regressor.regress(q, r)?, &p.t_gt);
            Ok(OverlapRow {
                query: q.id.clone(),
                reference: r.id.clone(),
                overlap,
                rot_err_deg,
                trans_err_m,
                flagged: overlap < OVERLAP_FLAG,
            })
        })
        .collect()
}

pub fn write_csv(path: &Path, rows: &[OverlapRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<OverlapRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<OverlapRow>, _>>()
        .map_err(|e| csv_error(path, e))?;
    if rows.iter().any(|r| !(0.0..=1.0).contains(&r.overlap)) {
        return Err(HarnessError::Report {
            path: path.to_path_buf(),
            reason: "overlap outside [0, 1]".into(),
        });
    }
    Ok(rows)
}
