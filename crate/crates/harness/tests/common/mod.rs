#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rpr_core::correlation::NcConfig;
use rpr_core::model::{Backbone, MotionNetConfig, NetworkConfig, Variant};
use rpr_core::synthetic::synthetic_pairs;
use rpr_harness::prepare::{prepare_synthetic, PreparedFrame};
use rpr_harness::train::TrainPair;

/// Smallest network that still runs every layer.
pub fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        motion: MotionNetConfig {
            variant: Variant::ScoreMapDr(4),
            use_depth: true,
            width: 4,
            head_width: 4,
        },
        nc: NcConfig { channels: vec![1, 2, 1] },
        ..NetworkConfig::default()
    }
}

/// `n` synthetic pairs as prepared frames `[ref0, query0, ref1, ...]`.
pub fn synthetic_set(backbone: &Backbone, n: usize, seed: u64, trans: f64, rot_deg: f64) -> (Vec<PreparedFrame>, Vec<TrainPair>) {
    let mut frames = Vec::with_capacity(2 * n);
    let mut pairs = Vec::with_capacity(n);
    for (i, p) in synthetic_pairs(n, seed, trans, rot_deg).iter().enumerate() {
        frames.extend(prepare_synthetic(backbone, p, &format!("p{i}")).unwrap());
        pairs.push(TrainPair {
            query: 2 * i + 1,
            reference: 2 * i,
            t_gt: p.t_gt,
        });
    }
    (frames, pairs)
}

pub fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

/// TOML string literal of a path.
pub fn toml_path(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    (v[n / 2] + v[(n - 1) / 2]) / 2.0
}
