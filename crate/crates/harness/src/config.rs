//! TOML run configuration with dotted-key overrides and a resolved
//! snapshot written next to every run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rpr_core::correlation::NcConfig;
use rpr_core::data::{DatasetFormat, LoadOptions};
use rpr_core::model::{Backbone, BackboneKind, MotionNetConfig, NetworkConfig, Variant, TEST_PYRAMID_SEED};
use rpr_core::params::ParamStore;
use rpr_core::selection::DEFAULT_ALPHA;
use rpr_core::CameraIntrinsics;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::eval::SelectionMode;
use crate::train::TrainConfig;

/// File name of the resolved configuration snapshot.
pub const SNAPSHOT_NAME: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub format: DatasetFormat,
    /// Dataset used for training and pair generation.
    pub train_root: Option<PathBuf>,
    /// Map frames for retrieval and evaluation.
    pub map_root: Option<PathBuf>,
    /// Query frames for evaluation.
    pub query_root: Option<PathBuf>,
    /// Intrinsics replacing the format default.
    pub intrinsics: Option<CameraIntrinsics>,
    /// Pair thresholds in meters and degrees.
    pub trans_thresh: f64,
    pub rot_thresh_deg: f64,
    pub cross_sequence_only: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: DatasetFormat::SevenScenes,
            train_root: None,
            map_root: None,
            query_root: None,
            intrinsics: None,
            trans_thresh: 1.5,
            rot_thresh_deg: 30.0,
            cross_sequence_only: false,
        }
    }
}

impl DataConfig {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            intrinsics: self.intrinsics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Parameter file with the VGG16 convolution weights.
    pub weights: Option<PathBuf>,
    /// Initialization seed of the test pyramid.
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            kind: BackboneKind::TestPyramid,
            weights: None,
            seed: TEST_PYRAMID_SEED,
        }
    }
}

impl BackboneConfig {
    pub fn build(&self) -> Result<Backbone> {
        match self.kind {
            BackboneKind::TestPyramid => Ok(Backbone::test_pyramid(self.seed)),
            BackboneKind::Vgg16 => {
                let path = self
                    .weights
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("backbone.weights is required for vgg16".into()))?;
                let bytes = fs::read(path)?;
                let (store, _) = ParamStore::decode(&bytes)?;
                Ok(Backbone::vgg16(&store)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Retrieved candidates per query.
    pub top_n: usize,
    pub selection: SelectionMode,
    /// Softmax threshold of the inlier count.
    pub alpha: f64,
    pub checkpoint: Option<PathBuf>,
    pub index: Option<PathBuf>,
    /// Directory of precomputed `<id>.desc` descriptors; pooled backbone
    /// features are used when unset.
    pub descriptors: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            top_n: 1,
            selection: SelectionMode::Corr,
            alpha: DEFAULT_ALPHA,
            checkpoint: None,
            index: None,
            descriptors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataConfig,
    pub backbone: BackboneConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl Config {
    /// Reads `path` (if any), applies `key=value` overrides with dotted keys
    /// and validates the result. Override values are parsed as TOML and
    /// taken as strings when that fails.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Config::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Config> {
        let mut root: toml::Table = text.parse().map_err(|e| HarnessError::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: Config = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        if !(self.data.trans_thresh > 0.0 && self.data.rot_thresh_deg > 0.0) {
            return Err(HarnessError::Config("pair thresholds must be > 0".into()));
        }
        if self.eval.top_n == 0 {
            return Err(HarnessError::Config("eval.top_n must be >= 1".into()));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(HarnessError::Config("eval.alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Writes [`SNAPSHOT_NAME`] into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(SNAPSHOT_NAME);
        fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }

    /// Small network for CPU runs: score-map-dr4 with 16-channel MotionNets
    /// and a `1 → 2 → 1` consensus filter.
    pub fn desk_network() -> NetworkConfig {
        NetworkConfig {
            motion: MotionNetConfig {
                variant: Variant::ScoreMapDr(4),
                use_depth: true,
                width: 16,
                head_width: 16,
            },
            nc: NcConfig { channels: vec![1, 2, 1] },
            ..NetworkConfig::default()
        }
    }
}

fn apply_override(root: &mut toml::Table, o: &str) -> Result<()> {
    let (key, raw) = o
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {o:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::Config(format!("bad override key {key:?}")));
    }
    let (last, path) = parts.split_last().expect("non-empty");
    let mut table = root;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override {key:?}: {p} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
