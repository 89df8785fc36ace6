//! MotionNet: the convolutional regression head mapping a matching volume
//! (plus optional reference depth) to the 9-vector pose output.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Pose9D};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Output bias giving the identity pose: `r = (e₁, e₂)`, `t = 0`.
pub const IDENTITY_BIAS: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];

/// What the regression head sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Concatenated reference and query features.
    FeatureCat,
    /// The correlation volume, channels = matching scores.
    ScoreMap,
    /// The correlation volume compressed to `x` channels by a 1×1 bottleneck.
    ScoreMapDr(usize),
}

impl Variant {
    pub fn uses_correlation(self) -> bool {
        !matches!(self, Variant::FeatureCat)
    }

    pub fn bottleneck(self) -> Option<usize> {
        match self {
            Variant::ScoreMapDr(x) => Some(x),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::FeatureCat => f.write_str("feature-cat"),
            Variant::ScoreMap => f.write_str("score-map"),
            Variant::ScoreMapDr(x) => write!(f, "score-map-dr{x}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature-cat" => Ok(Variant::FeatureCat),
            "score-map" => Ok(Variant::ScoreMap),
            "score-map-dr2" => Ok(Variant::ScoreMapDr(2)),
            "score-map-dr3" => Ok(Variant::ScoreMapDr(3)),
            "score-map-dr4" => Ok(Variant::ScoreMapDr(4)),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?} (expected feature-cat, score-map or score-map-dr2/3/4)"
            ))),
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionNetConfig {
    pub variant: Variant,
    pub use_depth: bool,
    /// Channels of the input conv and the residual blocks.
    #[serde(default = "default_width")]
    pub width: usize,
    /// Channels of the two convs after the (optional) depth concat.
    #[serde(default = "default_head_width")]
    pub head_width: usize,
}

fn default_width() -> usize {
    128
}

fn default_head_width() -> usize {
    64
}

impl Default for MotionNetConfig {
    fn default() -> Self {
        MotionNetConfig {
            variant: Variant::ScoreMapDr(2),
            use_depth: true,
            width: default_width(),
            head_width: default_head_width(),
        }
    }
}

impl MotionNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.head_width == 0 {
            return Err(Error::Config("MotionNet widths must be positive".into()));
        }
        if let Variant::ScoreMapDr(x) = self.variant {
            if !(2..=4).contains(&x) {
                return Err(Error::Config(format!("bottleneck channels must be 2, 3 or 4, got {x}")));
            }
        }
        Ok(())
    }
}

/// Intermediate shapes of one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionTrace {
    pub input: Vec<usize>,
    /// Volume entering the head convs (after bottleneck and depth concat).
    pub head_input: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    weight: ParamId,
    bias: ParamId,
}

impl Conv {
    fn new<R: Rng>(store: &mut ParamStore, name: String, cin: usize, cout: usize, k: usize, rng: &mut R) -> Conv {
        let w = Tensor::random_fan_in(&[cout, cin, k, k], cin * k * k, rng);
        Conv {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
        }
    }

    fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.weight], p[self.bias])
    }
}

#[derive(Debug, Clone)]
pub struct MotionNet {
    cfg: MotionNetConfig,
    in_channels: usize,
    conv_in: Conv,
    residual: [Conv; 2],
    bottleneck: Option<Conv>,
    head: [Conv; 2],
    fc_weight: ParamId,
    fc_bias: ParamId,
}

impl MotionNet {
    /// Registers a MotionNet reading `in_channels` channels under `prefix`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &MotionNetConfig,
        in_channels: usize,
        rng: &mut R,
    ) -> Result<MotionNet> {
        cfg.validate()?;
        if in_channels == 0 {
            return Err(Error::Config("MotionNet input must have channels".into()));
        }
        let w = cfg.width;
        let conv_in = Conv::new(store, format!("{prefix}.conv_in"), in_channels, w, 3, rng);
        let residual = [
            Conv::new(store, format!("{prefix}.res0"), w, w, 3, rng),
            Conv::new(store, format!("{prefix}.res1"), w, w, 3, rng),
        ];
        let bottleneck = cfg
            .variant
            .bottleneck()
            .map(|x| Conv::new(store, format!("{prefix}.bottleneck"), w, x, 1, rng));
        let head_in = cfg.variant.bottleneck().unwrap_or(w) + usize::from(cfg.use_depth);
        let hw = cfg.head_width;
        let head = [
            Conv::new(store, format!("{prefix}.head0"), head_in, hw, 3, rng),
            Conv::new(store, format!("{prefix}.head1"), hw, hw, 3, rng),
        ];
        let fc_weight = store.add(format!("{prefix}.fc.weight"), Tensor::random_fan_in(&[9, hw], hw, rng));
        let fc_bias = store.add(format!("{prefix}.fc.bias"), Tensor::from_vec(&[9], IDENTITY_BIAS.to_vec())?);
        Ok(MotionNet {
            cfg: cfg.clone(),
            in_channels,
            conv_in,
            residual,
            bottleneck,
            head,
            fc_weight,
            fc_bias,
        })
    }

    pub fn config(&self) -> &MotionNetConfig {
        &self.cfg
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Zeroes the final weight so the output is the bias (the identity pose)
    /// for every input.
    pub fn zero_output_weight(&self, store: &mut ParamStore) {
        store.get_mut(self.fc_weight).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let b = store.get_mut(self.fc_bias).data_mut();
        b.copy_from_slice(&IDENTITY_BIAS);
    }

    pub fn output_params(&self) -> (ParamId, ParamId) {
        (self.fc_weight, self.fc_bias)
    }

    /// `volume: [C, H, W]`; `depth` must be `H×W` when the config uses depth
    /// (invalid pixels enter as 0). Returns the `[9]` output node.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bound,
        volume: Var,
        depth: Option<&DepthMap>,
    ) -> Result<(Var, MotionTrace)> {
        let (c, h, w) = tape.value(volume).dims3()?;
        if c != self.in_channels {
            return Err(Error::shape("MotionNet input channels", self.in_channels, c));
        }
        let input = vec![c, h, w];
        let mut x = self.conv_in.apply(tape, params, volume)?;
        x = tape.relu(x);
        for r in &self.residual {
            let y = r.apply(tape, params, x)?;
            let s = tape.add(x, y)?;
            x = tape.relu(s);
        }
        if let Some(b) = &self.bottleneck {
            x = b.apply(tape, params, x)?;
        }
        match (self.cfg.use_depth, depth) {
            (true, Some(d)) => {
                if (d.width, d.height) != (w, h) {
                    return Err(Error::shape(
                        "MotionNet depth",
                        format!("{w}x{h}"),
                        format!("{}x{}", d.width, d.height),
                    ));
                }
                let dv = tape.constant(Tensor::from_vec(&[1, h, w], d.sanitized().data)?);
                x = tape.concat(&[x, dv])?;
            }
            (true, None) => return Err(Error::Config("MotionNet configured with depth but none given".into())),
            (false, _) => {}
        }
        let head_input = tape.value(x).shape().to_vec();
        for conv in &self.head {
            x = conv.apply(tape, params, x)?;
            x = tape.relu(x);
        }
        let pooled = tape.global_avg_pool(x)?;
        let out = tape.linear(pooled, params[self.fc_weight], params[self.fc_bias])?;
        Ok((out, MotionTrace { input, head_input }))
    }

    /// Value-level forward with fixed parameters.
    pub fn infer(&self, store: &ParamStore, volume: &Tensor, depth: Option<&DepthMap>) -> Result<Pose9D> {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape, false);
        let v = tape.constant(volume.clone());
        let (out, _) = self.forward(&mut tape, &params, v, depth)?;
        Pose9D::from_slice(tape.value(out).data())
    }
}
