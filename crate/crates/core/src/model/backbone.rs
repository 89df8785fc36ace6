//! Frozen convolutional backbones producing the two pyramid levels used by
//! the regression layers.
//!
//! Backbones run outside the tape: their weights are never trained, so the
//! features of a frame can be computed once and cached.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, Conv2dShape};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Side length of the network input image.
pub const INPUT_SIZE: usize = 256;
/// Side length of the coarse level `f1`.
pub const F1_SIZE: usize = 16;
/// Side length of the fine level `f2`.
pub const F2_SIZE: usize = 32;

/// `f1: [C1, 16, 16]`, `f2: [C2, 32, 32]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput {
    pub f1: Tensor,
    pub f2: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    /// Small random-init conv pyramid for CPU-scale runs.
    TestPyramid,
    /// VGG16 feature layers loaded from a weights file.
    Vgg16,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test-pyramid" => Ok(BackboneKind::TestPyramid),
            "vgg16" => Ok(BackboneKind::Vgg16),
            _ => Err(Error::Config(format!("unknown backbone {s:?} (expected test-pyramid or vgg16)"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Layer {
    Conv { weight: ParamId, bias: ParamId, relu: bool },
    Blur,
    Relu,
    Pool { max: bool },
    TapF2,
    TapF1,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    kind: BackboneKind,
    id: String,
    layers: Vec<Layer>,
    params: ParamStore,
    channels: (usize, usize),
}

/// Seed of the shipped test pyramid.
pub const TEST_PYRAMID_SEED: u64 = 0;

/// Convolution indices of torchvision's `vgg16().features` up to `conv5_3`.
const VGG16_CONVS: [(usize, usize, usize); 13] = [
    (0, 3, 64),
    (2, 64, 64),
    (5, 64, 128),
    (7, 128, 128),
    (10, 128, 256),
    (12, 256, 256),
    (14, 256, 256),
    (17, 256, 512),
    (19, 512, 512),
    (21, 512, 512),
    (24, 512, 512),
    (26, 512, 512),
    (28, 512, 512),
];

impl Backbone {
    /// Five-level pyramid `3 → 8 → 16 → 16 → 32 → 32` with 2×2 average
    /// pooling between levels. The tapped levels use zero-sum kernels without
    /// bias, a 3×3 box blur and then the ReLU, which gives sparse features
    /// that vary smoothly at the tap resolution.
    pub fn test_pyramid(seed: u64) -> Backbone {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut conv = |name: &str, cin: usize, cout: usize, band_pass: bool| {
            let fan_in = cin * 9;
            let mut w = Tensor::random_fan_in(&[cout, cin, 3, 3], fan_in, &mut rng);
            let mut b = Tensor::random_fan_in(&[cout], fan_in, &mut rng);
            if band_pass {
                // Every 3×3 kernel sums to zero and there is no bias.
                for k in w.data_mut().chunks_exact_mut(9) {
                    let mean = k.iter().sum::<f64>() / 9.0;
                    k.iter_mut().for_each(|v| *v -= mean);
                }
                b = Tensor::zeros(&[cout]);
            }
            Layer::Conv {
                weight: params.add(format!("{name}.weight"), w),
                bias: params.add(format!("{name}.bias"), b),
                relu: !band_pass,
            }
        };
        let pool = || Layer::Pool { max: false };
        let layers = vec![
            conv("level0", 3, 8, false),
            pool(),
            conv("level1", 8, 16, false),
            pool(),
            conv("level2", 16, 16, false),
            pool(),
            conv("level3", 16, 32, true),
            Layer::Blur,
            Layer::Relu,
            Layer::TapF2,
            pool(),
            conv("level4", 32, 32, true),
            Layer::Blur,
            Layer::Relu,
            Layer::TapF1,
        ];
        Backbone {
            kind: BackboneKind::TestPyramid,
            id: format!("test-pyramid-seed{seed}"),
            layers,
            params,
            channels: (32, 32),
        }
    }

    /// VGG16 truncated before its last pooling layer: `f2` is the `conv4_3`
    /// activation (32×32×512) and `f1` the `conv5_3` activation (16×16×512).
    /// `weights` must hold `features.{i}.weight` / `features.{i}.bias` for the
    /// thirteen convolutions in torchvision order.
    pub fn vgg16(weights: &ParamStore) -> Result<Backbone> {
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        for (n, &(idx, cin, cout)) in VGG16_CONVS.iter().enumerate() {
            let fetch = |suffix: &str, shape: &[usize]| -> Result<Tensor> {
                let name = format!("features.{idx}.{suffix}");
                let id = weights
                    .find(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("VGG16 weights lack {name}")))?;
                let t = weights.get(id);
                if t.shape() != shape {
                    return Err(Error::Checkpoint(format!(
                        "{name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
                Ok(t.clone())
            };
            let w = fetch("weight", &[cout, cin, 3, 3])?;
            let b = fetch("bias", &[cout])?;
            layers.push(Layer::Conv {
                weight: params.add(format!("features.{idx}.weight"), w),
                bias: params.add(format!("features.{idx}.bias"), b),
                relu: true,
            });
            match n {
                1 | 3 | 6 => layers.push(Layer::Pool { max: true }),
                9 => {
                    layers.push(Layer::TapF2);
                    layers.push(Layer::Pool { max: true });
                }
                _ => {}
            }
        }
        layers.push(Layer::TapF1);
        Ok(Backbone {
            kind: BackboneKind::Vgg16,
            id: "vgg16".into(),
            layers,
            params,
            channels: (512, 512),
        })
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    /// Identifier recorded in checkpoints.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// `(C1, C2)`.
    pub fn channels(&self) -> (usize, usize) {
        self.channels
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Runs the backbone on a normalized `[3, 256, 256]` image.
    pub fn extract(&self, image: &Tensor) -> Result<BackboneOutput> {
        if image.shape() != [3, INPUT_SIZE, INPUT_SIZE] {
            return Err(Error::shape(
                "extract_features",
                format!("[3, {INPUT_SIZE}, {INPUT_SIZE}]"),
                format!("{:?}", image.shape()),
            ));
        }
        let (mut c, mut h, mut w) = (3, INPUT_SIZE, INPUT_SIZE);
        let mut x = image.data().to_vec();
        let (mut f1, mut f2) = (None, None);
        for layer in &self.layers {
            match *layer {
                Layer::Conv { weight, bias, relu } => {
                    let wt = self.params.get(weight);
                    let cout = wt.shape()[0];
                    let s = Conv2dShape { cin: c, cout, h, w, k: 3 };
                    x = kernels::conv2d_forward(s, &x, wt.data(), self.params.get(bias).data());
                    c = cout;
                    if relu {
                        x.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                }
                Layer::Blur => x = kernels::box3(&x, c, h, w),
                Layer::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
                Layer::Pool { max } => {
                    x = kernels::pool2(&x, c, h, w, max);
                    h /= 2;
                    w /= 2;
                }
                Layer::TapF2 => f2 = Some(Tensor::from_vec(&[c, h, w], x.clone())?),
                Layer::TapF1 => f1 = Some(Tensor::from_vec(&[c, h, w], x.clone())?),
            }
        }
        let (f1, f2) = (f1.expect("f1 tap"), f2.expect("f2 tap"));
        debug_assert_eq!(f1.shape(), [self.channels.0, F1_SIZE, F1_SIZE]);
        debug_assert_eq!(f2.shape(), [self.channels.1, F2_SIZE, F2_SIZE]);
        if !f1.is_finite() || !f2.is_finite() {
            return Err(Error::NonFinite("backbone features"));
        }
        Ok(BackboneOutput { f1, f2 })
    }
}

/// Per-channel RGB mean of the backbone's pretraining data.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
/// Per-channel RGB standard deviation of the backbone's pretraining data.
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
