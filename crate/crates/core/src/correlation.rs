//! Feature correlation volumes, neighbourhood-consensus filtering and
//! bilinear feature warping.
//!
//! Feature maps are `[C, H, W]` tensors. A global correlation volume is
//! `[H, W, H, W]` indexed `(reference pixel, query pixel)`; a local one is
//! `[(2n+1)², H, W]` with the displacement `(dx, dy)` enumerated row-major
//! (`dy` outer).

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FlowField;
use crate::kernels::{SamplePlan, K4_TAPS};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub type FeatureMap = Tensor;

fn check_same(context: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    a.dims3()?;
    if a.shape() != b.shape() {
        return Err(Error::shape(context, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

/// Tape form of [`global_correlation`].
pub fn global_correlation_var(tape: &mut Tape, f_r: Var, f_q: Var, normalize: bool) -> Result<Var> {
    let (a, b) = if normalize {
        (tape.l2_normalize_pixels(f_r)?, tape.l2_normalize_pixels(f_q)?)
    } else {
        (f_r, f_q)
    };
    tape.global_corr(a, b)
}

/// `c(u, u') = f_r(u)ᵀ f_q(u')` over all pixel pairs, with optional
/// per-pixel L2 normalization of both maps first.
pub fn global_correlation(f_r: &FeatureMap, f_q: &FeatureMap, normalize: bool) -> Result<Tensor> {
    check_same("global_correlation", f_r, f_q)?;
    let mut tape = Tape::new();
    let a = tape.constant(f_r.clone());
    let b = tape.constant(f_q.clone());
    let c = global_correlation_var(&mut tape, a, b, normalize)?;
    Ok(tape.value(c).clone())
}

pub fn local_correlation_var(tape: &mut Tape, f_r: Var, f_q_warped: Var, n: usize, normalize: bool) -> Result<Var> {
    if n == 0 {
        return Err(Error::Config("local correlation radius must be >= 1".into()));
    }
    let (a, b) = if normalize {
        (tape.l2_normalize_pixels(f_r)?, tape.l2_normalize_pixels(f_q_warped)?)
    } else {
        (f_r, f_q_warped)
    };
    tape.local_corr(a, b, n)
}

/// `c(u, (dx, dy)) = f_r(u)ᵀ f_q(u + (dx, dy))`, zero outside the grid.
pub fn local_correlation(f_r: &FeatureMap, f_q_warped: &FeatureMap, n: usize, normalize: bool) -> Result<Tensor> {
    check_same("local_correlation", f_r, f_q_warped)?;
    let mut tape = Tape::new();
    let a = tape.constant(f_r.clone());
    let b = tape.constant(f_q_warped.clone());
    let c = local_correlation_var(&mut tape, a, b, n, normalize)?;
    Ok(tape.value(c).clone())
}

pub fn sample_plan(flow: &FlowField) -> Arc<SamplePlan> {
    let disp: Vec<(f64, f64)> = flow.flow.iter().map(|d| (d.x, d.y)).collect();
    Arc::new(SamplePlan::new(flow.height, flow.width, &disp, &flow.valid))
}

/// Tape form of [`warp`]; gradients flow to the features only.
pub fn warp_var(tape: &mut Tape, f: Var, flow: &FlowField) -> Result<(Var, Vec<bool>)> {
    let (_, h, w) = tape.value(f).dims3()?;
    if (h, w) != (flow.height, flow.width) {
        return Err(Error::shape("warp", format!("{h}x{w}"), format!("{}x{}", flow.height, flow.width)));
    }
    let plan = sample_plan(flow);
    let mask = plan.mask.clone();
    Ok((tape.sample(f, plan)?, mask))
}

/// Bilinear sample of `f` at `u + w(u)`. Pixels whose flow is invalid or
/// whose sample footprint lies fully outside the grid become zero with
/// `mask = false`; partially outside footprints use zero padding.
pub fn warp(f: &FeatureMap, flow: &FlowField) -> Result<(FeatureMap, Vec<bool>)> {
    let mut tape = Tape::new();
    let v = tape.constant(f.clone());
    let (out, mask) = warp_var(&mut tape, v, flow)?;
    Ok((tape.value(out).clone(), mask))
}

/// Channel widths of the neighbourhood-consensus 4D convolution stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NcConfig {
    pub channels: Vec<usize>,
}

impl Default for NcConfig {
    fn default() -> Self {
        NcConfig {
            channels: vec![1, 16, 16, 1],
        }
    }
}

impl NcConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.channels;
        if c.len() < 2 || c[0] != 1 || *c.last().unwrap() != 1 || c.contains(&0) {
            return Err(Error::Config(format!("NC channels must run 1 → … → 1, got {c:?}")));
        }
        Ok(())
    }
}

/// Learnable neighbourhood-consensus filter over a 4D correlation volume.
#[derive(Debug, Clone)]
pub struct NcFilter {
    layers: Vec<(ParamId, ParamId)>,
}

impl NcFilter {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &NcConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let layers = cfg
            .channels
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let (cin, cout) = (io[0], io[1]);
                let w = Tensor::random_fan_in(&[cout, cin, K4_TAPS], cin * K4_TAPS, rng);
                let wid = store.add(format!("{prefix}.conv{i}.weight"), w);
                let bid = store.add(format!("{prefix}.conv{i}.bias"), Tensor::zeros(&[cout]));
                (wid, bid)
            })
            .collect();
        Ok(NcFilter { layers })
    }

    /// Center-tap weights that make the stack an identity on non-negative
    /// input: the first layer broadcasts, hidden layers pass channels
    /// through, the last layer averages.
    pub fn set_identity(&self, store: &mut ParamStore) {
        const CENTER: usize = K4_TAPS / 2;
        for &(wid, bid) in &self.layers {
            let w = store.get_mut(wid);
            let (cout, cin) = (w.shape()[0], w.shape()[1]);
            let data = w.data_mut();
            data.iter_mut().for_each(|v| *v = 0.0);
            for co in 0..cout {
                for ci in 0..cin {
                    let v = if cin == 1 {
                        1.0
                    } else if cout == 1 {
                        1.0 / cin as f64
                    } else if co == ci {
                        1.0
                    } else {
                        0.0
                    };
                    data[(co * cin + ci) * K4_TAPS + CENTER] = v;
                }
            }
            store.get_mut(bid).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    fn stack(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.conv4d(h, params[w], params[b])?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Mutual rescale → symmetric 4D conv stack → ReLU → mutual rescale.
    /// `c` is `[H_r, W_r, H_q, W_q]`; the output has the same shape.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, c: Var) -> Result<Var> {
        let shape = tape.value(c).shape().to_vec();
        let [a, b, cc, d] = shape[..] else {
            return Err(Error::shape("nc_filter", "[H, W, H, W]", format!("{shape:?}")));
        };
        let m = tape.mutual_nn(c)?;
        let x = tape.reshape(m, &[1, a, b, cc, d])?;
        let direct = self.stack(tape, params, x)?;
        let xt = tape.swap_halves4(x)?;
        let swapped = self.stack(tape, params, xt)?;
        let swapped = tape.swap_halves4(swapped)?;
        let sym = tape.add(direct, swapped)?;
        let sym = tape.relu(sym);
        let sym = tape.reshape(sym, &[a, b, cc, d])?;
        tape.mutual_nn(sym)
    }
}

/// Applies `filter` (with weights from `store`) to a correlation volume.
pub fn nc_filter(c: &Tensor, filter: &NcFilter, store: &ParamStore) -> Result<Tensor> {
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let v = tape.constant(c.clone());
    let out = filter.forward(&mut tape, &params, v)?;
    Ok(tape.value(out).clone())
}

/// Swaps the image roles of a `[H_r, W_r, H_q, W_q]` volume.
pub fn transpose_volume(c: &Tensor) -> Result<Tensor> {
    let s = c.shape();
    let [a, b, cc, d] = s[..] else {
        return Err(Error::shape("transpose_volume", "[H, W, H, W]", format!("{s:?}")));
    };
    let data = crate::kernels::swap_halves4(c.data(), 1, [a, b, cc, d]);
    Tensor::from_vec(&[cc, d, a, b], data)
}
