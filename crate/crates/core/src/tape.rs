//! Minimal reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records one forward pass. Every op appends a node holding its
//! value and a closure mapping the output gradient to parent gradients.
//! Nodes that do not depend on a parameter carry no closure and are skipped
//! during the backward sweep.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, Conv2dShape, Conv4dShape, SamplePlan};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>> + Send + Sync>;

pub struct BackwardCtx<'a> {
    pub parents: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub grad: &'a [f64],
    pub need: Vec<bool>,
}

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v` as a tensor shaped like `like`, zeros if `v` was not
    /// reached.
    pub fn tensor(&self, v: Var, like: &Tensor) -> Tensor {
        match self.get(v) {
            Some(g) => Tensor::from_vec(like.shape(), g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(like.shape()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], None, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], None, false)
    }

    fn push(&mut self, value: Tensor, parents: Vec<Var>, backward: Option<BackwardFn>, rg: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    fn op(&mut self, value: Tensor, parents: Vec<Var>, backward: BackwardFn) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let bw = if rg { Some(backward) } else { None };
        self.push(value, parents, bw, rg)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                parents: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                output: &node.value,
                grad: &g,
                need: node
                    .parents
                    .iter()
                    .map(|p| self.nodes[p.0].requires_grad)
                    .collect(),
            };
            let pg = bw(&ctx);
            for (p, pg) in node.parents.iter().zip(pg) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                match grads[p.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    None => grads[p.0] = Some(pg),
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", format!("{:?}", va.shape()), format!("{:?}", vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        Ok(self.op(out, vec![a, b], Box::new(|c| vec![Some(c.grad.to_vec()), Some(c.grad.to_vec())])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("sub", format!("{:?}", va.shape()), format!("{:?}", vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        Ok(self.op(
            out,
            vec![a, b],
            Box::new(|c| vec![Some(c.grad.to_vec()), Some(c.grad.iter().map(|g| -g).collect())]),
        ))
    }

    /// `scale · x + shift`, elementwise with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.op(
            out,
            vec![x],
            Box::new(move |c| vec![Some(c.grad.iter().map(|g| g * scale).collect())]),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.op(
            out,
            vec![x],
            Box::new(|c| {
                vec![Some(
                    c.parents[0]
                        .data()
                        .iter()
                        .zip(c.grad)
                        .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    /// Multiplies every entry of `x` by the scalar node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("mul_scalar", 1, self.value(s).len()));
        }
        let sv = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * sv);
        Ok(self.op(
            out,
            vec![x, s],
            Box::new(|c| {
                let sv = c.parents[1].data()[0];
                let gx = c.grad.iter().map(|g| g * sv).collect();
                let gs = c.grad.iter().zip(c.parents[0].data()).map(|(g, x)| g * x).sum();
                vec![Some(gx), Some(vec![gs])]
            }),
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.op(
            out,
            vec![x],
            Box::new(|c| vec![Some(vec![c.grad[0]; c.parents[0].len()])]),
        )
    }

    /// `arccos(clamp(x, −1 + ε, 1 − ε))` on a scalar; zero gradient where
    /// the clamp is active.
    pub fn acos_clamped(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x).data()[0];
        let out = Tensor::scalar(v.clamp(-1.0 + eps, 1.0 - eps).acos());
        self.op(
            out,
            vec![x],
            Box::new(move |c| {
                let v = c.parents[0].data()[0];
                let g = if v > -1.0 + eps && v < 1.0 - eps {
                    -c.grad[0] / (1.0 - v * v).sqrt()
                } else {
                    0.0
                };
                vec![Some(vec![g])]
            }),
        )
    }

    /// `sqrt(‖x‖² + ε)`, smooth at the origin.
    pub fn norm(&mut self, x: Var, eps: f64) -> Var {
        let n = (self.value(x).data().iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
        self.op(
            Tensor::scalar(n),
            vec![x],
            Box::new(|c| {
                let n = c.output.data()[0];
                vec![Some(c.parents[0].data().iter().map(|v| c.grad[0] * v / n).collect())]
            }),
        )
    }

    // ---- shape ---------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.op(out, vec![x], Box::new(|c| vec![Some(c.grad.to_vec())])))
    }

    /// Contiguous slice of the flattened tensor, returned as a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if start + len > v.len() {
            return Err(Error::shape("slice", v.len(), start + len));
        }
        let out = Tensor::from_vec(&[len], v.data()[start..start + len].to_vec())?;
        Ok(self.op(
            out,
            vec![x],
            Box::new(move |c| {
                let mut g = vec![0.0; c.parents[0].len()];
                g[start..start + len].copy_from_slice(c.grad);
                vec![Some(g)]
            }),
        ))
    }

    /// Concatenates along the leading axis; trailing dims must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(xs[0]).shape().to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(xs.len());
        for &x in xs {
            let v = self.value(x);
            if v.shape()[1..] != first[1..] {
                return Err(Error::shape("concat", format!("{first:?}"), format!("{:?}", v.shape())));
            }
            lead += v.shape()[0];
            sizes.push(v.len());
            data.extend_from_slice(v.data());
        }
        let mut shape = first;
        shape[0] = lead;
        let out = Tensor::from_vec(&shape, data)?;
        Ok(self.op(
            out,
            xs.to_vec(),
            Box::new(move |c| {
                let mut off = 0;
                sizes
                    .iter()
                    .map(|&n| {
                        let g = c.grad[off..off + n].to_vec();
                        off += n;
                        Some(g)
                    })
                    .collect()
            }),
        ))
    }

    pub fn transpose2(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let [m, n] = v.shape()[..] else {
            return Err(Error::shape("transpose2", "rank 2", format!("{:?}", v.shape())));
        };
        let out = Tensor::from_vec(&[n, m], kernels::transpose(v.data(), m, n))?;
        Ok(self.op(
            out,
            vec![x],
            Box::new(move |c| vec![Some(kernels::transpose(c.grad, n, m))]),
        ))
    }

    /// Stacks rank-1 length-3 vectors as the columns of a 3×3 matrix.
    pub fn stack_columns3(&mut self, cols: [Var; 3]) -> Result<Var> {
        let mut data = vec![0.0; 9];
        for (j, &cvar) in cols.iter().enumerate() {
            let v = self.value(cvar);
            if v.len() != 3 {
                return Err(Error::shape("stack_columns3", 3, v.len()));
            }
            for i in 0..3 {
                data[i * 3 + j] = v.data()[i];
            }
        }
        let out = Tensor::from_vec(&[3, 3], data)?;
        Ok(self.op(
            out,
            cols.to_vec(),
            Box::new(|c| {
                (0..3)
                    .map(|j| Some((0..3).map(|i| c.grad[i * 3 + j]).collect()))
                    .collect()
            }),
        ))
    }

    // ---- small linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?}"), format!("{sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = Tensor::from_vec(&[m, n], kernels::matmul(va.data(), vb.data(), m, k, n))?;
        Ok(self.op(
            out,
            vec![a, b],
            Box::new(move |c| {
                let (a, b) = (c.parents[0].data(), c.parents[1].data());
                let ga = c.need[0].then(|| kernels::matmul(c.grad, &kernels::transpose(b, k, n), m, n, k));
                let gb = c.need[1].then(|| kernels::matmul(&kernels::transpose(a, m, k), c.grad, k, m, n));
                vec![ga, gb]
            }),
        ))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(Error::shape("dot", va.len(), vb.len()));
        }
        let d = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum();
        Ok(self.op(
            Tensor::scalar(d),
            vec![a, b],
            Box::new(|c| {
                let g = c.grad[0];
                vec![
                    Some(c.parents[1].data().iter().map(|v| g * v).collect()),
                    Some(c.parents[0].data().iter().map(|v| g * v).collect()),
                ]
            }),
        ))
    }

    /// `x / ‖x‖` over the whole tensor (no smoothing; callers guarantee
    /// `‖x‖ > 0`).
    pub fn normalize(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let out = v.map(|a| a / n);
        self.op(
            out,
            vec![x],
            Box::new(move |c| {
                let y = c.output.data();
                let gy: f64 = c.grad.iter().zip(y).map(|(g, y)| g * y).sum();
                vec![Some(c.grad.iter().zip(y).map(|(g, y)| (g - y * gy) / n).collect())]
            }),
        )
    }

    pub fn cross3(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        if va.len() != 3 || vb.len() != 3 {
            return Err(Error::shape("cross3", 3, va.len().max(vb.len())));
        }
        let out = cross(va, vb);
        Ok(self.op(
            Tensor::from_vec(&[3], out.to_vec())?,
            vec![a, b],
            Box::new(|c| {
                // d(a×b) = da×b + a×db;  gradient: ga = b×g, gb = g×a
                let (a, b) = (c.parents[0].data(), c.parents[1].data());
                vec![Some(cross(b, c.grad).to_vec()), Some(cross(c.grad, a).to_vec())]
            }),
        ))
    }

    pub fn trace(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let [n, m] = v.shape()[..] else {
            return Err(Error::shape("trace", "square", format!("{:?}", v.shape())));
        };
        if n != m {
            return Err(Error::shape("trace", "square", format!("{:?}", v.shape())));
        }
        let tr = (0..n).map(|i| v.data()[i * n + i]).sum();
        Ok(self.op(
            Tensor::scalar(tr),
            vec![x],
            Box::new(move |c| {
                let mut g = vec![0.0; n * n];
                for i in 0..n {
                    g[i * n + i] = c.grad[0];
                }
                vec![Some(g)]
            }),
        ))
    }

    // ---- network layers --------------------------------------------------------

    /// Same-size 2D convolution: `x: [Cin, H, W]`, `w: [Cout, Cin, k, k]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (cin, h, wd) = self.value(x).dims3()?;
        let ws = self.value(w).shape().to_vec();
        let [cout, wcin, k, k2] = ws[..] else {
            return Err(Error::shape("conv2d weight", "[Cout, Cin, k, k]", format!("{ws:?}")));
        };
        if wcin != cin || k != k2 || k % 2 == 0 || self.value(b).len() != cout {
            return Err(Error::shape("conv2d", format!("Cin={cin}, odd square kernel"), format!("{ws:?}")));
        }
        let s = Conv2dShape { cin, cout, h, w: wd, k };
        let out = kernels::conv2d_forward(s, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let out = Tensor::from_vec(&[cout, h, wd], out)?;
        Ok(self.op(
            out,
            vec![x, w, b],
            Box::new(move |c| {
                let g = kernels::conv2d_backward(
                    s,
                    c.parents[0].data(),
                    c.parents[1].data(),
                    c.grad,
                    [c.need[0], c.need[1], c.need[2]],
                );
                vec![g.input, g.weight, g.bias]
            }),
        ))
    }

    /// Same-size 4D convolution with a 3⁴ kernel: `x: [Cin, n0, n1, n2, n3]`,
    /// `w: [Cout, Cin, 81]`, `b: [Cout]`.
    pub fn conv4d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let [cin, n0, n1, n2, n3] = xs[..] else {
            return Err(Error::shape("conv4d input", "[C, n0, n1, n2, n3]", format!("{xs:?}")));
        };
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 3 || ws[1] != cin || ws[2] != kernels::K4_TAPS || self.value(b).len() != ws[0] {
            return Err(Error::shape("conv4d weight", format!("[Cout, {cin}, 81]"), format!("{ws:?}")));
        }
        let cout = ws[0];
        let s = Conv4dShape {
            cin,
            cout,
            dims: [n0, n1, n2, n3],
        };
        let out = kernels::conv4d_forward(s, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let out = Tensor::from_vec(&[cout, n0, n1, n2, n3], out)?;
        Ok(self.op(
            out,
            vec![x, w, b],
            Box::new(move |c| {
                let g = kernels::conv4d_backward(
                    s,
                    c.parents[0].data(),
                    c.parents[1].data(),
                    c.grad,
                    [c.need[0], c.need[1], c.need[2]],
                );
                vec![g.input, g.weight, g.bias]
            }),
        ))
    }

    /// `[C, n0, n1, n2, n3] → [C, n2, n3, n0, n1]`.
    pub fn swap_halves4(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let [c, n0, n1, n2, n3] = xs[..] else {
            return Err(Error::shape("swap_halves4", "[C, n0, n1, n2, n3]", format!("{xs:?}")));
        };
        let out = kernels::swap_halves4(self.value(x).data(), c, [n0, n1, n2, n3]);
        let out = Tensor::from_vec(&[c, n2, n3, n0, n1], out)?;
        Ok(self.op(
            out,
            vec![x],
            Box::new(move |ctx| vec![Some(kernels::swap_halves4(ctx.grad, c, [n2, n3, n0, n1]))]),
        ))
    }

    /// Soft mutual nearest-neighbour rescale; `x` is viewed as `[P, Q]` with
    /// `P = n0·n1` over a trailing `[n0, n1, n2, n3]` shape.
    pub fn mutual_nn(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() < 4 {
            return Err(Error::shape("mutual_nn", "[.., n0, n1, n2, n3]", format!("{xs:?}")));
        }
        let r = xs.len();
        let p = xs[r - 4] * xs[r - 3];
        let q = xs[r - 2] * xs[r - 1];
        if p * q != self.value(x).len() {
            return Err(Error::shape("mutual_nn", "single channel", format!("{xs:?}")));
        }
        let out = kernels::mutual_nn_forward(self.value(x).data(), p, q);
        let out = Tensor::from_vec(&xs, out)?;
        Ok(self.op(
            out,
            vec![x],
            Box::new(move |c| vec![Some(kernels::mutual_nn_backward(c.parents[0].data(), p, q, c.grad))]),
        ))
    }

    /// Per-pixel L2 normalization of a `[C, H, W]` tensor.
    pub fn l2_normalize_pixels(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        let (out, norms) = kernels::l2_normalize_pixels(self.value(x).data(), c, h * w);
        let out = Tensor::from_vec(&[c, h, w], out)?;
        let norms = Arc::new(norms);
        Ok(self.op(
            out,
            vec![x],
            Box::new(move |ctx| {
                vec![Some(kernels::l2_normalize_pixels_backward(
                    ctx.parents[0].data(),
                    &norms,
                    c,
                    h * w,
                    ctx.grad,
                ))]
            }),
        ))
    }

    /// All-pairs correlation `[C, H, W] × [C, H', W'] → [H, W, H', W']`.
    pub fn global_corr(&mut self, a: Var, b: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).dims3()?;
        let (c2, h2, w2) = self.value(b).dims3()?;
        if c != c2 {
            return Err(Error::shape("global_corr channels", c, c2));
        }
        let (p, q) = (h * w, h2 * w2);
        let out = kernels::global_corr_forward(self.value(a).data(), self.value(b).data(), c, p, q);
        let out = Tensor::from_vec(&[h, w, h2, w2], out)?;
        Ok(self.op(
            out,
            vec![a, b],
            Box::new(move |ctx| {
                let (ga, gb) = kernels::global_corr_backward(
                    ctx.parents[0].data(),
                    ctx.parents[1].data(),
                    c,
                    p,
                    q,
                    ctx.grad,
                    [ctx.need[0], ctx.need[1]],
                );
                vec![ga, gb]
            }),
        ))
    }

    /// Windowed correlation `[C, H, W] × [C, H, W] → [(2n+1)², H, W]`.
    pub fn local_corr(&mut self, a: Var, b: Var, n: usize) -> Result<Var> {
        let (c, h, w) = self.value(a).dims3()?;
        if self.value(b).shape() != self.value(a).shape() {
            return Err(Error::shape(
                "local_corr",
                format!("{:?}", self.value(a).shape()),
                format!("{:?}", self.value(b).shape()),
            ));
        }
        let out = kernels::local_corr_forward(self.value(a).data(), self.value(b).data(), c, h, w, n);
        let side = 2 * n + 1;
        let out = Tensor::from_vec(&[side * side, h, w], out)?;
        Ok(self.op(
            out,
            vec![a, b],
            Box::new(move |ctx| {
                let (ga, gb) = kernels::local_corr_backward(
                    ctx.parents[0].data(),
                    ctx.parents[1].data(),
                    c,
                    h,
                    w,
                    n,
                    ctx.grad,
                    [ctx.need[0], ctx.need[1]],
                );
                vec![ga, gb]
            }),
        ))
    }

    /// Bilinear resampling of `[C, H, W]` with a fixed plan.
    pub fn sample(&mut self, x: Var, plan: Arc<SamplePlan>) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        if plan.taps.len() != h * w {
            return Err(Error::shape("sample plan", h * w, plan.taps.len()));
        }
        let out = Tensor::from_vec(&[c, h, w], plan.forward(self.value(x).data(), c, h * w))?;
        Ok(self.op(
            out,
            vec![x],
            Box::new(move |ctx| vec![Some(plan.backward(ctx.grad, c, h * w))]),
        ))
    }

    /// Spatial mean of `[C, H, W]` → `[C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3()?;
        let plane = h * w;
        let d = self.value(x).data();
        let out: Vec<f64> = (0..c)
            .map(|ch| d[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
            .collect();
        Ok(self.op(
            Tensor::from_vec(&[c], out)?,
            vec![x],
            Box::new(move |ctx| {
                let mut g = vec![0.0; c * plane];
                for ch in 0..c {
                    let v = ctx.grad[ch] / plane as f64;
                    g[ch * plane..(ch + 1) * plane].iter_mut().for_each(|x| *x = v);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// `y = W x + b` with `W: [m, n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let n = self.value(x).len();
        let ws = self.value(w).shape().to_vec();
        let [m, wn] = ws[..] else {
            return Err(Error::shape("linear weight", "[m, n]", format!("{ws:?}")));
        };
        if wn != n || self.value(b).len() != m {
            return Err(Error::shape("linear", format!("[{m}, {n}]"), format!("{ws:?}")));
        }
        let mut out = kernels::matmul(self.value(w).data(), self.value(x).data(), m, n, 1);
        out.iter_mut().zip(self.value(b).data()).for_each(|(o, b)| *o += b);
        Ok(self.op(
            Tensor::from_vec(&[m], out)?,
            vec![x, w, b],
            Box::new(move |ctx| {
                let (x, w) = (ctx.parents[0].data(), ctx.parents[1].data());
                let gx = ctx.need[0].then(|| kernels::matmul(ctx.grad, w, 1, m, n));
                let gw = ctx.need[1].then(|| kernels::matmul(ctx.grad, x, m, 1, n));
                vec![gx, gw, Some(ctx.grad.to_vec())]
            }),
        ))
    }
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
