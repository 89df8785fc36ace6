//! Numeric kernels shared by the plain (no-grad) entry points and the tape.
//!
//! All convolutions are stride 1 with zero padding that preserves the
//! spatial size.

/// Index range `[lo, hi)` of output positions whose input `pos + off` stays
/// inside `[0, len)`.
#[inline]
fn valid_range(len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2dShape {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl Conv2dShape {
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }
}

pub fn conv2d_forward(s: Conv2dShape, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let plane = s.h * s.w;
    let mut out = vec![0.0; s.cout * plane];
    let pad = s.pad();
    for co in 0..s.cout {
        let out_c = &mut out[co * plane..(co + 1) * plane];
        out_c.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..s.cin {
            let in_c = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..s.k {
                let oy = ky as isize - pad;
                let (y0, y1) = valid_range(s.h, oy);
                for kx in 0..s.k {
                    let wv = weight[((co * s.cin + ci) * s.k + ky) * s.k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let ox = kx as isize - pad;
                    let (x0, x1) = valid_range(s.w, ox);
                    for y in y0..y1 {
                        let iy = (y as isize + oy) as usize;
                        let orow = &mut out_c[y * s.w + x0..y * s.w + x1];
                        let ix0 = (x0 as isize + ox) as usize;
                        let irow = &in_c[iy * s.w + ix0..iy * s.w + ix0 + (x1 - x0)];
                        axpy(orow, irow, wv);
                    }
                }
            }
        }
    }
    out
}

pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub fn conv2d_backward(
    s: Conv2dShape,
    x: &[f64],
    weight: &[f64],
    grad: &[f64],
    need: [bool; 3],
) -> ConvGrads {
    let plane = s.h * s.w;
    let pad = s.pad();
    let mut gx = need[0].then(|| vec![0.0; s.cin * plane]);
    let mut gw = need[1].then(|| vec![0.0; weight.len()]);
    let gb = need[2].then(|| {
        (0..s.cout)
            .map(|co| grad[co * plane..(co + 1) * plane].iter().sum())
            .collect()
    });
    for co in 0..s.cout {
        let g_c = &grad[co * plane..(co + 1) * plane];
        for ci in 0..s.cin {
            let in_c = &x[ci * plane..(ci + 1) * plane];
            for ky in 0..s.k {
                let oy = ky as isize - pad;
                let (y0, y1) = valid_range(s.h, oy);
                for kx in 0..s.k {
                    let widx = ((co * s.cin + ci) * s.k + ky) * s.k + kx;
                    let wv = weight[widx];
                    let ox = kx as isize - pad;
                    let (x0, x1) = valid_range(s.w, ox);
                    let ix0 = (x0 as isize + ox) as usize;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let iy = (y as isize + oy) as usize;
                        let grow = &g_c[y * s.w + x0..y * s.w + x1];
                        let irange = iy * s.w + ix0..iy * s.w + ix0 + (x1 - x0);
                        if gw.is_some() {
                            acc += dot(grow, &in_c[irange.clone()]);
                        }
                        if let Some(gx) = gx.as_mut() {
                            if wv != 0.0 {
                                let gx_c = &mut gx[ci * plane..(ci + 1) * plane];
                                axpy(&mut gx_c[irange], grow, wv);
                            }
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}

/// Shape of a 4D convolution over `[C, n0, n1, n2, n3]` with a 3⁴ kernel.
#[derive(Debug, Clone, Copy)]
pub struct Conv4dShape {
    pub cin: usize,
    pub cout: usize,
    pub dims: [usize; 4],
}

pub const K4: usize = 3;
pub const K4_TAPS: usize = K4 * K4 * K4 * K4;

impl Conv4dShape {
    fn volume(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Visits every (output row, input row) pair of contiguous last-axis runs for
/// tap offset `o`; `f(out_offset, in_offset, run_len)`.
#[inline]
fn for_each_run4(dims: [usize; 4], o: [isize; 4], mut f: impl FnMut(usize, usize, usize)) {
    let [n0, n1, n2, n3] = dims;
    let r0 = valid_range(n0, o[0]);
    let r1 = valid_range(n1, o[1]);
    let r2 = valid_range(n2, o[2]);
    let r3 = valid_range(n3, o[3]);
    if r3.1 <= r3.0 {
        return;
    }
    let run = r3.1 - r3.0;
    for a in r0.0..r0.1 {
        let ia = (a as isize + o[0]) as usize;
        for b in r1.0..r1.1 {
            let ib = (b as isize + o[1]) as usize;
            for c in r2.0..r2.1 {
                let ic = (c as isize + o[2]) as usize;
                let out_off = ((a * n1 + b) * n2 + c) * n3 + r3.0;
                let in_off = ((ia * n1 + ib) * n2 + ic) * n3 + (r3.0 as isize + o[3]) as usize;
                f(out_off, in_off, run);
            }
        }
    }
}

#[inline]
fn tap_offsets(tap: usize) -> [isize; 4] {
    let k0 = tap / 27;
    let k1 = (tap / 9) % 3;
    let k2 = (tap / 3) % 3;
    let k3 = tap % 3;
    [k0 as isize - 1, k1 as isize - 1, k2 as isize - 1, k3 as isize - 1]
}

pub fn conv4d_forward(s: Conv4dShape, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let vol = s.volume();
    let mut out = vec![0.0; s.cout * vol];
    for co in 0..s.cout {
        let out_c = &mut out[co * vol..(co + 1) * vol];
        out_c.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..s.cin {
            let in_c = &x[ci * vol..(ci + 1) * vol];
            for tap in 0..K4_TAPS {
                let wv = weight[(co * s.cin + ci) * K4_TAPS + tap];
                if wv == 0.0 {
                    continue;
                }
                for_each_run4(s.dims, tap_offsets(tap), |oo, io, n| {
                    axpy(&mut out_c[oo..oo + n], &in_c[io..io + n], wv);
                });
            }
        }
    }
    out
}

pub fn conv4d_backward(
    s: Conv4dShape,
    x: &[f64],
    weight: &[f64],
    grad: &[f64],
    need: [bool; 3],
) -> ConvGrads {
    let vol = s.volume();
    let mut gx = need[0].then(|| vec![0.0; s.cin * vol]);
    let mut gw = need[1].then(|| vec![0.0; weight.len()]);
    let gb = need[2].then(|| {
        (0..s.cout)
            .map(|co| grad[co * vol..(co + 1) * vol].iter().sum())
            .collect()
    });
    for co in 0..s.cout {
        let g_c = &grad[co * vol..(co + 1) * vol];
        for ci in 0..s.cin {
            let in_c = &x[ci * vol..(ci + 1) * vol];
            for tap in 0..K4_TAPS {
                let widx = (co * s.cin + ci) * K4_TAPS + tap;
                let wv = weight[widx];
                let mut acc = 0.0;
                let want_w = gw.is_some();
                let mut gx_c = gx
                    .as_mut()
                    .filter(|_| wv != 0.0)
                    .map(|g| &mut g[ci * vol..(ci + 1) * vol]);
                for_each_run4(s.dims, tap_offsets(tap), |oo, io, n| {
                    let grow = &g_c[oo..oo + n];
                    if want_w {
                        acc += dot(grow, &in_c[io..io + n]);
                    }
                    if let Some(gx_c) = gx_c.as_deref_mut() {
                        axpy(&mut gx_c[io..io + n], grow, wv);
                    }
                });
                if let Some(gw) = gw.as_mut() {
                    gw[widx] += acc;
                }
            }
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}

/// `[C, n0, n1, n2, n3] → [C, n2, n3, n0, n1]`: swaps the roles of the two
/// images in a correlation volume.
pub fn swap_halves4(x: &[f64], channels: usize, dims: [usize; 4]) -> Vec<f64> {
    let [n0, n1, n2, n3] = dims;
    let p = n0 * n1;
    let q = n2 * n3;
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        let src = &x[c * p * q..(c + 1) * p * q];
        let dst = &mut out[c * p * q..(c + 1) * p * q];
        for i in 0..p {
            for j in 0..q {
                dst[j * p + i] = src[i * q + j];
            }
        }
    }
    out
}

/// Epsilon added to the row/column maxima of the mutual-matching rescale.
pub const MUTUAL_EPS: f64 = 1e-5;

/// Soft mutual nearest-neighbour rescaling of a `[P, Q]` score matrix:
/// `c⁺² / ((max_row c⁺ + ε)(max_col c⁺ + ε))` with `c⁺ = max(c, 0)`.
pub fn mutual_nn_forward(x: &[f64], p: usize, q: usize) -> Vec<f64> {
    let (rmax, _, cmax, _) = row_col_max(x, p, q);
    let mut out = vec![0.0; p * q];
    for i in 0..p {
        for j in 0..q {
            let c = x[i * q + j].max(0.0);
            let r = c / (rmax[i] + MUTUAL_EPS);
            let s = c / (cmax[j] + MUTUAL_EPS);
            out[i * q + j] = r * s;
        }
    }
    out
}

fn row_col_max(x: &[f64], p: usize, q: usize) -> (Vec<f64>, Vec<usize>, Vec<f64>, Vec<usize>) {
    let mut rmax = vec![0.0; p];
    let mut rarg = vec![usize::MAX; p];
    let mut cmax = vec![0.0; q];
    let mut carg = vec![usize::MAX; q];
    for i in 0..p {
        for j in 0..q {
            let c = x[i * q + j];
            if c > rmax[i] {
                rmax[i] = c;
                rarg[i] = j;
            }
            if c > cmax[j] {
                cmax[j] = c;
                carg[j] = i;
            }
        }
    }
    (rmax, rarg, cmax, carg)
}

pub fn mutual_nn_backward(x: &[f64], p: usize, q: usize, grad: &[f64]) -> Vec<f64> {
    let (rmax, rarg, cmax, carg) = row_col_max(x, p, q);
    let mut gx = vec![0.0; p * q];
    let mut g_rmax = vec![0.0; p];
    let mut g_cmax = vec![0.0; q];
    for i in 0..p {
        let dr = rmax[i] + MUTUAL_EPS;
        for j in 0..q {
            let c = x[i * q + j];
            if c <= 0.0 {
                continue;
            }
            let dc = cmax[j] + MUTUAL_EPS;
            let g = grad[i * q + j];
            let out = c * c / (dr * dc);
            gx[i * q + j] += g * 2.0 * c / (dr * dc);
            g_rmax[i] -= g * out / dr;
            g_cmax[j] -= g * out / dc;
        }
    }
    for i in 0..p {
        if rarg[i] != usize::MAX {
            gx[i * q + rarg[i]] += g_rmax[i];
        }
    }
    for j in 0..q {
        if carg[j] != usize::MAX {
            gx[carg[j] * q + j] += g_cmax[j];
        }
    }
    gx
}

/// Smoothing term inside the per-pixel norm: `x / sqrt(‖x‖² + ε²)`.
pub const NORM_EPS: f64 = 1e-6;

pub fn l2_normalize_pixels(x: &[f64], c: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let mut norms = vec![NORM_EPS * NORM_EPS; plane];
    for ch in 0..c {
        for (n, v) in norms.iter_mut().zip(&x[ch * plane..(ch + 1) * plane]) {
            *n += v * v;
        }
    }
    norms.iter_mut().for_each(|n| *n = n.sqrt());
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for p in 0..plane {
            out[ch * plane + p] = x[ch * plane + p] / norms[p];
        }
    }
    (out, norms)
}

pub fn l2_normalize_pixels_backward(
    x: &[f64],
    norms: &[f64],
    c: usize,
    plane: usize,
    grad: &[f64],
) -> Vec<f64> {
    let mut gx_dot = vec![0.0; plane];
    for ch in 0..c {
        for p in 0..plane {
            gx_dot[p] += grad[ch * plane + p] * x[ch * plane + p];
        }
    }
    let mut gx = vec![0.0; x.len()];
    for ch in 0..c {
        for p in 0..plane {
            let n = norms[p];
            let i = ch * plane + p;
            gx[i] = grad[i] / n - x[i] * gx_dot[p] / (n * n * n);
        }
    }
    gx
}

/// Channel-first `[C, P]` → pixel-major `[P, C]`.
fn to_pixel_major(x: &[f64], c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for i in 0..p {
            out[i * c + ch] = x[ch * p + i];
        }
    }
    out
}

/// `out[i, j] = a[:, i] · b[:, j]` for channel-first `a: [C, P]`, `b: [C, Q]`.
pub fn global_corr_forward(a: &[f64], b: &[f64], c: usize, p: usize, q: usize) -> Vec<f64> {
    let at = to_pixel_major(a, c, p);
    let bt = to_pixel_major(b, c, q);
    let mut out = vec![0.0; p * q];
    for i in 0..p {
        let ai = &at[i * c..(i + 1) * c];
        for j in 0..q {
            out[i * q + j] = dot(ai, &bt[j * c..(j + 1) * c]);
        }
    }
    out
}

pub fn global_corr_backward(
    a: &[f64],
    b: &[f64],
    c: usize,
    p: usize,
    q: usize,
    grad: &[f64],
    need: [bool; 2],
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let ga = need[0].then(|| {
        let mut ga = vec![0.0; c * p];
        for ch in 0..c {
            let brow = &b[ch * q..(ch + 1) * q];
            for i in 0..p {
                ga[ch * p + i] = dot(&grad[i * q..(i + 1) * q], brow);
            }
        }
        ga
    });
    let gb = need[1].then(|| {
        let mut gb = vec![0.0; c * q];
        for ch in 0..c {
            let gb_c = &mut gb[ch * q..(ch + 1) * q];
            for i in 0..p {
                axpy(gb_c, &grad[i * q..(i + 1) * q], a[ch * p + i]);
            }
        }
        gb
    });
    (ga, gb)
}

/// Displacement of channel `k` of a radius-`n` local correlation, row-major
/// over `(dy, dx)`.
#[inline]
pub fn local_displacement(k: usize, n: usize) -> (isize, isize) {
    let side = 2 * n + 1;
    ((k % side) as isize - n as isize, (k / side) as isize - n as isize)
}

pub fn local_corr_forward(a: &[f64], b: &[f64], c: usize, h: usize, w: usize, n: usize) -> Vec<f64> {
    let plane = h * w;
    let side = 2 * n + 1;
    let mut out = vec![0.0; side * side * plane];
    for k in 0..side * side {
        let (dx, dy) = local_displacement(k, n);
        let (y0, y1) = valid_range(h, dy);
        let (x0, x1) = valid_range(w, dx);
        let out_k = &mut out[k * plane..(k + 1) * plane];
        for ch in 0..c {
            let ac = &a[ch * plane..(ch + 1) * plane];
            let bc = &b[ch * plane..(ch + 1) * plane];
            for y in y0..y1 {
                let by = (y as isize + dy) as usize;
                for x in x0..x1 {
                    let bx = (x as isize + dx) as usize;
                    out_k[y * w + x] += ac[y * w + x] * bc[by * w + bx];
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn local_corr_backward(
    a: &[f64],
    b: &[f64],
    c: usize,
    h: usize,
    w: usize,
    n: usize,
    grad: &[f64],
    need: [bool; 2],
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let plane = h * w;
    let side = 2 * n + 1;
    let mut ga = need[0].then(|| vec![0.0; a.len()]);
    let mut gb = need[1].then(|| vec![0.0; b.len()]);
    for k in 0..side * side {
        let (dx, dy) = local_displacement(k, n);
        let (y0, y1) = valid_range(h, dy);
        let (x0, x1) = valid_range(w, dx);
        let g_k = &grad[k * plane..(k + 1) * plane];
        for ch in 0..c {
            for y in y0..y1 {
                let by = (y as isize + dy) as usize;
                for x in x0..x1 {
                    let bx = (x as isize + dx) as usize;
                    let g = g_k[y * w + x];
                    let ia = ch * plane + y * w + x;
                    let ib = ch * plane + by * w + bx;
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += g * b[ib];
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += g * a[ia];
                    }
                }
            }
        }
    }
    (ga, gb)
}

/// Bilinear sampling plan: for each output pixel, up to four `(source
/// index, weight)` taps inside the grid.
#[derive(Debug, Clone)]
pub struct SamplePlan {
    pub taps: Vec<Vec<(usize, f64)>>,
    pub mask: Vec<bool>,
}

impl SamplePlan {
    /// Plans sampling at `(x + dx, y + dy)` for every pixel; pixels flagged
    /// invalid, or with no weighted tap inside the grid, are masked out.
    pub fn new(h: usize, w: usize, disp: &[(f64, f64)], valid: &[bool]) -> SamplePlan {
        let mut taps = Vec::with_capacity(h * w);
        let mut mask = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (dx, dy) = disp[i];
                let px = x as f64 + dx;
                let py = y as f64 + dy;
                let mut t = Vec::new();
                if valid[i] && px.is_finite() && py.is_finite() {
                    let fx0 = px.floor();
                    let fy0 = py.floor();
                    let ax = px - fx0;
                    let ay = py - fy0;
                    let corners = [
                        (fx0, fy0, (1.0 - ax) * (1.0 - ay)),
                        (fx0 + 1.0, fy0, ax * (1.0 - ay)),
                        (fx0, fy0 + 1.0, (1.0 - ax) * ay),
                        (fx0 + 1.0, fy0 + 1.0, ax * ay),
                    ];
                    for (cx, cy, wt) in corners {
                        if wt != 0.0 && cx >= 0.0 && cy >= 0.0 && cx < w as f64 && cy < h as f64 {
                            t.push((cy as usize * w + cx as usize, wt));
                        }
                    }
                    mask.push(!t.is_empty());
                } else {
                    mask.push(false);
                }
                taps.push(t);
            }
        }
        SamplePlan { taps, mask }
    }

    pub fn forward(&self, x: &[f64], c: usize, plane: usize) -> Vec<f64> {
        let mut out = vec![0.0; c * plane];
        for ch in 0..c {
            let src = &x[ch * plane..(ch + 1) * plane];
            let dst = &mut out[ch * plane..(ch + 1) * plane];
            for (p, taps) in self.taps.iter().enumerate() {
                dst[p] = taps.iter().map(|&(s, wt)| wt * src[s]).sum();
            }
        }
        out
    }

    pub fn backward(&self, grad: &[f64], c: usize, plane: usize) -> Vec<f64> {
        let mut gx = vec![0.0; c * plane];
        for ch in 0..c {
            let g = &grad[ch * plane..(ch + 1) * plane];
            let dst = &mut gx[ch * plane..(ch + 1) * plane];
            for (p, taps) in self.taps.iter().enumerate() {
                for &(s, wt) in taps {
                    dst[s] += wt * g[p];
                }
            }
        }
        gx
    }
}

/// 2×2 stride-2 pooling of `[C, H, W]`; `max` selects max-pooling, otherwise
/// the mean. Odd trailing rows/columns are dropped.
pub fn pool2(x: &[f64], c: usize, h: usize, w: usize, max: bool) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                let q = [plane[i], plane[i + 1], plane[i + w], plane[i + w + 1]];
                out.push(if max {
                    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    0.25 * q.iter().sum::<f64>()
                });
            }
        }
    }
    out
}

/// 3×3 box average of `[C, H, W]` at stride 1, averaging over the
/// neighbours that lie inside the grid.
pub fn box3(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let (mut acc, mut n) = (0.0, 0.0);
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xi in xx.saturating_sub(1)..(xx + 2).min(w) {
                        acc += plane[yy * w + xi];
                        n += 1.0;
                    }
                }
                out[ch * h * w + y * w + xx] = acc / n;
            }
        }
    }
    out
}

/// `out[m, n] = Σ_k a[m, k] b[k, n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            axpy(&mut out[i * n..(i + 1) * n], &b[kk * n..(kk + 1) * n], av);
        }
    }
    out
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
