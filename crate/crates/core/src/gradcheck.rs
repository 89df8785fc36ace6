//! Finite-difference oracle for tape gradients of piecewise-smooth scalar
//! functions.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Agreement required between the estimates at steps `h` and `h/2`,
/// relative to the larger of the estimate and the RMS gradient entry.
const AGREE_TOL: f64 = 3e-5;

/// Outcome of [`check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the
    /// resolved coordinates.
    pub rel_error: f64,
    pub checked: usize,
    /// Coordinates with a switch on both sides within one step.
    pub unresolved: usize,
}

impl GradReport {
    pub fn unresolved_fraction(&self) -> f64 {
        self.unresolved as f64 / (self.checked + self.unresolved).max(1) as f64
    }
}

/// Compares the tape gradient of `f` with respect to every entry of
/// `leaves` against finite differences with step `h`.
///
/// `f` must build a scalar from the given leaf handles. Functions built from
/// ReLU and max are smooth except at switches; an estimate is trusted when
/// it agrees at steps `h` and `h/2`. The central difference is tried first;
/// when a switch lies inside `[x − h, x + h]`, the second-order one-sided
/// difference from the switch-free side is used instead.
pub fn check(leaves: &[Tensor], h: f64, f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> GradReport {
    let eval = |ts: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);
    let base = eval(leaves);
    let all: Vec<f64> = leaves
        .iter()
        .zip(&vars)
        .flat_map(|(leaf, &v)| grads.tensor(v, leaf).into_data())
        .collect();
    let scale = (all.iter().map(|g| g * g).sum::<f64>() / all.len().max(1) as f64).sqrt().max(1e-12);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut unresolved = 0;
    for (li, leaf) in leaves.iter().enumerate() {
        let g = grads.tensor(vars[li], leaf);
        for i in 0..leaf.len() {
            let at_offset = |d: f64| {
                let mut ts = leaves.to_vec();
                ts[li].data_mut()[i] += d;
                eval(&ts)
            };
            let central = |s: f64| (at_offset(s) - at_offset(-s)) / (2.0 * s);
            let one_sided =
                |s: f64, dir: f64| dir * (-3.0 * base + 4.0 * at_offset(dir * s / 2.0) - at_offset(dir * s)) / s;
            let agree = |a: f64, b: f64| (a - b).abs() <= AGREE_TOL * a.abs().max(scale);
            let (c1, c2) = (central(h), central(h / 2.0));
            let estimate = if agree(c1, c2) {
                Some(c1)
            } else {
                [1.0, -1.0].into_iter().find_map(|dir| {
                    let (a, b) = (one_sided(h, dir), one_sided(h / 2.0, dir));
                    agree(a, b).then_some(a)
                })
            };
            match estimate {
                Some(d) => {
                    analytic.push(g.data()[i]);
                    numeric.push(d);
                }
                None => unresolved += 1,
            }
        }
    }
    GradReport {
        rel_error: rel_err(&analytic, &numeric),
        checked: analytic.len(),
        unresolved,
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with the denominator floored at 1e-12.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}
