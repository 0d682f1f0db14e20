//! Training objective: scale-invariant log loss plus a multi-scale
//! gradient-matching term, both with analytic gradients.
//!
//! The functions are agnostic of the depth domain. Training compares
//! normalized inverse canonical depth, so callers encode rasters with
//! [`crate::camera::encode_depth_map`] and mask ground truth outside
//! `[d_min, d_max]` with [`depth_range_mask`] first.

use std::ops::{Add, AddAssign, Div, Sub};

use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::camera::{DepthMap, TransformConfig};
use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_si: f64,
    pub lambda_grad: f64,
    /// Number of pyramid levels in the gradient-matching term.
    pub grad_scales: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_si: 0.5,
            lambda_grad: 0.5,
            grad_scales: 4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.lambda_si) && self.lambda_grad >= 0.0 && self.grad_scales >= 1
        {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid loss config {self:?}")))
        }
    }
}

/// Loss value and its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// Zero at masked pixels.
    pub gradient: Raster<f64>,
    pub n_valid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    ScaleInvariant,
    GradientMatching,
    Total,
}

/// Valid where the ground truth lies inside `[d_min, d_max]`.
pub fn depth_range_mask(gt: &DepthMap, cfg: &TransformConfig) -> Mask {
    Raster {
        width: gt.width,
        height: gt.height,
        data: gt
            .values
            .iter()
            .map(|&d| d >= cfg.d_min && d <= cfg.d_max)
            .collect(),
    }
}

fn check_inputs(pred: &Raster<f64>, gt: &Raster<f64>, mask: &Mask, positive: bool) -> Result<usize> {
    if !pred.same_shape(gt) || !pred.same_shape(mask) {
        return Err(Error::invalid(format!(
            "shape mismatch: pred {}x{}, gt {}x{}, mask {}x{}",
            pred.width, pred.height, gt.width, gt.height, mask.width, mask.height
        )));
    }
    let mut n = 0;
    for i in 0..pred.data.len() {
        if !mask.data[i] {
            continue;
        }
        let (p, g) = (pred.data[i], gt.data[i]);
        let ok = p.is_finite() && g.is_finite() && (!positive || (p > 0.0 && g > 0.0));
        if !ok {
            return Err(Error::invalid(format!(
                "invalid value at valid pixel {i}: pred {p}, gt {g}"
            )));
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("mask has no valid pixels"));
    }
    Ok(n)
}

/// `(1/N) Σ r² − (λ/N²)(Σ r)²` with `r = log pred − log gt` over valid pixels.
pub fn si_loss(pred: &Raster<f64>, gt: &Raster<f64>, mask: &Mask, lambda_si: f64) -> Result<LossReport> {
    let n = check_inputs(pred, gt, mask, true)?;
    let nf = n as f64;
    let mut residual = vec![0.0; pred.data.len()];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for i in 0..pred.data.len() {
        if mask.data[i] {
            let r = pred.data[i].ln() - gt.data[i].ln();
            residual[i] = r;
            sum += r;
            sum_sq += r * r;
        }
    }
    let value = sum_sq / nf - lambda_si * sum * sum / (nf * nf);
    let mean = sum / nf;
    let gradient = residual
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if mask.data[i] {
                2.0 / nf * (r - lambda_si * mean) / pred.data[i]
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossReport {
        value,
        gradient: Raster {
            width: pred.width,
            height: pred.height,
            data: gradient,
        },
        n_valid: n,
    })
}

/// Arithmetic needed by the gradient-matching value. Implemented for `f64`
/// and for double-double, which the finite-difference checker uses so that
/// locally flat directions difference to (nearly) exactly zero.
trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + AddAssign + Div<f64, Output = Self>
{
    fn zero() -> Self;
    fn from_f64(v: f64) -> Self;
    fn magnitude(self) -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn magnitude(self) -> Self {
        self.abs()
    }
}

impl Scalar for TwoFloat {
    fn zero() -> Self {
        TwoFloat::from(0.0)
    }
    fn from_f64(v: f64) -> Self {
        TwoFloat::from(v)
    }
    fn magnitude(self) -> Self {
        self.abs()
    }
}

struct Level<T> {
    width: usize,
    height: usize,
    residual: Vec<T>,
    valid: Vec<bool>,
    /// Valid children per cell, for levels above the base.
    counts: Vec<u8>,
}

fn pool<T: Scalar>(level: &Level<T>) -> Option<Level<T>> {
    let (w, h) = (level.width / 2, level.height / 2);
    if w == 0 || h == 0 {
        return None;
    }
    let mut residual = vec![T::zero(); w * h];
    let mut valid = vec![false; w * h];
    let mut counts = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = T::zero();
            let mut c = 0u8;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let j = (2 * y + dy) * level.width + 2 * x + dx;
                if level.valid[j] {
                    s += level.residual[j];
                    c += 1;
                }
            }
            let i = y * w + x;
            counts[i] = c;
            if c > 0 {
                residual[i] = s / c as f64;
                valid[i] = true;
            }
        }
    }
    Some(Level {
        width: w,
        height: h,
        residual,
        valid,
        counts,
    })
}

fn pyramid<T: Scalar>(base: Level<T>, grad_scales: usize) -> Vec<Level<T>> {
    let mut levels = vec![base];
    while levels.len() < grad_scales {
        match pool(levels.last().unwrap()) {
            Some(next) => levels.push(next),
            None => break,
        }
    }
    levels
}

/// Sum of absolute forward differences between valid neighbors of one level.
fn level_total<T: Scalar>(lv: &Level<T>) -> T {
    let (w, h) = (lv.width, lv.height);
    let mut total = T::zero();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !lv.valid[i] {
                continue;
            }
            if x + 1 < w && lv.valid[i + 1] {
                total += (lv.residual[i + 1] - lv.residual[i]).magnitude();
            }
            if y + 1 < h && lv.valid[i + w] {
                total += (lv.residual[i + w] - lv.residual[i]).magnitude();
            }
        }
    }
    total
}

/// Unnormalized gradient-matching sum with residuals in `T` precision.
fn grad_matching_sum<T: Scalar>(pred: &[T], gt: &Raster<f64>, mask: &Mask, grad_scales: usize) -> T {
    let base = Level {
        width: gt.width,
        height: gt.height,
        residual: (0..gt.data.len())
            .map(|i| {
                if mask.data[i] {
                    pred[i] - T::from_f64(gt.data[i])
                } else {
                    T::zero()
                }
            })
            .collect(),
        valid: mask.data.clone(),
        counts: Vec::new(),
    };
    let mut total = T::zero();
    for lv in &pyramid(base, grad_scales) {
        total += level_total(lv);
    }
    total
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Multi-scale gradient matching: `(1/N) Σ_k Σ (|∂x R_k| + |∂y R_k|)` where
/// `R_0 = pred − gt` and each `R_{k+1}` is a 2×2 average of the valid cells
/// of `R_k`. Differences touching an invalid cell are skipped.
pub fn grad_matching_loss(
    pred: &Raster<f64>,
    gt: &Raster<f64>,
    mask: &Mask,
    grad_scales: usize,
) -> Result<LossReport> {
    let n = check_inputs(pred, gt, mask, false)?;
    if grad_scales == 0 {
        return Err(Error::invalid("grad_scales must be at least 1"));
    }
    let base = Level {
        width: pred.width,
        height: pred.height,
        residual: (0..pred.data.len())
            .map(|i| if mask.data[i] { pred.data[i] - gt.data[i] } else { 0.0 })
            .collect(),
        valid: mask.data.clone(),
        counts: Vec::new(),
    };
    let levels = pyramid(base, grad_scales);

    let mut total = 0.0;
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(levels.len());
    for lv in &levels {
        total += level_total(lv);
        let mut g = vec![0.0; lv.residual.len()];
        let (w, h) = (lv.width, lv.height);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !lv.valid[i] {
                    continue;
                }
                if x + 1 < w && lv.valid[i + 1] {
                    let s = sign(lv.residual[i + 1] - lv.residual[i]);
                    g[i + 1] += s;
                    g[i] -= s;
                }
                if y + 1 < h && lv.valid[i + w] {
                    let s = sign(lv.residual[i + w] - lv.residual[i]);
                    g[i + w] += s;
                    g[i] -= s;
                }
            }
        }
        grads.push(g);
    }

    // reverse accumulation through the pooling pyramid, coarsest first
    for k in (1..levels.len()).rev() {
        let (coarse, fine) = (&levels[k], &levels[k - 1]);
        let parent = std::mem::take(&mut grads[k]);
        let child = &mut grads[k - 1];
        for y in 0..coarse.height {
            for x in 0..coarse.width {
                let i = y * coarse.width + x;
                if coarse.counts[i] == 0 {
                    continue;
                }
                let share = parent[i] / coarse.counts[i] as f64;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let j = (2 * y + dy) * fine.width + 2 * x + dx;
                    if fine.valid[j] {
                        child[j] += share;
                    }
                }
            }
        }
    }

    let nf = n as f64;
    let gradient = grads[0]
        .iter()
        .zip(&mask.data)
        .map(|(&g, &m)| if m { g / nf } else { 0.0 })
        .collect();
    Ok(LossReport {
        value: total / nf,
        gradient: Raster {
            width: pred.width,
            height: pred.height,
            data: gradient,
        },
        n_valid: n,
    })
}

/// `L_si + λ_grad · L_grad`.
pub fn total_loss(pred: &Raster<f64>, gt: &Raster<f64>, mask: &Mask, cfg: &LossConfig) -> Result<LossReport> {
    cfg.validate()?;
    let si = si_loss(pred, gt, mask, cfg.lambda_si)?;
    let grad = grad_matching_loss(pred, gt, mask, cfg.grad_scales)?;
    let gradient = si
        .gradient
        .data
        .iter()
        .zip(&grad.gradient.data)
        .map(|(a, b)| a + cfg.lambda_grad * b)
        .collect();
    Ok(LossReport {
        value: si.value + cfg.lambda_grad * grad.value,
        gradient: Raster {
            width: pred.width,
            height: pred.height,
            data: gradient,
        },
        n_valid: si.n_valid,
    })
}

pub fn evaluate_loss(
    kind: LossKind,
    pred: &Raster<f64>,
    gt: &Raster<f64>,
    mask: &Mask,
    cfg: &LossConfig,
) -> Result<LossReport> {
    match kind {
        LossKind::ScaleInvariant => si_loss(pred, gt, mask, cfg.lambda_si),
        LossKind::GradientMatching => grad_matching_loss(pred, gt, mask, cfg.grad_scales),
        LossKind::Total => total_loss(pred, gt, mask, cfg),
    }
}

/// Central difference of the scale-invariant value at pixel `i`.
///
/// Moving `pred[i]` by `±ε` moves only `r_i`, by `δ = ln(1 ± ε/pred[i])`, so
/// the change in the loss is `(2 r_i δ + δ²)/N − λ(2 S δ + δ²)/N²` exactly,
/// with `S = Σ r`. Differencing that expression avoids subtracting two
/// loss values of order one.
fn si_central_difference(
    residual: &[f64],
    sum: f64,
    pred: &Raster<f64>,
    i: usize,
    n_valid: usize,
    lambda_si: f64,
    epsilon: f64,
) -> f64 {
    let n = n_valid as f64;
    let r = residual[i];
    let change = |delta: f64| {
        (2.0 * r * delta + delta * delta) / n - lambda_si * (2.0 * sum * delta + delta * delta) / (n * n)
    };
    let up = (epsilon / pred.data[i]).ln_1p();
    let down = (-epsilon / pred.data[i]).ln_1p();
    (change(up) - change(down)) / (2.0 * epsilon)
}

/// Central difference of the gradient-matching value at pixel `i`, evaluated
/// in double-double so that exactly flat directions yield ~1e-26 instead of
/// f64 rounding noise.
fn grad_central_difference(
    probe: &mut [TwoFloat],
    i: usize,
    gt: &Raster<f64>,
    mask: &Mask,
    grad_scales: usize,
    n_valid: usize,
    epsilon: f64,
) -> f64 {
    let x = probe[i];
    probe[i] = x + epsilon;
    let up = grad_matching_sum(probe, gt, mask, grad_scales);
    probe[i] = x - epsilon;
    let down = grad_matching_sum(probe, gt, mask, grad_scales);
    probe[i] = x;
    f64::from((up - down) / (2.0 * epsilon * n_valid as f64))
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences over every pixel. Relative error uses
/// `max(|analytic|, |numeric|, 1e-12)` as denominator; masked pixels must
/// carry an exactly zero gradient.
///
/// The total loss is checked term by term: its central difference is the
/// scale-invariant difference plus `λ_grad` times the gradient-matching one.
pub fn finite_diff_check(
    kind: LossKind,
    pred: &Raster<f64>,
    gt: &Raster<f64>,
    mask: &Mask,
    cfg: &LossConfig,
    epsilon: f64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let analytic = evaluate_loss(kind, pred, gt, mask, cfg)?;
    let n_valid = analytic.n_valid;
    let residual: Vec<f64> = (0..pred.data.len())
        .map(|i| if mask.data[i] { pred.data[i].ln() - gt.data[i].ln() } else { 0.0 })
        .collect();
    let sum: f64 = residual.iter().sum();
    let si_term = |i: usize| si_central_difference(&residual, sum, pred, i, n_valid, cfg.lambda_si, epsilon);
    let mut probe_dd: Vec<TwoFloat> = pred.data.iter().map(|&v| TwoFloat::from(v)).collect();
    let mut worst: f64 = 0.0;
    for i in 0..pred.data.len() {
        let a = analytic.gradient.data[i];
        if !mask.data[i] {
            if a != 0.0 {
                worst = worst.max(1.0);
            }
            continue;
        }
        let mut grad_term = || {
            grad_central_difference(&mut probe_dd, i, gt, mask, cfg.grad_scales, n_valid, epsilon)
        };
        let numeric = match kind {
            LossKind::ScaleInvariant => si_term(i),
            LossKind::GradientMatching => grad_term(),
            LossKind::Total => {
                let g = grad_term();
                si_term(i) + cfg.lambda_grad * g
            }
        };
        let denom = a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
