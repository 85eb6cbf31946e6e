//! Segmentation losses with analytic gradients with respect to the predicted
//! probabilities.
//!
//! All reductions run sequentially in row-major order so values are
//! reproducible bit for bit.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::domain::{BinaryMask, ProbabilityMask};
use crate::error::{Error, Result};

/// Probability clamp applied before logarithms.
pub const EPSILON: f64 = 1e-7;

/// Loss value plus `d loss / d p_hat` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TverskyParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for TverskyParams {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 0.3,
            gamma: 4.0 / 3.0,
        }
    }
}

impl TverskyParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 || alpha + beta <= 0.0 || gamma <= 0.0 || !(alpha + beta + gamma).is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid Tversky parameters alpha={alpha} beta={beta} gamma={gamma}"
            )));
        }
        Ok(Self { alpha, beta, gamma })
    }
}

/// Which loss drives training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Dice,
    #[default]
    BceDice,
    FocalTversky(TverskyParams),
}

impl LossKind {
    pub fn evaluate(&self, y: &BinaryMask, p: &ProbabilityMask) -> Result<LossValue> {
        match self {
            LossKind::Bce => bce_loss(y, p),
            LossKind::Dice => dice_loss(y, p),
            LossKind::BceDice => combined_loss(y, p),
            LossKind::FocalTversky(params) => focal_tversky_loss(y, p, *params),
        }
    }
}

fn check_shapes(y: &BinaryMask, p: &ProbabilityMask) -> Result<()> {
    if y.dims() != p.dims() {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs prediction {:?}",
            y.dims(),
            p.dims()
        )));
    }
    if y.dims().0 * y.dims().1 == 0 {
        return Err(Error::InvalidArgument("empty mask".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy over pixels.
pub fn bce_loss(y: &BinaryMask, p: &ProbabilityMask) -> Result<LossValue> {
    check_shapes(y, p)?;
    let n = y.as_slice().len() as f64;
    let mut sum = 0.0;
    let mut gradient = Array2::zeros(y.dims());
    Zip::from(&mut gradient)
        .and(y.view())
        .and(p.view())
        .for_each(|g, &t, &q| {
            let q = q.clamp(EPSILON, 1.0 - EPSILON);
            if t == 1 {
                sum -= q.ln();
                *g = -1.0 / (q * n);
            } else {
                sum -= (1.0 - q).ln();
                *g = 1.0 / ((1.0 - q) * n);
            }
        });
    Ok(LossValue { value: sum / n, gradient })
}

struct SoftCounts {
    /// sum of y * p
    tp: f64,
    sum_y: f64,
    sum_p: f64,
}

fn soft_counts(y: &BinaryMask, p: &ProbabilityMask) -> SoftCounts {
    let mut c = SoftCounts {
        tp: 0.0,
        sum_y: 0.0,
        sum_p: 0.0,
    };
    for (&t, &q) in y.as_slice().iter().zip(p.as_slice()) {
        let t = t as f64;
        c.tp += t * q;
        c.sum_y += t;
        c.sum_p += q;
    }
    c
}

/// Smoothed soft Dice coefficient `(2 sum(y p) + 1) / (sum y + sum p + 1)`.
pub fn dice_coefficient(y: &BinaryMask, p: &ProbabilityMask) -> Result<f64> {
    check_shapes(y, p)?;
    let c = soft_counts(y, p);
    Ok((2.0 * c.tp + 1.0) / (c.sum_y + c.sum_p + 1.0))
}

/// `1 - dice_coefficient`.
pub fn dice_loss(y: &BinaryMask, p: &ProbabilityMask) -> Result<LossValue> {
    check_shapes(y, p)?;
    let c = soft_counts(y, p);
    let num = 2.0 * c.tp + 1.0;
    let den = c.sum_y + c.sum_p + 1.0;
    let den2 = den * den;
    let gradient = y.view().mapv(|t| -(2.0 * t as f64 * den - num) / den2);
    Ok(LossValue {
        value: 1.0 - num / den,
        gradient,
    })
}

/// Sum of [`bce_loss`] and [`dice_loss`].
pub fn combined_loss(y: &BinaryMask, p: &ProbabilityMask) -> Result<LossValue> {
    let bce = bce_loss(y, p)?;
    let dice = dice_loss(y, p)?;
    Ok(LossValue {
        value: bce.value + dice.value,
        gradient: bce.gradient + &dice.gradient,
    })
}

/// Smoothed Tversky index `(2 TP + 1) / (2 TP + 2 alpha FN + 2 beta FP + 1)`.
///
/// With `alpha = beta = 0.5` this is exactly [`dice_coefficient`].
pub fn tversky_index(y: &BinaryMask, p: &ProbabilityMask, params: TverskyParams) -> Result<f64> {
    check_shapes(y, p)?;
    Ok(tversky_parts(&soft_counts(y, p), params).0)
}

/// Returns `(index, numerator, denominator)`.
fn tversky_parts(c: &SoftCounts, params: TverskyParams) -> (f64, f64, f64) {
    let fn_ = c.sum_y - c.tp;
    let fp = c.sum_p - c.tp;
    let num = 2.0 * c.tp + 1.0;
    let den = 2.0 * c.tp + 2.0 * params.alpha * fn_ + 2.0 * params.beta * fp + 1.0;
    (num / den, num, den)
}

/// `(1 - TI)^gamma`.
pub fn focal_tversky_loss(y: &BinaryMask, p: &ProbabilityMask, params: TverskyParams) -> Result<LossValue> {
    check_shapes(y, p)?;
    let c = soft_counts(y, p);
    let (ti, num, den) = tversky_parts(&c, params);
    let base = (1.0 - ti).max(0.0);
    let value = base.powf(params.gamma);
    // d value / d TI
    let outer = if base > 0.0 {
        -params.gamma * base.powf(params.gamma - 1.0)
    } else {
        0.0
    };
    let den2 = den * den;
    // dTP/dp = y, dFN/dp = -y, dFP/dp = 1 - y
    let gradient = y.view().mapv(|t| {
        let t = t as f64;
        let dnum = 2.0 * t;
        let dden = 2.0 * t - 2.0 * params.alpha * t + 2.0 * params.beta * (1.0 - t);
        outer * (dnum * den - num * dden) / den2
    });
    Ok(LossValue { value, gradient })
}
