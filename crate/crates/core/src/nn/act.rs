//! Elementwise activations.

use ndarray::{Array2, Zip};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// 1 / sqrt(2 pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))) as f32
}

#[inline]
pub fn gelu_grad(x: f32) -> f32 {
    let x = x as f64;
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    (cdf + x * pdf) as f32
}

pub fn gelu_inplace(x: &mut Array2<f32>) {
    x.mapv_inplace(gelu);
}

pub fn relu_inplace(x: &mut Array2<f32>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// `dy * gelu'(pre)`.
pub fn gelu_backward(pre: &Array2<f32>, dy: &Array2<f32>) -> Array2<f32> {
    let mut out = Array2::zeros(dy.raw_dim());
    Zip::from(&mut out)
        .and(pre)
        .and(dy)
        .for_each(|o, &x, &g| *o = g * gelu_grad(x));
    out
}

/// `dy` masked where the ReLU output was zero.
pub fn relu_backward(post: &Array2<f32>, dy: &Array2<f32>) -> Array2<f32> {
    let mut out = dy.clone();
    Zip::from(&mut out).and(post).for_each(|o, &y| {
        if y <= 0.0 {
            *o = 0.0;
        }
    });
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_values() {
        // x * Phi(x) with Phi from the normal CDF tables
        assert!((gelu(1.0) - 0.841_344_7).abs() < 1e-6);
        assert!((gelu(-1.0) + 0.158_655_3).abs() < 1e-6);
        assert_eq!(gelu(0.0), 0.0);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f32, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-3f64;
            let xd = x as f64;
            let f = |v: f64| 0.5 * v * (1.0 + libm::erf(v * FRAC_1_SQRT_2));
            let num = (f(xd + h) - f(xd - h)) / (2.0 * h);
            assert!((gelu_grad(x) as f64 - num).abs() < 1e-6);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }
}
