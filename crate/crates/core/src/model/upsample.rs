//! Bilinear upsampling of low-resolution logits (half-pixel centers) and
//! its adjoint.

use ndarray::Array2;

use crate::dataio::resize::sample_axis;

/// Resizes a `(h, w)` grid to `(out, out)`.
pub fn upsample(src: &Array2<f64>, out: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let xs = sample_axis(w, out);
    let ys = sample_axis(h, out);
    let mut tmp = Array2::<f64>::zeros((h, out));
    for r in 0..h {
        for (o, &(x0, x1, lx)) in xs.iter().enumerate() {
            tmp[[r, o]] = src[[r, x0]] * (1.0 - lx) + src[[r, x1]] * lx;
        }
    }
    let mut dst = Array2::<f64>::zeros((out, out));
    for (o, &(y0, y1, ly)) in ys.iter().enumerate() {
        let (a, b) = (tmp.row(y0), tmp.row(y1));
        let mut row = dst.row_mut(o);
        for x in 0..out {
            row[x] = a[x] * (1.0 - ly) + b[x] * ly;
        }
    }
    dst
}

/// Adjoint of [`upsample`]: maps `d loss / d output` to `d loss / d input`.
pub fn upsample_backward(grad: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let out = grad.nrows();
    let xs = sample_axis(w, out);
    let ys = sample_axis(h, out);
    let mut tmp = Array2::<f64>::zeros((h, out));
    for (o, &(y0, y1, ly)) in ys.iter().enumerate() {
        let g = grad.row(o);
        for x in 0..out {
            tmp[[y0, x]] += g[x] * (1.0 - ly);
            tmp[[y1, x]] += g[x] * ly;
        }
    }
    let mut dsrc = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        for (o, &(x0, x1, lx)) in xs.iter().enumerate() {
            let g = tmp[[r, o]];
            dsrc[[r, x0]] += g * (1.0 - lx);
            dsrc[[r, x1]] += g * lx;
        }
    }
    dsrc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_stays_constant() {
        let src = Array2::from_elem((4, 4), 2.5);
        assert!(upsample(&src, 16).iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn backward_is_the_adjoint() {
        // <U x, y> == <x, U^T y>
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((5, 5), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((20, 20), |_| rng.gen_range(-1.0..1.0));
        let lhs = (upsample(&x, 20) * &y).sum();
        let rhs = (upsample_backward(&y, 5, 5) * &x).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
