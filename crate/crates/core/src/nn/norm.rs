use ndarray::{Array1, Array2};

use super::{join, Module, Param};

/// Layer normalization over the last (channel) axis of a `(rows, channels)`
/// matrix. On spatial maps stored as `(h * w, channels)` this is the
/// channel-wise 2-D layer norm as well.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub weight: Param,
    pub bias: Param,
    pub eps: f32,
}

/// Saved statistics for the backward pass.
pub struct LayerNormCache {
    xhat: Array2<f32>,
    inv_std: Array1<f32>,
}

impl LayerNorm {
    pub fn new(channels: usize, eps: f32) -> Self {
        let mut weight = Param::zeros(&[channels]);
        weight.value.fill(1.0);
        Self {
            weight,
            bias: Param::zeros(&[channels]),
            eps,
        }
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array2<f32>) -> (Array2<f32>, LayerNormCache) {
        let (rows, c) = x.dim();
        let gamma = self.weight.value.as_slice().expect("contiguous weight");
        let beta = self.bias.value.as_slice().expect("contiguous bias");
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut xhat = vec![0f32; rows * c];
        let mut y = vec![0f32; rows * c];
        let mut inv_std = Array1::<f32>::zeros(rows);
        for r in 0..rows {
            let row = &xs[r * c..(r + 1) * c];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / c as f64;
            let is = (1.0 / (var + self.eps as f64).sqrt()) as f32;
            inv_std[r] = is;
            let mean = mean as f32;
            let xh = &mut xhat[r * c..(r + 1) * c];
            let yr = &mut y[r * c..(r + 1) * c];
            for k in 0..c {
                let v = (row[k] - mean) * is;
                xh[k] = v;
                yr[k] = v * gamma[k] + beta[k];
            }
        }
        let shape = (rows, c);
        (
            Array2::from_shape_vec(shape, y).expect("sized"),
            LayerNormCache {
                xhat: Array2::from_shape_vec(shape, xhat).expect("sized"),
                inv_std,
            },
        )
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Array2<f32>) -> Array2<f32> {
        let (rows, c) = dy.dim();
        let gamma = self.weight.value.as_slice().expect("contiguous weight").to_vec();
        let dy = dy.as_standard_layout();
        let g_all = dy.as_slice().expect("standard layout");
        let xh_all = cache.xhat.as_slice().expect("standard layout");
        let mut dgamma = vec![0f32; c];
        let mut dbeta = vec![0f32; c];
        let mut dx = vec![0f32; rows * c];
        let cf = c as f32;
        for r in 0..rows {
            let xh = &xh_all[r * c..(r + 1) * c];
            let g = &g_all[r * c..(r + 1) * c];
            let mut sum_g = 0.0f32;
            let mut sum_gx = 0.0f32;
            for k in 0..c {
                dgamma[k] += g[k] * xh[k];
                dbeta[k] += g[k];
                let gg = g[k] * gamma[k];
                sum_g += gg;
                sum_gx += gg * xh[k];
            }
            let is = cache.inv_std[r];
            let (mg, mgx) = (sum_g / cf, sum_gx / cf);
            let out = &mut dx[r * c..(r + 1) * c];
            for k in 0..c {
                out[k] = is * (g[k] * gamma[k] - mg - xh[k] * mgx);
            }
        }
        for (a, b) in self.weight.grad_mut().iter_mut().zip(&dgamma) {
            *a += b;
        }
        for (a, b) in self.bias.grad_mut().iter_mut().zip(&dbeta) {
            *a += b;
        }
        Array2::from_shape_vec((rows, c), dx).expect("sized")
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
