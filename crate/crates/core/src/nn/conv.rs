use ndarray::{Array2, ArrayView2, Axis, Ix1, Ix2};
use rand::Rng;

use super::{join, Module, Param};

/// Square-kernel 2-D convolution on `(h * w, channels)` maps, forward only.
/// Weight layout `(out, in, k, k)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((input * kernel * kernel) as f32).sqrt();
        Self {
            weight: Param::uniform(&[output, input, kernel, kernel], bound, rng),
            bias: bias.then(|| Param::uniform(&[output], bound, rng)),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    /// Returns the output map and its `(height, width)`.
    pub fn forward(&self, x: &ArrayView2<f32>, h: usize, w: usize) -> (Array2<f32>, (usize, usize)) {
        let cin = self.in_channels();
        assert_eq!(x.dim(), (h * w, cin), "conv input shape");
        let k = self.kernel();
        let (ho, wo) = self.output_size(h, w);
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_channels(), cin * k * k))
            .expect("contiguous weight");
        let mut out = if k == 1 && self.stride == 1 && self.padding == 0 {
            x.dot(&wmat.t())
        } else {
            let cols = self.im2col(x, h, w, ho, wo);
            cols.dot(&wmat.t())
        };
        if let Some(b) = &self.bias {
            out += &b.value.view().into_dimensionality::<Ix1>().expect("1-D");
        }
        (out, (ho, wo))
    }

    fn im2col(&self, x: &ArrayView2<f32>, h: usize, w: usize, ho: usize, wo: usize) -> Array2<f32> {
        let cin = self.in_channels();
        let k = self.kernel();
        let pad = self.padding as isize;
        let mut cols = Array2::<f32>::zeros((ho * wo, cin * k * k));
        for oy in 0..ho {
            for ox in 0..wo {
                let mut row = cols.row_mut(oy * wo + ox);
                let row = row.as_slice_mut().expect("contiguous row");
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = x.row(iy as usize * w + ix as usize);
                        for (ci, &v) in src.iter().enumerate() {
                            row[ci * k * k + ky * k + kx] = v;
                        }
                    }
                }
            }
        }
        cols
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Transposed convolution with kernel 2 and stride 2 (exact 2x upsampling).
/// Weight layout `(in, out, 2, 2)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2x2 {
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose2x2 {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        // PyTorch computes fan_in from weight.size(1) * k * k for transposed convs
        let bound = 1.0 / ((output * 4) as f32).sqrt();
        Self {
            weight: Param::uniform(&[input, output, 2, 2], bound, rng),
            bias: Param::uniform(&[output], bound, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    fn wmat(&self) -> ArrayView2<'_, f32> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.in_channels(), self.out_channels() * 4))
            .expect("contiguous weight")
    }

    /// `(h * w, in)` to `(2h * 2w, out)`.
    pub fn forward(&self, x: &ArrayView2<f32>, h: usize, w: usize) -> Array2<f32> {
        let cout = self.out_channels();
        let y4 = x.dot(&self.wmat());
        let bias = self.bias.value.view().into_dimensionality::<Ix1>().expect("1-D");
        let mut out = Array2::<f32>::zeros((4 * h * w, cout));
        let w2 = 2 * w;
        for y in 0..h {
            for xx in 0..w {
                let src = y4.row(y * w + xx);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let mut dst = out.row_mut((2 * y + dy) * w2 + 2 * xx + dx);
                        for co in 0..cout {
                            dst[co] = src[co * 4 + dy * 2 + dx] + bias[co];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, x: &ArrayView2<f32>, h: usize, w: usize, dout: &Array2<f32>) -> Array2<f32> {
        let cout = self.out_channels();
        let mut dy4 = Array2::<f32>::zeros((h * w, cout * 4));
        let w2 = 2 * w;
        for y in 0..h {
            for xx in 0..w {
                let mut dst = dy4.row_mut(y * w + xx);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let src = dout.row((2 * y + dy) * w2 + 2 * xx + dx);
                        for co in 0..cout {
                            dst[co * 4 + dy * 2 + dx] = src[co];
                        }
                    }
                }
            }
        }
        let dx = dy4.dot(&self.wmat().t());
        let dw = x.t().dot(&dy4);
        {
            let g = self.weight.grad_mut();
            let shape = g.shape().to_vec();
            let mut g2 = g
                .view_mut()
                .into_shape_with_order((shape[0], shape[1] * 4))
                .expect("contiguous grad")
                .into_dimensionality::<Ix2>()
                .expect("2-D");
            g2 += &dw;
        }
        *self.bias.grad_mut() += &dout.sum_axis(Axis(0)).into_dyn();
        dx
    }
}

impl Module for ConvTranspose2x2 {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Direct nested-loop convolution.
    fn naive(conv: &Conv2d, x: &Array2<f32>, h: usize, w: usize) -> Array2<f32> {
        let (ho, wo) = conv.output_size(h, w);
        let k = conv.kernel();
        let wt = &conv.weight.value;
        let mut out = Array2::<f32>::zeros((ho * wo, conv.out_channels()));
        for co in 0..conv.out_channels() {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[[co]]);
                    for ci in 0..conv.in_channels() {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += wt[[co, ci, ky, kx]] * x[[iy as usize * w + ix as usize, ci]];
                                }
                            }
                        }
                    }
                    out[[oy * wo + ox, co]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p) in &[(3, 1, 1), (2, 2, 0), (4, 4, 0), (1, 1, 0)] {
            let conv = Conv2d::new(3, 5, k, s, p, true, &mut rng);
            let x = Array2::from_shape_fn((8 * 8, 3), |(i, c)| ((i * 7 + c * 3) % 11) as f32 / 11.0 - 0.5);
            let (y, _) = conv.forward(&x.view(), 8, 8);
            let r = naive(&conv, &x, 8, 8);
            assert!((&y - &r).iter().all(|d| d.abs() < 1e-5));
        }
    }

    #[test]
    fn conv_transpose_places_each_tap() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let ct = ConvTranspose2x2::new(2, 3, &mut rng);
        let x = Array2::from_shape_fn((2 * 3, 2), |(i, c)| (i as f32 + 1.0) * if c == 0 { 1.0 } else { -0.5 });
        let y = ct.forward(&x.view(), 2, 3);
        for yy in 0..2 {
            for xx in 0..3 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        for co in 0..3 {
                            let mut e = ct.bias.value[[co]];
                            for ci in 0..2 {
                                e += x[[yy * 3 + xx, ci]] * ct.weight.value[[ci, co, dy, dx]];
                            }
                            let got = y[[(2 * yy + dy) * 6 + 2 * xx + dx, co]];
                            assert!((got - e).abs() < 1e-6);
                        }
                    }
                }
            }
        }
    }
}
