use ndarray::{Array2, ArrayView2, Axis, Ix1, Ix2};
use rand::Rng;

use super::{join, Module, Param};

/// `y = x W^T + b` with `W` stored as `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    /// PyTorch default initialization: uniform in `±1/sqrt(in)`.
    pub fn new(input: usize, output: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f32).sqrt();
        Self {
            weight: Param::uniform(&[output, input], bound, rng),
            bias: bias.then(|| Param::uniform(&[output], bound, rng)),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn weight_view(&self) -> ArrayView2<'_, f32> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("linear weight is 2-D")
    }

    pub fn forward(&self, x: &ArrayView2<f32>) -> Array2<f32> {
        let mut y = x.dot(&self.weight_view().t());
        if let Some(b) = &self.bias {
            let b = b.value.view().into_dimensionality::<Ix1>().expect("bias is 1-D");
            y += &b;
        }
        y
    }

    /// Accumulates parameter gradients for input `x` and returns `dL/dx`.
    pub fn backward(&mut self, x: &ArrayView2<f32>, dy: &Array2<f32>) -> Array2<f32> {
        let dx = dy.dot(&self.weight_view());
        self.accumulate(x, dy);
        dx
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn accumulate(&mut self, x: &ArrayView2<f32>, dy: &Array2<f32>) {
        let dw = dy.t().dot(x);
        {
            let g = self.weight.grad_mut();
            let mut g2 = g.view_mut().into_dimensionality::<Ix2>().expect("2-D");
            g2 += &dw;
        }
        if let Some(b) = &mut self.bias {
            let db = dy.sum_axis(Axis(0));
            let g = b.grad_mut();
            let mut g1 = g.view_mut().into_dimensionality::<Ix1>().expect("1-D");
            g1 += &db;
        }
    }
}

impl Module for Linear {
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
