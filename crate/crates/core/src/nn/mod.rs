//! Minimal f32 neural-network layers with hand-written backward passes.
//!
//! Activations are row-major matrices: token sequences are `(tokens, channels)`
//! and spatial maps are `(height * width, channels)` with row index
//! `y * width + x`. Weight layouts follow the PyTorch conventions so that
//! pretrained state dicts load without transposition.

pub mod act;
pub mod adam;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod mlp;
pub mod norm;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

pub use adam::{Adam, AdamConfig};
pub use attention::Attention;
pub use conv::{Conv2d, ConvTranspose2x2};
pub use linear::Linear;
pub use mlp::Mlp;
pub use norm::LayerNorm;

/// A named tensor owned by a layer. Buffers are loaded and saved like
/// parameters but never count as parameters and never train.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: Option<ArrayD<f32>>,
    pub is_buffer: bool,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_value(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn from_value(value: ArrayD<f32>) -> Self {
        Self {
            value,
            grad: None,
            is_buffer: false,
        }
    }

    pub fn buffer(value: ArrayD<f32>) -> Self {
        Self {
            value,
            grad: None,
            is_buffer: true,
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f32, rng: &mut impl Rng) -> Self {
        Self::from_value(ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-bound..=bound)))
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// Gradient buffer, allocated on first use.
    pub fn grad_mut(&mut self) -> &mut ArrayD<f32> {
        let shape = self.value.raw_dim();
        self.grad.get_or_insert_with(|| ArrayD::zeros(shape))
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }
}

/// Named traversal over a layer's tensors, in a fixed order.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    /// Number of scalar parameters, buffers excluded.
    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if !p.is_buffer {
                n += p.numel();
            }
        });
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }
}

/// Joins a dotted parameter path.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Visits a list of sub-modules as `prefix.0`, `prefix.1`, ...
pub fn visit_list<M: Module>(items: &[M], prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
    for (i, m) in items.iter().enumerate() {
        m.visit(&join(prefix, &i.to_string()), f);
    }
}

pub fn visit_list_mut<M: Module>(items: &mut [M], prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
    for (i, m) in items.iter_mut().enumerate() {
        m.visit_mut(&join(prefix, &i.to_string()), f);
    }
}
