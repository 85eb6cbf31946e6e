use ndarray::Array2;
use rand::Rng;

use super::{act, join, Linear, Module, Param};

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f32>>,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize, num_layers: usize, rng: &mut impl Rng) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, num_layers - 1));
        dims.push(output);
        Self {
            layers: dims.windows(2).map(|w| Linear::new(w[0], w[1], true, rng)).collect(),
        }
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h.view());
            if i + 1 < self.layers.len() {
                act::relu_inplace(&mut h);
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<f32>) -> (Array2<f32>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let out = l.forward(&h.view());
            inputs.push(h);
            h = out;
            if i + 1 < self.layers.len() {
                act::relu_inplace(&mut h);
            }
        }
        (h, MlpCache { inputs })
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: &Array2<f32>) -> Array2<f32> {
        let mut g = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                // inputs[i + 1] is the ReLU output of layer i
                g = act::relu_backward(&cache.inputs[i + 1], &g);
            }
            g = self.layers[i].backward(&cache.inputs[i].view(), &g);
        }
        g
    }
}

impl Module for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(&join(prefix, "layers"), &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(&join(prefix, "layers"), &i.to_string()), f);
        }
    }
}
