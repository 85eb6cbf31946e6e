//! Box-prompt encoder: random Fourier positional encoding of the two box
//! corners plus a learned embedding per corner type.

use std::f32::consts::PI;

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::BackboneConfig;
use crate::nn::{join, Conv2d, LayerNorm, Module, Param};

#[derive(Debug, Clone)]
pub struct PromptEncoder {
    /// `(2, channels / 2)` projection of normalized coordinates.
    pub gaussian: Param,
    /// Point-type embeddings: negative point, positive point, box top-left,
    /// box bottom-right.
    pub point_embeddings: Vec<Param>,
    pub not_a_point: Param,
    pub no_mask: Param,
    pub mask_downscaling: Option<MaskDownscaling>,
    pub input_size: usize,
    pub grid: usize,
}

/// Dense mask-prompt branch of pretrained checkpoints. Loaded and counted,
/// never evaluated (only box prompts are supported).
#[derive(Debug, Clone)]
pub struct MaskDownscaling {
    pub conv0: Conv2d,
    pub norm1: LayerNorm,
    pub conv3: Conv2d,
    pub norm4: LayerNorm,
    pub conv6: Conv2d,
}

fn normal(shape: &[usize], rng: &mut impl Rng) -> Param {
    Param::from_value(ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.sample::<f32, _>(StandardNormal)))
}

impl PromptEncoder {
    pub fn new(config: &BackboneConfig, rng: &mut impl Rng) -> Self {
        let c = config.embedding_channels;
        let mut gaussian = normal(&[2, c / 2], rng);
        gaussian.is_buffer = true;
        let point_embeddings = (0..4).map(|_| normal(&[1, c], rng)).collect();
        let not_a_point = normal(&[1, c], rng);
        let no_mask = normal(&[1, c], rng);
        let mask_downscaling = config.prompt.mask_downscaling.then(|| {
            let m = config.prompt.mask_in_chans;
            MaskDownscaling {
                conv0: Conv2d::new(1, m / 4, 2, 2, 0, true, rng),
                norm1: LayerNorm::new(m / 4, 1e-6),
                conv3: Conv2d::new(m / 4, m, 2, 2, 0, true, rng),
                norm4: LayerNorm::new(m, 1e-6),
                conv6: Conv2d::new(m, c, 1, 1, 0, true, rng),
            }
        });
        Self {
            gaussian,
            point_embeddings,
            not_a_point,
            no_mask,
            mask_downscaling,
            input_size: config.input_size,
            grid: config.embedding_grid(),
        }
    }

    pub fn channels(&self) -> usize {
        self.no_mask.shape()[1]
    }

    /// Encodes points already normalized to `[0, 1]` as `[sin, cos]` features.
    fn pe_encoding(&self, coords: &Array2<f32>) -> Array2<f32> {
        let g = self
            .gaussian
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("2-D gaussian");
        let mut proj = coords.mapv(|v| 2.0 * v - 1.0).dot(&g);
        proj.mapv_inplace(|v| 2.0 * PI * v);
        let sin = proj.mapv(f32::sin);
        let cos = proj.mapv(f32::cos);
        ndarray::concatenate(Axis(1), &[sin.view(), cos.view()]).expect("matching rows")
    }

    /// Two corner tokens for a box given as `[x0, y0, x1, y1]` in model space.
    pub fn embed_box(&self, corners: [f32; 4]) -> Array2<f32> {
        let s = self.input_size as f32;
        let coords = Array2::from_shape_vec(
            (2, 2),
            vec![
                (corners[0] + 0.5) / s,
                (corners[1] + 0.5) / s,
                (corners[2] + 0.5) / s,
                (corners[3] + 0.5) / s,
            ],
        )
        .expect("2x2");
        let mut tokens = self.pe_encoding(&coords);
        let tl = self.point_embeddings[2].value.view().into_shape_with_order(self.channels()).expect("row");
        let br = self.point_embeddings[3].value.view().into_shape_with_order(self.channels()).expect("row");
        {
            let mut r0 = tokens.row_mut(0);
            r0 += &tl;
        }
        {
            let mut r1 = tokens.row_mut(1);
            r1 += &br;
        }
        tokens
    }

    /// Positional encoding of every embedding-grid cell center, `(grid^2, C)`.
    pub fn dense_pe(&self) -> Array2<f32> {
        let g = self.grid;
        let coords = Array2::from_shape_fn((g * g, 2), |(i, k)| {
            let (y, x) = (i / g, i % g);
            if k == 0 {
                (x as f32 + 0.5) / g as f32
            } else {
                (y as f32 + 0.5) / g as f32
            }
        });
        self.pe_encoding(&coords)
    }

    /// The "no mask" dense embedding as a `(C,)` row.
    pub fn no_mask_row(&self) -> ndarray::ArrayView1<'_, f32> {
        self.no_mask.value.view().into_shape_with_order(self.channels()).expect("row")
    }
}

impl Module for PromptEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "pe_layer.positional_encoding_gaussian_matrix"), &self.gaussian);
        for (i, p) in self.point_embeddings.iter().enumerate() {
            f(&join(prefix, &format!("point_embeddings.{i}.weight")), p);
        }
        f(&join(prefix, "not_a_point_embed.weight"), &self.not_a_point);
        if let Some(m) = &self.mask_downscaling {
            m.conv0.visit(&join(prefix, "mask_downscaling.0"), f);
            m.norm1.visit(&join(prefix, "mask_downscaling.1"), f);
            m.conv3.visit(&join(prefix, "mask_downscaling.3"), f);
            m.norm4.visit(&join(prefix, "mask_downscaling.4"), f);
            m.conv6.visit(&join(prefix, "mask_downscaling.6"), f);
        }
        f(&join(prefix, "no_mask_embed.weight"), &self.no_mask);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "pe_layer.positional_encoding_gaussian_matrix"), &mut self.gaussian);
        for (i, p) in self.point_embeddings.iter_mut().enumerate() {
            f(&join(prefix, &format!("point_embeddings.{i}.weight")), p);
        }
        f(&join(prefix, "not_a_point_embed.weight"), &mut self.not_a_point);
        if let Some(m) = &mut self.mask_downscaling {
            m.conv0.visit_mut(&join(prefix, "mask_downscaling.0"), f);
            m.norm1.visit_mut(&join(prefix, "mask_downscaling.1"), f);
            m.conv3.visit_mut(&join(prefix, "mask_downscaling.3"), f);
            m.norm4.visit_mut(&join(prefix, "mask_downscaling.4"), f);
            m.conv6.visit_mut(&join(prefix, "mask_downscaling.6"), f);
        }
        f(&join(prefix, "no_mask_embed.weight"), &mut self.no_mask);
    }
}
