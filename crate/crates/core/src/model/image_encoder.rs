//! Image encoders mapping a normalized `(S * S, 3)` input to a
//! `(G * G, C)` embedding with `G = S / 16`.

use ndarray::{s, Array2, ArrayD, ArrayView2};
use rand::Rng;

use super::config::{BackboneConfig, EncoderArch};
use crate::nn::attention::softmax_rows;
use crate::nn::{act, join, Conv2d, LayerNorm, Linear, Module, Param};

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum ImageEncoder {
    Conv(ConvEncoder),
    Vit(VitEncoder),
}

impl ImageEncoder {
    pub fn new(config: &BackboneConfig, rng: &mut impl Rng) -> Self {
        match &config.encoder {
            EncoderArch::Conv { channels, kernels } => {
                let mut stages = Vec::new();
                let mut cin = 3;
                for (&cout, &k) in channels.iter().zip(kernels) {
                    stages.push(Conv2d::new(cin, cout, k, k, 0, true, rng));
                    cin = cout;
                }
                ImageEncoder::Conv(ConvEncoder {
                    stages,
                    norm: LayerNorm::new(cin, 1e-6),
                })
            }
            EncoderArch::Vit {
                embed_dim,
                depth,
                num_heads,
                mlp_ratio,
                patch_size,
                window_size,
                global_attn_indexes,
            } => {
                let grid = config.embedding_grid();
                let c = config.embedding_channels;
                let head_dim = embed_dim / num_heads;
                let blocks = (0..*depth)
                    .map(|i| {
                        let window = if global_attn_indexes.contains(&i) { 0 } else { *window_size };
                        let size = if window == 0 { grid } else { window };
                        VitBlock {
                            norm1: LayerNorm::new(*embed_dim, 1e-6),
                            qkv: Linear::new(*embed_dim, 3 * embed_dim, true, rng),
                            proj: Linear::new(*embed_dim, *embed_dim, true, rng),
                            rel_pos_h: Param::zeros(&[2 * size - 1, head_dim]),
                            rel_pos_w: Param::zeros(&[2 * size - 1, head_dim]),
                            norm2: LayerNorm::new(*embed_dim, 1e-6),
                            lin1: Linear::new(*embed_dim, embed_dim * mlp_ratio, true, rng),
                            lin2: Linear::new(embed_dim * mlp_ratio, *embed_dim, true, rng),
                            num_heads: *num_heads,
                            window,
                        }
                    })
                    .collect();
                ImageEncoder::Vit(VitEncoder {
                    patch_embed: Conv2d::new(3, *embed_dim, *patch_size, *patch_size, 0, true, rng),
                    pos_embed: Param::zeros(&[1, grid, grid, *embed_dim]),
                    blocks,
                    neck0: Conv2d::new(*embed_dim, c, 1, 1, 0, false, rng),
                    neck1: LayerNorm::new(c, 1e-6),
                    neck2: Conv2d::new(c, c, 3, 1, 1, false, rng),
                    neck3: LayerNorm::new(c, 1e-6),
                    grid,
                })
            }
        }
    }

    /// `x` is `(size * size, 3)`, normalized and padded.
    pub fn forward(&self, x: &ArrayView2<f32>, size: usize) -> Array2<f32> {
        match self {
            ImageEncoder::Conv(e) => e.forward(x, size),
            ImageEncoder::Vit(e) => e.forward(x, size),
        }
    }
}

impl Module for ImageEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            ImageEncoder::Conv(e) => {
                for (i, st) in e.stages.iter().enumerate() {
                    st.visit(&join(prefix, &format!("stages.{i}")), f);
                }
                e.norm.visit(&join(prefix, "norm"), f);
            }
            ImageEncoder::Vit(e) => {
                e.patch_embed.visit(&join(prefix, "patch_embed.proj"), f);
                f(&join(prefix, "pos_embed"), &e.pos_embed);
                for (i, b) in e.blocks.iter().enumerate() {
                    b.visit(&join(prefix, &format!("blocks.{i}")), f);
                }
                e.neck0.visit(&join(prefix, "neck.0"), f);
                e.neck1.visit(&join(prefix, "neck.1"), f);
                e.neck2.visit(&join(prefix, "neck.2"), f);
                e.neck3.visit(&join(prefix, "neck.3"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            ImageEncoder::Conv(e) => {
                for (i, st) in e.stages.iter_mut().enumerate() {
                    st.visit_mut(&join(prefix, &format!("stages.{i}")), f);
                }
                e.norm.visit_mut(&join(prefix, "norm"), f);
            }
            ImageEncoder::Vit(e) => {
                e.patch_embed.visit_mut(&join(prefix, "patch_embed.proj"), f);
                f(&join(prefix, "pos_embed"), &mut e.pos_embed);
                for (i, b) in e.blocks.iter_mut().enumerate() {
                    b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
                }
                e.neck0.visit_mut(&join(prefix, "neck.0"), f);
                e.neck1.visit_mut(&join(prefix, "neck.1"), f);
                e.neck2.visit_mut(&join(prefix, "neck.2"), f);
                e.neck3.visit_mut(&join(prefix, "neck.3"), f);
            }
        }
    }
}

/// Strided convolution stages with GELU, then a channel layer norm.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    pub stages: Vec<Conv2d>,
    pub norm: LayerNorm,
}

impl ConvEncoder {
    fn forward(&self, x: &ArrayView2<f32>, size: usize) -> Array2<f32> {
        let (mut h, mut w) = (size, size);
        let mut cur = x.to_owned();
        for st in &self.stages {
            let (mut y, (ho, wo)) = st.forward(&cur.view(), h, w);
            act::gelu_inplace(&mut y);
            cur = y;
            h = ho;
            w = wo;
        }
        self.norm.forward(&cur)
    }
}

#[derive(Debug, Clone)]
pub struct VitEncoder {
    pub patch_embed: Conv2d,
    pub pos_embed: Param,
    pub blocks: Vec<VitBlock>,
    pub neck0: Conv2d,
    pub neck1: LayerNorm,
    pub neck2: Conv2d,
    pub neck3: LayerNorm,
    pub grid: usize,
}

impl VitEncoder {
    fn forward(&self, x: &ArrayView2<f32>, size: usize) -> Array2<f32> {
        let (mut t, (g, gw)) = self.patch_embed.forward(x, size, size);
        debug_assert_eq!(g, gw);
        let dim = t.ncols();
        let pos = self
            .pos_embed
            .value
            .view()
            .into_shape_with_order((g * g, dim))
            .expect("pos embed matches grid");
        t += &pos;
        for b in &self.blocks {
            t = b.forward(t, g);
        }
        let (n0, _) = self.neck0.forward(&t.view(), g, g);
        let n1 = self.neck1.forward(&n0);
        let (n2, _) = self.neck2.forward(&n1.view(), g, g);
        self.neck3.forward(&n2)
    }
}

#[derive(Debug, Clone)]
pub struct VitBlock {
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub rel_pos_h: Param,
    pub rel_pos_w: Param,
    pub norm2: LayerNorm,
    pub lin1: Linear,
    pub lin2: Linear,
    pub num_heads: usize,
    /// 0 for global attention.
    pub window: usize,
}

impl VitBlock {
    fn forward(&self, x: Array2<f32>, g: usize) -> Array2<f32> {
        let dim = x.ncols();
        let normed = self.norm1.forward(&x);
        let attended = if self.window == 0 {
            self.attention(&normed, g, g)
        } else {
            let ws = self.window;
            let gp = g.div_ceil(ws) * ws;
            let mut out = Array2::<f32>::zeros((g * g, dim));
            let mut win = Array2::<f32>::zeros((ws * ws, dim));
            for wy in 0..gp / ws {
                for wx in 0..gp / ws {
                    win.fill(0.0);
                    for iy in 0..ws {
                        for ix in 0..ws {
                            let (y, xx) = (wy * ws + iy, wx * ws + ix);
                            if y < g && xx < g {
                                win.row_mut(iy * ws + ix).assign(&normed.row(y * g + xx));
                            }
                        }
                    }
                    let res = self.attention(&win, ws, ws);
                    for iy in 0..ws {
                        for ix in 0..ws {
                            let (y, xx) = (wy * ws + iy, wx * ws + ix);
                            if y < g && xx < g {
                                out.row_mut(y * g + xx).assign(&res.row(iy * ws + ix));
                            }
                        }
                    }
                }
            }
            out
        };
        let x = x + &attended;
        let mut hidden = self.lin1.forward(&self.norm2.forward(&x).view());
        act::gelu_inplace(&mut hidden);
        let mlp = self.lin2.forward(&hidden.view());
        x + &mlp
    }

    /// Multi-head self-attention with decomposed relative positions over an
    /// `h * w` token grid.
    fn attention(&self, x: &Array2<f32>, h: usize, w: usize) -> Array2<f32> {
        let dim = x.ncols();
        let heads = self.num_heads;
        let hd = dim / heads;
        let scale = 1.0 / (hd as f32).sqrt();
        let qkv = self.qkv.forward(&x.view());
        let rel_h = rel_pos_table(&self.rel_pos_h.value, h);
        let rel_w = rel_pos_table(&self.rel_pos_w.value, w);
        let n = h * w;
        let mut mixed = Array2::<f32>::zeros((n, dim));
        for head in 0..heads {
            let q = qkv.slice(s![.., head * hd..(head + 1) * hd]);
            let k = qkv.slice(s![.., dim + head * hd..dim + (head + 1) * hd]);
            let v = qkv.slice(s![.., 2 * dim + head * hd..2 * dim + (head + 1) * hd]);
            let mut attn = q.dot(&k.t());
            attn.mapv_inplace(|a| a * scale);
            // rel_h_term[(qy, qx), ky] = q[(qy, qx)] . R_h[qy, ky]
            for qy in 0..h {
                for qx in 0..w {
                    let qi = qy * w + qx;
                    let qrow = q.row(qi);
                    let th: Vec<f32> = (0..h).map(|ky| qrow.dot(&rel_h.slice(s![qy, ky, ..]))).collect();
                    let tw: Vec<f32> = (0..w).map(|kx| qrow.dot(&rel_w.slice(s![qx, kx, ..]))).collect();
                    let mut arow = attn.row_mut(qi);
                    for ky in 0..h {
                        for kx in 0..w {
                            arow[ky * w + kx] += th[ky] + tw[kx];
                        }
                    }
                }
            }
            softmax_rows(&mut attn);
            mixed.slice_mut(s![.., head * hd..(head + 1) * hd]).assign(&attn.dot(&v));
        }
        self.proj.forward(&mixed.view())
    }
}

/// `R[q, k, :] = rel_pos[q - k + size - 1, :]` for equal query/key sizes.
fn rel_pos_table(rel_pos: &ArrayD<f32>, size: usize) -> ndarray::Array3<f32> {
    let table = rel_pos.view().into_dimensionality::<ndarray::Ix2>().expect("2-D rel pos");
    assert_eq!(table.nrows(), 2 * size - 1, "relative position table does not match window size");
    let c = table.ncols();
    let mut out = ndarray::Array3::<f32>::zeros((size, size, c));
    for q in 0..size {
        for k in 0..size {
            out.slice_mut(s![q, k, ..]).assign(&table.row(q + size - 1 - k));
        }
    }
    out
}

impl Module for VitBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.qkv.visit(&join(prefix, "attn.qkv"), f);
        self.proj.visit(&join(prefix, "attn.proj"), f);
        f(&join(prefix, "attn.rel_pos_h"), &self.rel_pos_h);
        f(&join(prefix, "attn.rel_pos_w"), &self.rel_pos_w);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.lin1.visit(&join(prefix, "mlp.lin1"), f);
        self.lin2.visit(&join(prefix, "mlp.lin2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.qkv.visit_mut(&join(prefix, "attn.qkv"), f);
        self.proj.visit_mut(&join(prefix, "attn.proj"), f);
        f(&join(prefix, "attn.rel_pos_h"), &mut self.rel_pos_h);
        f(&join(prefix, "attn.rel_pos_w"), &mut self.rel_pos_w);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.lin1.visit_mut(&join(prefix, "mlp.lin1"), f);
        self.lin2.visit_mut(&join(prefix, "mlp.lin2"), f);
    }
}
