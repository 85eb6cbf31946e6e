//! Two-way transformer mask decoder with hypernetwork mask heads and an IoU
//! regression head. The forward pass can record a tape for an exact
//! backward pass into the decoder's own parameters.

use ndarray::{concatenate, s, Array2, ArrayD, ArrayView2, Axis, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::BackboneConfig;
use crate::nn::attention::AttentionCache;
use crate::nn::mlp::MlpCache;
use crate::nn::norm::LayerNormCache;
use crate::nn::{act, join, visit_list, visit_list_mut, Attention, ConvTranspose2x2, LayerNorm, Linear, Mlp, Module, Param};

#[derive(Debug, Clone)]
pub struct TwoWayBlock {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub cross_token_to_image: Attention,
    pub norm2: LayerNorm,
    pub lin1: Linear,
    pub lin2: Linear,
    pub norm3: LayerNorm,
    pub norm4: LayerNorm,
    pub cross_image_to_token: Attention,
    pub skip_first_layer_pe: bool,
}

struct BlockCache {
    self_attn: AttentionCache,
    n1: LayerNormCache,
    t2i: AttentionCache,
    n2: LayerNormCache,
    mlp_in: Array2<f32>,
    mlp_hidden: Array2<f32>,
    n3: LayerNormCache,
    i2t: AttentionCache,
    n4: LayerNormCache,
}

impl TwoWayBlock {
    fn new(c: usize, heads: usize, mlp_dim: usize, self_rate: usize, cross_rate: usize, skip: bool, rng: &mut impl Rng) -> Self {
        Self {
            self_attn: Attention::new(c, heads, self_rate, rng),
            norm1: LayerNorm::new(c, 1e-5),
            cross_token_to_image: Attention::new(c, heads, cross_rate, rng),
            norm2: LayerNorm::new(c, 1e-5),
            lin1: Linear::new(c, mlp_dim, true, rng),
            lin2: Linear::new(mlp_dim, c, true, rng),
            norm3: LayerNorm::new(c, 1e-5),
            norm4: LayerNorm::new(c, 1e-5),
            cross_image_to_token: Attention::new(c, heads, cross_rate, rng),
            skip_first_layer_pe: skip,
        }
    }

    fn forward(
        &self,
        queries: &Array2<f32>,
        keys: &Array2<f32>,
        query_pe: &Array2<f32>,
        key_pe: &Array2<f32>,
    ) -> (Array2<f32>, Array2<f32>, BlockCache) {
        let (s1, self_cache) = if self.skip_first_layer_pe {
            self.self_attn.forward_cached(queries, queries, queries)
        } else {
            let q = queries + query_pe;
            let (a, c) = self.self_attn.forward_cached(&q, &q, queries);
            (queries + &a, c)
        };
        let (q1, n1) = self.norm1.forward_cached(&s1);

        let qa = &q1 + query_pe;
        let ka = keys + key_pe;
        let (a2, t2i) = self.cross_token_to_image.forward_cached(&qa, &ka, keys);
        let (q2, n2) = self.norm2.forward_cached(&(&q1 + &a2));

        let mut hidden = self.lin1.forward(&q2.view());
        act::relu_inplace(&mut hidden);
        let m = self.lin2.forward(&hidden.view());
        let (q3, n3) = self.norm3.forward_cached(&(&q2 + &m));

        let qb = &q3 + query_pe;
        let (a4, i2t) = self.cross_image_to_token.forward_cached(&ka, &qb, &q3);
        let (k4, n4) = self.norm4.forward_cached(&(keys + &a4));
        (
            q3,
            k4,
            BlockCache {
                self_attn: self_cache,
                n1,
                t2i,
                n2,
                mlp_in: q2,
                mlp_hidden: hidden,
                n3,
                i2t,
                n4,
            },
        )
    }

    /// Returns `(d queries, d query_pe, d keys)`; key gradients are skipped
    /// when `need_keys` is false.
    fn backward(
        &mut self,
        c: &BlockCache,
        dq3: &Array2<f32>,
        dk4: &Array2<f32>,
        need_keys: bool,
    ) -> (Array2<f32>, Array2<f32>, Option<Array2<f32>>) {
        let ds4 = self.norm4.backward(&c.n4, dk4);
        let [d_ka4, d_qb, d_q3v] = self.cross_image_to_token.backward_partial(&c.i2t, &ds4, [need_keys, true, true]);
        let d_qb = d_qb.expect("requested");
        let mut dkeys = need_keys.then(|| ds4 + &d_ka4.expect("requested"));
        let mut dqp = d_qb.clone();
        let dq3_total = dq3 + &d_qb + &d_q3v.expect("requested");

        let ds3 = self.norm3.backward(&c.n3, &dq3_total);
        let dh = self.lin2.backward(&c.mlp_hidden.view(), &ds3);
        let dh = act::relu_backward(&c.mlp_hidden, &dh);
        let dq2 = &ds3 + &self.lin1.backward(&c.mlp_in.view(), &dh);

        let ds2 = self.norm2.backward(&c.n2, &dq2);
        let [d_qa, d_ka, d_kv] = self.cross_token_to_image.backward_partial(&c.t2i, &ds2, [true, need_keys, need_keys]);
        let d_qa = d_qa.expect("requested");
        dqp += &d_qa;
        if let Some(dk) = &mut dkeys {
            *dk += &d_ka.expect("requested");
            *dk += &d_kv.expect("requested");
        }
        let dq1 = ds2 + &d_qa;

        let ds1 = self.norm1.backward(&c.n1, &dq1);
        let g = self.self_attn.backward(&c.self_attn, &ds1);
        let dq_in = if self.skip_first_layer_pe {
            g.dq + &g.dk + &g.dv
        } else {
            dqp += &g.dq;
            dqp += &g.dk;
            ds1 + &g.dq + &g.dk + &g.dv
        };
        (dq_in, dqp, dkeys)
    }
}

impl Module for TwoWayBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.self_attn.visit(&join(prefix, "self_attn"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.cross_token_to_image.visit(&join(prefix, "cross_attn_token_to_image"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.lin1.visit(&join(prefix, "mlp.lin1"), f);
        self.lin2.visit(&join(prefix, "mlp.lin2"), f);
        self.norm3.visit(&join(prefix, "norm3"), f);
        self.norm4.visit(&join(prefix, "norm4"), f);
        self.cross_image_to_token.visit(&join(prefix, "cross_attn_image_to_token"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.self_attn.visit_mut(&join(prefix, "self_attn"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.cross_token_to_image.visit_mut(&join(prefix, "cross_attn_token_to_image"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.lin1.visit_mut(&join(prefix, "mlp.lin1"), f);
        self.lin2.visit_mut(&join(prefix, "mlp.lin2"), f);
        self.norm3.visit_mut(&join(prefix, "norm3"), f);
        self.norm4.visit_mut(&join(prefix, "norm4"), f);
        self.cross_image_to_token.visit_mut(&join(prefix, "cross_attn_image_to_token"), f);
    }
}

#[derive(Debug, Clone)]
pub struct MaskDecoder {
    pub iou_token: Param,
    pub mask_tokens: Param,
    pub layers: Vec<TwoWayBlock>,
    pub final_attn: Attention,
    pub norm_final: LayerNorm,
    pub upscale1: ConvTranspose2x2,
    pub upscale_norm: LayerNorm,
    pub upscale2: ConvTranspose2x2,
    pub hypernetworks: Vec<Mlp>,
    pub iou_head: Mlp,
    pub grid: usize,
}

/// Raw decoder outputs for all mask tokens.
#[derive(Debug, Clone)]
pub struct DecoderOutput {
    /// `(num_mask_tokens, (4 * grid)^2)` low-resolution logits, row-major.
    pub masks: Array2<f32>,
    /// Predicted IoU per mask token.
    pub iou: Vec<f32>,
}

/// Everything the backward pass needs from one forward pass.
pub struct DecoderTape {
    blocks: Vec<BlockCache>,
    final_attn: AttentionCache,
    norm_final: LayerNormCache,
    keys_out: Array2<f32>,
    u1_norm: LayerNormCache,
    l1: Array2<f32>,
    g1: Array2<f32>,
    u2: Array2<f32>,
    up: Array2<f32>,
    hyper: Vec<MlpCache>,
    hyper_in: Array2<f32>,
    n_queries: usize,
}

fn normal(shape: &[usize], rng: &mut impl Rng) -> Param {
    Param::from_value(ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.sample::<f32, _>(StandardNormal)))
}

impl MaskDecoder {
    pub fn new(config: &BackboneConfig, rng: &mut impl Rng) -> Self {
        let c = config.embedding_channels;
        let d = &config.decoder;
        let n_tokens = config.num_mask_tokens();
        let [c1, c2] = d.upscale_channels;
        Self {
            iou_token: normal(&[1, c], rng),
            mask_tokens: normal(&[n_tokens, c], rng),
            layers: (0..d.depth)
                .map(|i| {
                    TwoWayBlock::new(c, d.num_heads, d.mlp_dim, d.self_attn_downsample, d.cross_attn_downsample, i == 0, rng)
                })
                .collect(),
            final_attn: Attention::new(c, d.num_heads, d.cross_attn_downsample, rng),
            norm_final: LayerNorm::new(c, 1e-5),
            upscale1: ConvTranspose2x2::new(c, c1, rng),
            upscale_norm: LayerNorm::new(c1, 1e-6),
            upscale2: ConvTranspose2x2::new(c1, c2, rng),
            hypernetworks: (0..n_tokens).map(|_| Mlp::new(c, d.hyper_hidden, c2, 3, rng)).collect(),
            iou_head: Mlp::new(c, d.iou_hidden, n_tokens, d.iou_depth, rng),
            grid: config.embedding_grid(),
        }
    }

    pub fn num_mask_tokens(&self) -> usize {
        self.mask_tokens.shape()[0]
    }

    /// Runs the decoder.
    ///
    /// * `image` – `(grid^2, C)` image embedding
    /// * `dense` – `(C,)` dense prompt embedding added to every cell
    /// * `image_pe` – `(grid^2, C)` positional encoding of the grid
    /// * `sparse` – `(n, C)` prompt tokens
    pub fn forward(
        &self,
        image: &ArrayView2<f32>,
        dense: &ndarray::ArrayView1<f32>,
        image_pe: &Array2<f32>,
        sparse: &Array2<f32>,
    ) -> (DecoderOutput, DecoderTape) {
        let g = self.grid;
        let tokens = self.tokens(sparse);
        let src = image + dense;

        let mut queries = tokens.clone();
        let mut keys = src;
        let mut blocks = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (q, k, cache) = layer.forward(&queries, &keys, &tokens, image_pe);
            queries = q;
            keys = k;
            blocks.push(cache);
        }
        let qf = &queries + &tokens;
        let kf = &keys + image_pe;
        let (af, final_attn) = self.final_attn.forward_cached(&qf, &kf, &keys);
        let (hs, norm_final) = self.norm_final.forward_cached(&(&queries + &af));

        let u1 = self.upscale1.forward(&keys.view(), g, g);
        let (l1, u1_norm) = self.upscale_norm.forward_cached(&u1);
        let mut g1 = l1.clone();
        act::gelu_inplace(&mut g1);
        let u2 = self.upscale2.forward(&g1.view(), 2 * g, 2 * g);
        let mut up = u2.clone();
        act::gelu_inplace(&mut up);

        let n_tokens = self.num_mask_tokens();
        let mut hyper = Vec::with_capacity(n_tokens);
        let mut rows = Vec::with_capacity(n_tokens);
        for (i, mlp) in self.hypernetworks.iter().enumerate() {
            let (h, cache) = mlp.forward_cached(&hs.slice(s![1 + i..2 + i, ..]).to_owned());
            rows.push(h);
            hyper.push(cache);
        }
        let row_views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let hyper_in = concatenate(Axis(0), &row_views).expect("equal widths");
        let masks = hyper_in.dot(&up.t());
        let iou = self.iou_head.forward(&hs.slice(s![0..1, ..]).to_owned()).row(0).to_vec();

        (
            DecoderOutput { masks, iou },
            DecoderTape {
                blocks,
                final_attn,
                norm_final,
                keys_out: keys,
                u1_norm,
                l1,
                g1,
                u2,
                up,
                hyper,
                hyper_in,
                n_queries: tokens.nrows(),
            },
        )
    }

    fn tokens(&self, sparse: &Array2<f32>) -> Array2<f32> {
        let c = self.iou_token.shape()[1];
        let iou = self.iou_token.value.view().into_shape_with_order((1, c)).expect("row");
        let masks = self
            .mask_tokens
            .value
            .view()
            .into_shape_with_order((self.num_mask_tokens(), c))
            .expect("matrix");
        concatenate(Axis(0), &[iou, masks, sparse.view()]).expect("equal widths")
    }

    /// Accumulates decoder parameter gradients given `d loss / d masks`
    /// (`(num_mask_tokens, (4 grid)^2)`; rows of zeros are skipped).
    pub fn backward(&mut self, tape: DecoderTape, dmasks: &Array2<f32>) {
        let g = self.grid;
        let n_tokens = self.num_mask_tokens();
        let c = self.iou_token.shape()[1];
        let active: Vec<bool> = dmasks.axis_iter(Axis(0)).map(|r| r.iter().any(|&v| v != 0.0)).collect();

        let d_up = dmasks.t().dot(&tape.hyper_in);
        let d_hyper_in = dmasks.dot(&tape.up);
        let mut dhs = Array2::<f32>::zeros((tape.n_queries, c));
        for (i, cache) in tape.hyper.iter().enumerate() {
            if !active[i] {
                continue;
            }
            let d = self.hypernetworks[i].backward(cache, &d_hyper_in.slice(s![i..i + 1, ..]).to_owned());
            dhs.row_mut(1 + i).assign(&d.row(0));
        }

        let du2 = act::gelu_backward(&tape.u2, &d_up);
        let dg1 = self.upscale2.backward(&tape.g1.view(), 2 * g, 2 * g, &du2);
        let dl1 = act::gelu_backward(&tape.l1, &dg1);
        let du1 = self.upscale_norm.backward(&tape.u1_norm, &dl1);
        let mut dkeys = self.upscale1.backward(&tape.keys_out.view(), g, g, &du1);

        let ds = self.norm_final.backward(&tape.norm_final, &dhs);
        let gf = self.final_attn.backward(&tape.final_attn, &ds);
        let mut dqueries = ds + &gf.dq;
        let mut dqp = gf.dq;
        dkeys += &gf.dk;
        dkeys += &gf.dv;

        for (i, cache) in tape.blocks.iter().enumerate().rev() {
            let (dq, dp, dk) = self.layers[i].backward(cache, &dqueries, &dkeys, i > 0);
            dqueries = dq;
            dqp += &dp;
            if let Some(dk) = dk {
                dkeys = dk;
            }
        }
        let dtokens = dqueries + &dqp;
        *self.iou_token.grad_mut() += &dtokens.slice(s![0..1, ..]).into_dyn();
        *self.mask_tokens.grad_mut() += &dtokens.slice(s![1..1 + n_tokens, ..]).into_dyn();
    }
}

impl Module for MaskDecoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        visit_list(&self.layers, &join(prefix, "transformer.layers"), f);
        self.final_attn.visit(&join(prefix, "transformer.final_attn_token_to_image"), f);
        self.norm_final.visit(&join(prefix, "transformer.norm_final_attn"), f);
        f(&join(prefix, "iou_token.weight"), &self.iou_token);
        f(&join(prefix, "mask_tokens.weight"), &self.mask_tokens);
        self.upscale1.visit(&join(prefix, "output_upscaling.0"), f);
        self.upscale_norm.visit(&join(prefix, "output_upscaling.1"), f);
        self.upscale2.visit(&join(prefix, "output_upscaling.3"), f);
        visit_list(&self.hypernetworks, &join(prefix, "output_hypernetworks_mlps"), f);
        self.iou_head.visit(&join(prefix, "iou_prediction_head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_list_mut(&mut self.layers, &join(prefix, "transformer.layers"), f);
        self.final_attn.visit_mut(&join(prefix, "transformer.final_attn_token_to_image"), f);
        self.norm_final.visit_mut(&join(prefix, "transformer.norm_final_attn"), f);
        f(&join(prefix, "iou_token.weight"), &mut self.iou_token);
        f(&join(prefix, "mask_tokens.weight"), &mut self.mask_tokens);
        self.upscale1.visit_mut(&join(prefix, "output_upscaling.0"), f);
        self.upscale_norm.visit_mut(&join(prefix, "output_upscaling.1"), f);
        self.upscale2.visit_mut(&join(prefix, "output_upscaling.3"), f);
        visit_list_mut(&mut self.hypernetworks, &join(prefix, "output_hypernetworks_mlps"), f);
        self.iou_head.visit_mut(&join(prefix, "iou_prediction_head"), f);
    }
}
