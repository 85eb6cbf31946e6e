//! Parameter partition, analytic FLOPs and measured throughput.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::domain::BoundingBox;
use crate::error::{Error, Result};
use crate::model::image_encoder::{ImageEncoder, VitBlock};
use crate::model::{BackboneBundle, ComponentCounts, FreezePolicy, InputImage};
use crate::nn::{Attention, Conv2d, ConvTranspose2x2, Linear, Mlp};

/// Environment variable overriding the device descriptor attached to FPS
/// measurements.
pub const DEVICE_ENV: &str = "PAVESAM_DEVICE";

/// Published reference throughput (frames per second) measured on an
/// RTX 4080, for side-by-side display only.
#[allow(clippy::approx_constant)]
pub const REFERENCE_FPS: FpsReport = FpsReport {
    image_encoder: 6.4,
    prompt_encoder: 2336.0,
    mask_decoder: 511.0,
    end_to_end: 6.28,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterPartition {
    pub total: usize,
    pub trainable: usize,
    pub by_component: ComponentCounts,
}

pub fn count_parameters(bundle: &BackboneBundle, policy: FreezePolicy) -> ParameterPartition {
    let by_component = bundle.component_counts();
    ParameterPartition {
        total: by_component.total(),
        trainable: bundle.trainable_parameters(policy).count,
        by_component,
    }
}

/// One layer of a forward pass, described by the shapes that determine its
/// cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        out_height: usize,
        out_width: usize,
    },
    /// Applied to `rows` input vectors.
    Linear { rows: usize, in_features: usize, out_features: usize },
    /// Score and value products of one attention call over all heads;
    /// `dim` is the total projected width.
    Attention { queries: usize, keys: usize, dim: usize },
    /// A plain `(m, k) x (k, n)` product.
    Matmul { m: usize, k: usize, n: usize },
    /// Normalizations, activations and element-wise ops: not counted.
    Elementwise,
    /// Anything the counter has no rule for.
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub batch: usize,
    pub kind: LayerKind,
}

/// Multiply-accumulates count as two operations.
pub fn layer_flops(spec: &LayerSpec) -> Result<u64> {
    let b = spec.batch as u64;
    let f = match &spec.kind {
        LayerKind::Conv {
            kernel,
            in_channels,
            out_channels,
            out_height,
            out_width,
        } => 2 * (kernel * kernel * in_channels * out_channels * out_height * out_width) as u64,
        LayerKind::Linear {
            rows,
            in_features,
            out_features,
        } => 2 * (rows * in_features * out_features) as u64,
        LayerKind::Attention { queries, keys, dim } => 2 * 2 * (queries * keys * dim) as u64,
        LayerKind::Matmul { m, k, n } => 2 * (m * k * n) as u64,
        LayerKind::Elementwise => 0,
        LayerKind::Unknown(name) => return Err(Error::UnknownLayer(format!("{} ({name})", spec.name))),
    };
    Ok(f * b)
}

pub fn total_flops(layers: &[LayerSpec]) -> Result<u64> {
    layers.iter().map(layer_flops).sum()
}

struct Tracer {
    batch: usize,
    layers: Vec<LayerSpec>,
}

impl Tracer {
    fn push(&mut self, name: String, kind: LayerKind) {
        self.layers.push(LayerSpec {
            name,
            batch: self.batch,
            kind,
        });
    }

    fn linear(&mut self, name: String, l: &Linear, rows: usize) {
        self.push(
            name,
            LayerKind::Linear {
                rows,
                in_features: l.in_features(),
                out_features: l.out_features(),
            },
        );
    }

    fn conv(&mut self, name: String, c: &Conv2d, h: usize, w: usize) -> (usize, usize) {
        let (ho, wo) = c.output_size(h, w);
        self.push(
            name,
            LayerKind::Conv {
                kernel: c.kernel(),
                in_channels: c.in_channels(),
                out_channels: c.out_channels(),
                out_height: ho,
                out_width: wo,
            },
        );
        (ho, wo)
    }

    fn conv_transpose(&mut self, name: String, c: &ConvTranspose2x2, h: usize, w: usize) {
        // each input pixel feeds a 2x2 output patch: in * out * 4 MACs per input pixel
        self.push(
            name,
            LayerKind::Linear {
                rows: h * w,
                in_features: c.in_channels(),
                out_features: 4 * c.out_channels(),
            },
        );
    }

    fn attention(&mut self, name: &str, a: &Attention, queries: usize, keys: usize) {
        self.linear(format!("{name}.q_proj"), &a.q_proj, queries);
        self.linear(format!("{name}.k_proj"), &a.k_proj, keys);
        self.linear(format!("{name}.v_proj"), &a.v_proj, keys);
        self.push(
            format!("{name}.scores"),
            LayerKind::Attention {
                queries,
                keys,
                dim: a.internal_dim(),
            },
        );
        self.linear(format!("{name}.out_proj"), &a.out_proj, queries);
    }

    fn mlp(&mut self, name: &str, m: &Mlp, rows: usize) {
        for (i, l) in m.layers.iter().enumerate() {
            self.linear(format!("{name}.layers.{i}"), l, rows);
        }
    }

    fn vit_block(&mut self, name: &str, b: &VitBlock, g: usize) {
        let dim = b.qkv.in_features();
        let tokens = g * g;
        self.push(format!("{name}.norm1"), LayerKind::Elementwise);
        self.linear(format!("{name}.attn.qkv"), &b.qkv, tokens);
        let (windows, side) = if b.window == 0 {
            (1, g)
        } else {
            let n = g.div_ceil(b.window);
            (n * n, b.window)
        };
        let n = side * side;
        let head = dim / b.num_heads;
        self.push(
            format!("{name}.attn.scores"),
            LayerKind::Attention {
                queries: windows * n,
                keys: n,
                dim,
            },
        );
        // decomposed relative positions: one (n, side) product per axis and head
        for axis in ["rel_pos_h", "rel_pos_w"] {
            self.push(
                format!("{name}.attn.{axis}"),
                LayerKind::Matmul {
                    m: windows * b.num_heads * n,
                    k: head,
                    n: side,
                },
            );
        }
        self.linear(format!("{name}.attn.proj"), &b.proj, tokens);
        self.push(format!("{name}.norm2"), LayerKind::Elementwise);
        self.linear(format!("{name}.mlp.lin1"), &b.lin1, tokens);
        self.push(format!("{name}.mlp.act"), LayerKind::Elementwise);
        self.linear(format!("{name}.mlp.lin2"), &b.lin2, tokens);
    }
}

/// Layer-by-layer description of one forward pass (image encoder, one box
/// prompt, mask decoder) for `batch` images.
pub fn trace_layers(bundle: &BackboneBundle, batch: usize) -> Vec<LayerSpec> {
    let cfg = &bundle.config;
    let mut t = Tracer {
        batch,
        layers: Vec::new(),
    };
    let s = cfg.input_size;
    match &bundle.image_encoder {
        ImageEncoder::Conv(e) => {
            let (mut h, mut w) = (s, s);
            for (i, st) in e.stages.iter().enumerate() {
                (h, w) = t.conv(format!("image_encoder.stages.{i}"), st, h, w);
                t.push(format!("image_encoder.stages.{i}.act"), LayerKind::Elementwise);
            }
            t.push("image_encoder.norm".into(), LayerKind::Elementwise);
        }
        ImageEncoder::Vit(e) => {
            let (g, _) = t.conv("image_encoder.patch_embed.proj".into(), &e.patch_embed, s, s);
            for (i, b) in e.blocks.iter().enumerate() {
                t.vit_block(&format!("image_encoder.blocks.{i}"), b, g);
            }
            t.conv("image_encoder.neck.0".into(), &e.neck0, g, g);
            t.push("image_encoder.neck.1".into(), LayerKind::Elementwise);
            t.conv("image_encoder.neck.2".into(), &e.neck2, g, g);
            t.push("image_encoder.neck.3".into(), LayerKind::Elementwise);
        }
    }

    let c = cfg.embedding_channels;
    let g = cfg.embedding_grid();
    t.push(
        "prompt_encoder.pe_layer".into(),
        LayerKind::Matmul { m: 2, k: 2, n: c / 2 },
    );

    let d = &bundle.mask_decoder;
    let nt = d.num_mask_tokens() + 1 + 2;
    let ni = g * g;
    for (i, l) in d.layers.iter().enumerate() {
        let p = format!("mask_decoder.transformer.layers.{i}");
        t.attention(&format!("{p}.self_attn"), &l.self_attn, nt, nt);
        t.attention(&format!("{p}.cross_attn_token_to_image"), &l.cross_token_to_image, nt, ni);
        t.linear(format!("{p}.mlp.lin1"), &l.lin1, nt);
        t.linear(format!("{p}.mlp.lin2"), &l.lin2, nt);
        t.attention(&format!("{p}.cross_attn_image_to_token"), &l.cross_image_to_token, ni, nt);
    }
    t.attention("mask_decoder.transformer.final_attn_token_to_image", &d.final_attn, nt, ni);
    t.conv_transpose("mask_decoder.output_upscaling.0".into(), &d.upscale1, g, g);
    t.conv_transpose("mask_decoder.output_upscaling.3".into(), &d.upscale2, 2 * g, 2 * g);
    for (i, m) in d.hypernetworks.iter().enumerate() {
        t.mlp(&format!("mask_decoder.output_hypernetworks_mlps.{i}"), m, 1);
    }
    let up_c = d.upscale2.out_channels();
    t.push(
        "mask_decoder.masks".into(),
        LayerKind::Matmul {
            m: d.num_mask_tokens(),
            k: up_c,
            n: 16 * g * g,
        },
    );
    t.mlp("mask_decoder.iou_prediction_head", &d.iou_head, 1);
    t.layers
}

/// Forward-pass GFLOPs (two per multiply-accumulate).
pub fn estimate_flops(bundle: &BackboneBundle) -> Result<f64> {
    Ok(total_flops(&trace_layers(bundle, 1))? as f64 / 1e9)
}

/// Raw float32 bytes of every stored tensor, in units of 10^6 bytes.
pub fn model_size_mb(bundle: &BackboneBundle) -> f64 {
    use crate::nn::Module;
    let mut n = 0usize;
    bundle.visit("", &mut |_, p| n += p.numel());
    (n * 4) as f64 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimedComponent {
    ImageEncoder,
    PromptEncoder,
    MaskDecoder,
    EndToEnd,
}

impl TimedComponent {
    pub const ALL: [TimedComponent; 4] = [
        TimedComponent::ImageEncoder,
        TimedComponent::PromptEncoder,
        TimedComponent::MaskDecoder,
        TimedComponent::EndToEnd,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsMeasurement {
    pub component: TimedComponent,
    /// `1 / median iteration time`.
    pub fps: f64,
    pub median_ms: f64,
    pub iters: usize,
    pub device: String,
}

/// Description of the machine the measurement ran on.
pub fn device_descriptor() -> String {
    if let Ok(d) = std::env::var(DEVICE_ENV) {
        if !d.is_empty() {
            return d;
        }
    }
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("cpu: {model} ({threads} hardware threads, single-threaded kernels)")
}

/// Times `iters` runs of one component on fixed synthetic inputs after
/// `warmup` discarded runs.
pub fn measure_fps(bundle: &BackboneBundle, component: TimedComponent, warmup: usize, iters: usize) -> Result<FpsMeasurement> {
    if iters < 10 {
        return Err(Error::InvalidArgument("fps measurement needs at least 10 iterations".into()));
    }
    let s = bundle.config.input_size;
    let input = InputImage {
        data: ndarray::Array2::zeros((s * s, 3)),
        size: s,
    };
    let frame = image::RgbImage::from_pixel(s as u32, s as u32, image::Rgb([128, 128, 128]));
    let q = (s / 4) as i64;
    let bbox = BoundingBox::new(q, q, 3 * q, 3 * q)?;
    let emb = bundle.encode_image(&input)?;
    let prompt = bundle.encode_box(bbox)?;

    let run = || -> Result<()> {
        match component {
            TimedComponent::ImageEncoder => {
                std::hint::black_box(bundle.encode_image(&input)?);
            }
            TimedComponent::PromptEncoder => {
                std::hint::black_box(bundle.encode_box(bbox)?);
            }
            TimedComponent::MaskDecoder => {
                std::hint::black_box(bundle.decode_raw(&emb, &prompt)?);
            }
            TimedComponent::EndToEnd => {
                let (e, tr) = bundle.embed(&frame)?;
                std::hint::black_box(bundle.predict_box(&e, &tr, bbox)?);
            }
        }
        Ok(())
    };
    for _ in 0..warmup {
        run()?;
    }
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        run()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median = if iters % 2 == 1 {
        times[iters / 2]
    } else {
        (times[iters / 2 - 1] + times[iters / 2]) / 2.0
    };
    Ok(FpsMeasurement {
        component,
        fps: 1.0 / median.max(1e-12),
        median_ms: median * 1e3,
        iters,
        device: device_descriptor(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpsReport {
    pub image_encoder: f64,
    pub prompt_encoder: f64,
    pub mask_decoder: f64,
    pub end_to_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub params_total: usize,
    pub params_trainable: usize,
    pub params_by_component: ComponentCounts,
    pub gflops: f64,
    pub model_size_mb: f64,
    pub fps_by_component: Option<FpsReport>,
    pub device: Option<String>,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProfileOptions {
    pub measure_fps: bool,
    pub warmup: usize,
    pub iters: usize,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            measure_fps: true,
            warmup: 2,
            iters: 10,
        }
    }
}

pub fn profile(bundle: &BackboneBundle, options: ProfileOptions) -> Result<ComplexityReport> {
    let params = count_parameters(bundle, bundle.policy);
    let (fps, device) = if options.measure_fps {
        let mut v = [0.0; 4];
        for (slot, c) in v.iter_mut().zip(TimedComponent::ALL) {
            *slot = measure_fps(bundle, c, options.warmup, options.iters)?.fps;
        }
        (
            Some(FpsReport {
                image_encoder: v[0],
                prompt_encoder: v[1],
                mask_decoder: v[2],
                end_to_end: v[3],
            }),
            Some(device_descriptor()),
        )
    } else {
        (None, None)
    };
    Ok(ComplexityReport {
        params_total: params.total,
        params_trainable: params.trainable,
        params_by_component: params.by_component,
        gflops: estimate_flops(bundle)?,
        model_size_mb: model_size_mb(bundle),
        fps_by_component: fps,
        device,
        config_hash: bundle.config.hash(),
    })
}

impl ComplexityReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let m = |n: usize| n as f64 / 1e6;
        let _ = writeln!(out, "{:>8} {:>26} {:>22}", "GFLOPs", "Parameters(M)", "Model size(MB, f32)");
        let _ = writeln!(
            out,
            "{:>8.1} {:>26} {:>22.1}",
            self.gflops,
            format!("{:.3} ({:.3} trained)", m(self.params_total), m(self.params_trainable)),
            self.model_size_mb
        );
        let c = &self.params_by_component;
        let _ = writeln!(
            out,
            "components: image_encoder {} | prompt_encoder {} | mask_decoder {}",
            c.image_encoder, c.prompt_encoder, c.mask_decoder
        );
        if let Some(f) = &self.fps_by_component {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<22} {:>13} {:>14} {:>12} {:>11}",
                "FPS", "Image encoder", "Prompt encoder", "Mask decoder", "End-to-end"
            );
            let row = |out: &mut String, label: &str, f: &FpsReport| {
                let _ = writeln!(
                    out,
                    "{:<22} {:>13.2} {:>14.2} {:>12.2} {:>11.2}",
                    label, f.image_encoder, f.prompt_encoder, f.mask_decoder, f.end_to_end
                );
            };
            row(&mut out, "this run", f);
            row(&mut out, "reference (RTX 4080)", &REFERENCE_FPS);
            if let Some(d) = &self.device {
                let _ = writeln!(out, "device: {d}");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: LayerKind) -> LayerSpec {
        LayerSpec {
            name: "l".into(),
            batch: 1,
            kind,
        }
    }

    #[test]
    fn conv_rule() {
        let f = layer_flops(&spec(LayerKind::Conv {
            kernel: 3,
            in_channels: 3,
            out_channels: 16,
            out_height: 64,
            out_width: 64,
        }))
        .unwrap();
        assert_eq!(f, 3_538_944);
    }

    #[test]
    fn empty_and_unknown() {
        assert_eq!(total_flops(&[]).unwrap(), 0);
        let err = total_flops(&[spec(LayerKind::Unknown("Deformable".into()))]).unwrap_err();
        assert!(err.to_string().contains("Deformable"));
    }

    #[test]
    fn fps_needs_ten_iterations() {
        let b = BackboneBundle::random(crate::model::BackboneConfig::surrogate()).unwrap();
        assert!(measure_fps(&b, TimedComponent::PromptEncoder, 0, 9).is_err());
    }
}
