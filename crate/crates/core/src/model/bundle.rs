//! The promptable segmenter behind one interface: frozen image encoder,
//! frozen box-prompt encoder and trainable mask decoder.

use image::RgbImage;
use ndarray::{Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BackboneConfig, FreezePolicy};
use super::image_encoder::ImageEncoder;
use super::mask_decoder::{DecoderOutput, DecoderTape, MaskDecoder};
use super::prompt_encoder::PromptEncoder;
use super::upsample::upsample;
use crate::dataio::resize::{map_box, probabilities_to_original, resize_and_pad, Direction, ResizeTransform};
use crate::domain::{BoundingBox, ProbabilityMask};
use crate::error::{Error, Result};
use crate::nn::{act, join, Module, Param};

/// Normalized, padded model input as `(size * size, 3)`.
#[derive(Debug, Clone)]
pub struct InputImage {
    pub data: Array2<f32>,
    pub size: usize,
}

/// Encoder output stored as `(grid * grid, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding {
    pub data: Array2<f32>,
    pub grid: usize,
}

impl ImageEmbedding {
    /// `(channels, grid, grid)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.data.ncols(), self.grid, self.grid)
    }

    pub fn to_chw(&self) -> Array3<f32> {
        let (c, g, _) = self.shape();
        Array3::from_shape_fn((c, g, g), |(k, y, x)| self.data[[y * g + x, k]])
    }

    pub fn size_bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }
}

/// One token per box corner, `(2, channels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    pub tokens: Array2<f32>,
}

#[derive(Debug, Clone)]
pub struct MaskPrediction {
    /// Multi-mask logits `(num_mask_outputs, mask_grid, mask_grid)`.
    pub logits: Array3<f32>,
    /// Predicted IoU of each multi-mask output, clamped to `[0, 1]`.
    pub iou_scores: Vec<f32>,
    /// Logits of the single-mask output `(mask_grid, mask_grid)`; this is
    /// the output that is supervised and evaluated.
    pub single_logits: Array2<f32>,
    pub single_iou: f32,
    /// Sigmoid of the single-mask logits upsampled to the input size.
    pub upsampled: ProbabilityMask,
}

/// Parameter counts per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCounts {
    pub image_encoder: usize,
    pub prompt_encoder: usize,
    pub mask_decoder: usize,
}

impl ComponentCounts {
    pub fn total(&self) -> usize {
        self.image_encoder + self.prompt_encoder + self.mask_decoder
    }
}

/// The parameters a freeze policy leaves trainable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterSet {
    pub names: Vec<String>,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    ImageEncoder,
    PromptEncoder,
    MaskDecoder,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::ImageEncoder, Component::PromptEncoder, Component::MaskDecoder];

    pub fn prefix(self) -> &'static str {
        match self {
            Component::ImageEncoder => "image_encoder",
            Component::PromptEncoder => "prompt_encoder",
            Component::MaskDecoder => "mask_decoder",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackboneBundle {
    pub config: BackboneConfig,
    pub image_encoder: ImageEncoder,
    pub prompt_encoder: PromptEncoder,
    pub mask_decoder: MaskDecoder,
    pub policy: FreezePolicy,
    /// Where the weights came from: `surrogate` or a file path.
    pub source: String,
    dense_pe: Array2<f32>,
}

impl BackboneBundle {
    /// Randomly initialized bundle, seeded by `config.init_seed`.
    pub fn random(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let image_encoder = ImageEncoder::new(&config, &mut rng);
        let prompt_encoder = PromptEncoder::new(&config, &mut rng);
        let mask_decoder = MaskDecoder::new(&config, &mut rng);
        let dense_pe = prompt_encoder.dense_pe();
        Ok(Self {
            config,
            image_encoder,
            prompt_encoder,
            mask_decoder,
            policy: FreezePolicy::default(),
            source: "surrogate".into(),
            dense_pe,
        })
    }

    /// Recomputes cached values derived from prompt-encoder weights.
    pub(crate) fn refresh(&mut self) {
        self.dense_pe = self.prompt_encoder.dense_pe();
    }

    /// Resizes, pads and normalizes an RGB image.
    pub fn preprocess(&self, img: &RgbImage) -> (InputImage, ResizeTransform) {
        let size = self.config.input_size;
        let (resized, t) = resize_and_pad(img, size);
        let (ch, cw) = (t.content_height(), t.content_width());
        let (mean, std) = (self.config.pixel_mean, self.config.pixel_std);
        let mut data = Array2::<f32>::zeros((size * size, 3));
        for y in 0..ch {
            for x in 0..cw {
                let p = resized.get_pixel(x as u32, y as u32).0;
                let mut row = data.row_mut(y * size + x);
                for k in 0..3 {
                    row[k] = (p[k] as f32 - mean[k]) / std[k];
                }
            }
        }
        (InputImage { data, size }, t)
    }

    pub fn encode_image(&self, input: &InputImage) -> Result<ImageEmbedding> {
        let s = self.config.input_size;
        if input.size != s || input.data.dim() != (s * s, 3) {
            return Err(Error::ShapeMismatch(format!(
                "image input must be {s}x{s}x3, got {} rows of {} channels",
                input.data.nrows(),
                input.data.ncols()
            )));
        }
        let data = self.image_encoder.forward(&input.data.view(), s);
        Ok(ImageEmbedding {
            data,
            grid: self.config.embedding_grid(),
        })
    }

    /// Preprocesses and encodes an RGB image.
    pub fn embed(&self, img: &RgbImage) -> Result<(ImageEmbedding, ResizeTransform)> {
        let (input, t) = self.preprocess(img);
        Ok((self.encode_image(&input)?, t))
    }

    /// Encodes a box given in model-space pixel coordinates.
    pub fn encode_box(&self, b: BoundingBox) -> Result<PromptEmbedding> {
        let s = self.config.input_size;
        if !b.fits(s, s) {
            return Err(Error::InvalidArgument(format!("box {b} outside model input {s}x{s}")));
        }
        let corners = [b.x_min as f32, b.y_min as f32, b.x_max as f32, b.y_max as f32];
        Ok(PromptEmbedding {
            tokens: self.prompt_encoder.embed_box(corners),
        })
    }

    fn check_decode_inputs(&self, emb: &ImageEmbedding, prompt: &PromptEmbedding) -> Result<()> {
        let g = self.config.embedding_grid();
        let c = self.config.embedding_channels;
        if emb.data.dim() != (g * g, c) {
            return Err(Error::ShapeMismatch(format!(
                "image embedding must be ({c}, {g}, {g}), got {:?}",
                emb.shape()
            )));
        }
        if prompt.tokens.ncols() != c || prompt.tokens.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "prompt tokens must have {c} channels, got {:?}",
                prompt.tokens.dim()
            )));
        }
        Ok(())
    }

    /// Raw decoder pass with a backward tape.
    pub fn decode_raw(&self, emb: &ImageEmbedding, prompt: &PromptEmbedding) -> Result<(DecoderOutput, DecoderTape)> {
        self.check_decode_inputs(emb, prompt)?;
        Ok(self.mask_decoder.forward(
            &emb.data.view(),
            &self.prompt_encoder.no_mask_row(),
            &self.dense_pe,
            &prompt.tokens,
        ))
    }

    pub fn decode(&self, emb: &ImageEmbedding, prompt: &PromptEmbedding) -> Result<MaskPrediction> {
        let (out, _) = self.decode_raw(emb, prompt)?;
        let m = self.config.mask_grid();
        let n = self.config.num_mask_outputs;
        let logits = Array3::from_shape_vec((n, m, m), out.masks.slice(ndarray::s![1..1 + n, ..]).iter().cloned().collect())
            .expect("mask rows are mask_grid^2 long");
        let single_logits = Array2::from_shape_vec((m, m), out.masks.row(0).to_vec()).expect("mask grid");
        let upsampled = logits_to_probabilities(&single_logits.view(), self.config.input_size);
        Ok(MaskPrediction {
            logits,
            iou_scores: out.iou[1..1 + n].iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            single_logits,
            single_iou: out.iou[0].clamp(0.0, 1.0),
            upsampled,
        })
    }

    /// Predicts the mask of a box drawn in original image coordinates and
    /// maps it back to the original image size.
    pub fn predict_box(
        &self,
        emb: &ImageEmbedding,
        transform: &ResizeTransform,
        b: BoundingBox,
    ) -> Result<(ProbabilityMask, f32)> {
        let model_box = map_box(b, transform, Direction::Forward);
        let pred = self.decode(emb, &self.encode_box(model_box)?)?;
        Ok((probabilities_to_original(&pred.upsampled, transform), pred.single_iou))
    }

    pub fn component(&self, c: Component) -> &dyn Module {
        match c {
            Component::ImageEncoder => &self.image_encoder,
            Component::PromptEncoder => &self.prompt_encoder,
            Component::MaskDecoder => &self.mask_decoder,
        }
    }

    pub fn component_counts(&self) -> ComponentCounts {
        ComponentCounts {
            image_encoder: self.image_encoder.num_params(),
            prompt_encoder: self.prompt_encoder.num_params(),
            mask_decoder: self.mask_decoder.num_params(),
        }
    }

    pub fn trainable_parameters(&self, policy: FreezePolicy) -> ParameterSet {
        let mut names = Vec::new();
        let mut count = 0;
        for (comp, on) in [
            (Component::ImageEncoder, policy.image_encoder_trainable),
            (Component::PromptEncoder, policy.prompt_encoder_trainable),
            (Component::MaskDecoder, policy.mask_decoder_trainable),
        ] {
            if !on {
                continue;
            }
            self.component(comp).visit(comp.prefix(), &mut |name, p| {
                if !p.is_buffer {
                    names.push(name.to_string());
                    count += p.numel();
                }
            });
        }
        ParameterSet { names, count }
    }

    /// SHA-256 over names, shapes and little-endian values of a component.
    pub fn component_digest(&self, c: Component) -> String {
        let mut h = Sha256::new();
        self.component(c).visit(c.prefix(), &mut |name, p| {
            h.update(name.as_bytes());
            for &d in p.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in p.value.iter() {
                h.update(v.to_le_bytes());
            }
        });
        hex::encode(h.finalize())
    }

    /// Digest of both frozen encoders.
    pub fn encoder_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.component_digest(Component::ImageEncoder));
        h.update(self.component_digest(Component::PromptEncoder));
        hex::encode(h.finalize())
    }
}

impl Module for BackboneBundle {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.image_encoder.visit(&join(prefix, "image_encoder"), f);
        self.prompt_encoder.visit(&join(prefix, "prompt_encoder"), f);
        self.mask_decoder.visit(&join(prefix, "mask_decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.image_encoder.visit_mut(&join(prefix, "image_encoder"), f);
        self.prompt_encoder.visit_mut(&join(prefix, "prompt_encoder"), f);
        self.mask_decoder.visit_mut(&join(prefix, "mask_decoder"), f);
    }
}

/// Sigmoid of bilinearly upsampled logits.
pub fn logits_to_probabilities(logits: &ArrayView2<f32>, size: usize) -> ProbabilityMask {
    let up = upsample(&logits.mapv(f64::from), size);
    ProbabilityMask::from_array(up.mapv(act::sigmoid)).expect("sigmoid output lies in [0, 1]")
}
