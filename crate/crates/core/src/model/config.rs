//! Backbone architecture descriptions.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Published per-channel normalization of the pretrained backbone (0-255 scale).
pub const PIXEL_MEAN: [f32; 3] = [123.675, 116.28, 103.53];
pub const PIXEL_STD: [f32; 3] = [58.395, 57.12, 57.375];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_size: usize,
    pub downsample_factor: usize,
    pub embedding_channels: usize,
    pub num_mask_outputs: usize,
    pub pixel_mean: [f32; 3],
    pub pixel_std: [f32; 3],
    pub encoder: EncoderArch,
    pub prompt: PromptArch,
    pub decoder: DecoderArch,
    /// Seed for randomly initialized weights (surrogate backbones).
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderArch {
    /// Strided convolution stages, each followed by GELU, then a channel
    /// layer norm. The last stage emits `embedding_channels`.
    Conv { channels: Vec<usize>, kernels: Vec<usize> },
    /// Vision transformer with windowed and global attention blocks and a
    /// convolutional neck.
    Vit {
        embed_dim: usize,
        depth: usize,
        num_heads: usize,
        mlp_ratio: usize,
        patch_size: usize,
        window_size: usize,
        global_attn_indexes: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptArch {
    /// Whether the dense mask-prompt branch exists (it is never used for
    /// box prompts but is part of pretrained checkpoints).
    pub mask_downscaling: bool,
    pub mask_in_chans: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderArch {
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub self_attn_downsample: usize,
    pub cross_attn_downsample: usize,
    /// Output channels of the two transposed-convolution upscaling stages.
    pub upscale_channels: [usize; 2],
    pub hyper_hidden: usize,
    pub iou_hidden: usize,
    pub iou_depth: usize,
}

impl BackboneConfig {
    /// Pretrained ViT-B backbone at 1024 px input.
    pub fn vit_b() -> Self {
        Self {
            input_size: 1024,
            downsample_factor: 16,
            embedding_channels: 256,
            num_mask_outputs: 3,
            pixel_mean: PIXEL_MEAN,
            pixel_std: PIXEL_STD,
            encoder: EncoderArch::Vit {
                embed_dim: 768,
                depth: 12,
                num_heads: 12,
                mlp_ratio: 4,
                patch_size: 16,
                window_size: 14,
                global_attn_indexes: vec![2, 5, 8, 11],
            },
            prompt: PromptArch {
                mask_downscaling: true,
                mask_in_chans: 16,
            },
            decoder: DecoderArch {
                depth: 2,
                num_heads: 8,
                mlp_dim: 2048,
                self_attn_downsample: 1,
                cross_attn_downsample: 2,
                upscale_channels: [64, 32],
                hyper_hidden: 256,
                iou_hidden: 256,
                iou_depth: 3,
            },
            init_seed: 0,
        }
    }

    /// Small CPU-trainable backbone with the same input and output shapes.
    pub fn surrogate() -> Self {
        Self {
            input_size: 1024,
            downsample_factor: 16,
            embedding_channels: 256,
            num_mask_outputs: 3,
            pixel_mean: PIXEL_MEAN,
            pixel_std: PIXEL_STD,
            encoder: EncoderArch::Conv {
                channels: vec![32, 64, 256],
                kernels: vec![4, 2, 2],
            },
            prompt: PromptArch {
                mask_downscaling: false,
                mask_in_chans: 16,
            },
            decoder: DecoderArch {
                depth: 2,
                num_heads: 2,
                mlp_dim: 32,
                self_attn_downsample: 8,
                cross_attn_downsample: 16,
                upscale_channels: [16, 8],
                hyper_hidden: 32,
                iou_hidden: 32,
                iou_depth: 3,
            },
            init_seed: 0,
        }
    }

    pub fn embedding_grid(&self) -> usize {
        self.input_size / self.downsample_factor
    }

    pub fn mask_grid(&self) -> usize {
        self.input_size / 4
    }

    pub fn num_mask_tokens(&self) -> usize {
        self.num_mask_outputs + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_size == 0 || self.downsample_factor == 0 || !self.input_size.is_multiple_of(self.downsample_factor) {
            return bad(format!(
                "input size {} not divisible by downsample factor {}",
                self.input_size, self.downsample_factor
            ));
        }
        if self.embedding_grid() * 4 != self.mask_grid() {
            return bad("mask grid must be 4x the embedding grid (downsample factor 16)".into());
        }
        if !self.embedding_channels.is_multiple_of(2) {
            return bad("embedding channels must be even".into());
        }
        match &self.encoder {
            EncoderArch::Conv { channels, kernels } => {
                if channels.is_empty() || channels.len() != kernels.len() {
                    return bad("conv encoder needs one kernel per stage".into());
                }
                if kernels.iter().product::<usize>() != self.downsample_factor {
                    return bad("conv encoder strides must multiply to the downsample factor".into());
                }
                if *channels.last().expect("nonempty") != self.embedding_channels {
                    return bad("last conv stage must emit the embedding channels".into());
                }
            }
            EncoderArch::Vit {
                embed_dim,
                num_heads,
                patch_size,
                ..
            } => {
                if *patch_size != self.downsample_factor {
                    return bad("patch size must equal the downsample factor".into());
                }
                if embed_dim % num_heads != 0 {
                    return bad("heads must divide the embedding dimension".into());
                }
            }
        }
        let d = &self.decoder;
        for (name, rate) in [("self", d.self_attn_downsample), ("cross", d.cross_attn_downsample)] {
            if rate == 0 || !self.embedding_channels.is_multiple_of(rate) || !(self.embedding_channels / rate).is_multiple_of(d.num_heads) {
                return bad(format!("{name}-attention downsample {rate} incompatible with heads {}", d.num_heads));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Which components receive gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePolicy {
    pub image_encoder_trainable: bool,
    pub prompt_encoder_trainable: bool,
    pub mask_decoder_trainable: bool,
}

impl Default for FreezePolicy {
    fn default() -> Self {
        Self {
            image_encoder_trainable: false,
            prompt_encoder_trainable: false,
            mask_decoder_trainable: true,
        }
    }
}

impl FreezePolicy {
    pub fn all_frozen() -> Self {
        Self {
            image_encoder_trainable: false,
            prompt_encoder_trainable: false,
            mask_decoder_trainable: false,
        }
    }
}
