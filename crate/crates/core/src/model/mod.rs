//! The promptable segmentation backbone.

pub mod bundle;
pub mod checkpoint;
pub mod config;
pub mod image_encoder;
pub mod mask_decoder;
pub mod prompt_encoder;
pub mod upsample;

pub use bundle::{
    logits_to_probabilities, BackboneBundle, Component, ComponentCounts, ImageEmbedding, InputImage, MaskPrediction,
    ParameterSet, PromptEmbedding,
};
pub use checkpoint::{load_backbone, open_backbone, read_checkpoint, save_checkpoint, Checkpoint, SURROGATE};
pub use config::{BackboneConfig, DecoderArch, EncoderArch, FreezePolicy, PromptArch};
