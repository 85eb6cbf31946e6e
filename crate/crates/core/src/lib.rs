//! Box-prompted pavement distress segmentation.
//!
//! A promptable segmentation backbone (image encoder, prompt encoder, mask
//! decoder) is fine-tuned by training only the mask decoder on box prompts
//! derived from annotations. The crate covers dataset ingestion, losses,
//! the model, training, evaluation, complexity profiling and an inference
//! service.

pub mod cli;
pub mod dataio;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod nn;
pub mod profiler;
pub mod service;
pub mod training;

pub use domain::{
    box_area, clamp_box, AnnotatedInstance, BinaryMask, BoundingBox, DistressClass, ImageSample,
    InstanceGeometry, ProbabilityMask, Split,
};
pub use error::{Error, Result};
