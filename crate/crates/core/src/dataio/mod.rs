//! Dataset ingestion, rasterization, box extraction, resizing and splitting.

pub mod crack500;
pub mod manifest;
pub mod maskfile;
pub mod raster;
pub mod resize;
pub mod split;
pub mod synthetic;

/// Connected components smaller than this are treated as annotation noise.
pub const MIN_COMPONENT_PIXELS: usize = 20;

pub use crack500::load_crack500;
pub use manifest::{geometry_mask, load_manifest, load_manifest_lenient, ConvertedInstance, ConvertedRecord, DatasetManifest, ImageRecord, SourceKind, DEFAULT_TRAIN_FRACTION};
pub use maskfile::{read_mask, read_mask_bytes, write_mask};
pub use raster::{connected_components, extract_box, mask_box, promote_binary, rasterize_polygon};
pub use resize::{map_box, resize_and_pad, Direction, ResizeTransform, DEFAULT_TARGET};
pub use split::split_dataset;
