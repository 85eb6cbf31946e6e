//! Single-channel 8-bit mask files (foreground 255, background 0).

use std::path::Path;

use image::GrayImage;
use ndarray::Array2;

use crate::domain::BinaryMask;
use crate::error::{Error, Result};

/// Reads a mask image as raw bytes. Color images are converted to luma.
pub fn read_mask_bytes(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.into_luma8();
    Ok(gray_to_array(&img))
}

/// Reads a mask file and binarizes it with the strict `> 1` rule after
/// promoting `{0, 1}` files to `{0, 255}`.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let bytes = super::raster::promote_binary(read_mask_bytes(path)?);
    Ok(BinaryMask::from_array(bytes.mapv(|v| (v > super::raster::BOX_THRESHOLD) as u8))
        .expect("values are 0 or 1"))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = mask.dims();
    let bytes = mask.to_bytes();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([bytes[[y as usize, x as usize]]]));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    img.save(path).map_err(|e| Error::image(path, e))
}

pub fn gray_to_array(img: &GrayImage) -> Array2<u8> {
    let (w, h) = img.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), img.as_raw().clone()).expect("buffer matches dimensions")
}
