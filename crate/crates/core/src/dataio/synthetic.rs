//! Small synthetic pavement-like dataset: textured gray background with dark
//! crack lines and patches, annotated by polygons.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::manifest::write_atomic;
use super::split::train_count;
use crate::domain::{BoundingBox, DistressClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ToyConfig {
    pub n_images: usize,
    /// Square image side in pixels.
    pub size: usize,
    pub max_instances: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_images: 20,
            size: 64,
            max_instances: 1,
            train_fraction: 0.75,
            seed: 0,
        }
    }
}

/// One generated shape: its class and polygon.
#[derive(Debug, Clone)]
pub struct ToyShape {
    pub class: DistressClass,
    pub bbox: BoundingBox,
}

impl ToyShape {
    pub fn polygon(&self) -> Vec<[f64; 2]> {
        let b = &self.bbox;
        let (x0, y0, x1, y1) = (b.x_min as f64, b.y_min as f64, b.x_max as f64, b.y_max as f64);
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }
}

/// Draws one image and its shapes.
pub fn toy_image(rng: &mut ChaCha8Rng, size: usize, max_instances: usize) -> (RgbImage, Vec<ToyShape>) {
    let base: i32 = rng.gen_range(150..190);
    let mut img = RgbImage::from_fn(size as u32, size as u32, |_, _| {
        let v = (base + rng.gen_range(-12..=12)).clamp(0, 255) as u8;
        Rgb([v, v, v])
    });
    let n = rng.gen_range(1..=max_instances.max(1));
    let mut shapes: Vec<ToyShape> = Vec::new();
    let s = size as i64;
    for _ in 0..n {
        for _attempt in 0..20 {
            let kind = rng.gen_range(0..3);
            let (class, bbox) = match kind {
                0 => {
                    let len = rng.gen_range(s / 2..=s * 7 / 8);
                    let x0 = rng.gen_range(0..=s - len);
                    let y0 = rng.gen_range(2..s - 5);
                    (DistressClass::Transverse, BoundingBox::raw(x0, y0, x0 + len - 1, y0 + 2))
                }
                1 => {
                    let len = rng.gen_range(s / 2..=s * 7 / 8);
                    let y0 = rng.gen_range(0..=s - len);
                    let x0 = rng.gen_range(2..s - 5);
                    (DistressClass::Longitudinal, BoundingBox::raw(x0, y0, x0 + 2, y0 + len - 1))
                }
                _ => {
                    let w = rng.gen_range(s / 6..=s / 3);
                    let h = rng.gen_range(s / 6..=s / 3);
                    let x0 = rng.gen_range(1..s - w);
                    let y0 = rng.gen_range(1..s - h);
                    (DistressClass::Patch, BoundingBox::raw(x0, y0, x0 + w - 1, y0 + h - 1))
                }
            };
            let clashes = shapes.iter().any(|o| {
                let g = 2;
                !(bbox.x_max + g < o.bbox.x_min
                    || o.bbox.x_max + g < bbox.x_min
                    || bbox.y_max + g < o.bbox.y_min
                    || o.bbox.y_max + g < bbox.y_min)
            });
            if !clashes {
                shapes.push(ToyShape { class, bbox });
                break;
            }
        }
    }
    for shape in &shapes {
        let dark: i32 = if shape.class == DistressClass::Patch {
            rng.gen_range(70..100)
        } else {
            rng.gen_range(30..60)
        };
        let b = shape.bbox;
        for y in b.y_min..=b.y_max {
            for x in b.x_min..=b.x_max {
                let v = (dark + rng.gen_range(-6..=6)).clamp(0, 255) as u8;
                img.put_pixel(x as u32, y as u32, Rgb([v, v, v]));
            }
        }
    }
    (img, shapes)
}

/// Writes images and a polygon manifest under `dir`; returns the manifest path.
pub fn write_toy_dataset(dir: &Path, cfg: &ToyConfig) -> Result<PathBuf> {
    if cfg.size < 16 {
        return Err(Error::InvalidArgument("toy images need a side of at least 16 px".into()));
    }
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_train = train_count(cfg.n_images, cfg.train_fraction);
    let mut lines = Vec::new();
    for i in 0..cfg.n_images {
        let (img, shapes) = toy_image(&mut rng, cfg.size, cfg.max_instances);
        let name = format!("toy_{i:04}.png");
        let path = img_dir.join(&name);
        img.save(&path).map_err(|e| Error::image(&path, e))?;
        let instances: Vec<_> = shapes
            .iter()
            .map(|s| json!({"class": s.class, "polygon": s.polygon()}))
            .collect();
        let split = if i < n_train { "train" } else { "test" };
        let line = json!({
            "id": format!("toy_{i:04}"),
            "image_path": format!("images/{name}"),
            "split": split,
            "instances": instances,
        });
        lines.extend_from_slice(serde_json::to_string(&line)?.as_bytes());
        lines.push(b'\n');
    }
    let manifest = dir.join("manifest.jsonl");
    write_atomic(&manifest, &lines)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::load_manifest;

    #[test]
    fn toy_dataset_loads_and_boxes_match_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ToyConfig { n_images: 8, ..Default::default() };
        let path = write_toy_dataset(dir.path(), &cfg).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.split_counts(), (6, 2));
        for r in &m.records {
            assert!(!r.instances.is_empty());
            for (k, inst) in r.instances.iter().enumerate() {
                let mask = r.instance_mask(k).unwrap();
                assert_eq!(mask.count_ones() as u64, crate::domain::box_area(&inst.bbox));
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = toy_image(&mut ChaCha8Rng::seed_from_u64(3), 32, 2);
        let b = toy_image(&mut ChaCha8Rng::seed_from_u64(3), 32, 2);
        assert_eq!(a.0, b.0);
    }
}
