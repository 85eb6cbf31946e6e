//! Per-epoch training order and per-image training entries.

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::DatasetManifest;
use crate::domain::{BinaryMask, BoundingBox, Split};
use crate::error::{Error, Result};

/// One training image: its box prompts and the instances they belong to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchEntry {
    /// Index into `manifest.records`.
    pub record: usize,
    pub id: String,
    /// Instance indices with a reference mask.
    pub instances: Vec<usize>,
    /// Box prompts in original image coordinates, parallel to `instances`.
    pub boxes: Vec<BoundingBox>,
}

/// Pixels and per-instance targets at the original image size.
#[derive(Debug, Clone)]
pub struct LoadedEntry {
    pub id: String,
    pub image: RgbImage,
    pub boxes: Vec<BoundingBox>,
    pub targets: Vec<BinaryMask>,
}

impl BatchEntry {
    pub fn load(&self, manifest: &DatasetManifest) -> Result<LoadedEntry> {
        let record = &manifest.records[self.record];
        let image = record.load_pixels()?;
        let targets = self
            .instances
            .iter()
            .map(|&k| record.instance_mask(k))
            .collect::<Result<Vec<_>>>()?;
        Ok(LoadedEntry {
            id: self.id.clone(),
            image,
            boxes: self.boxes.clone(),
            targets,
        })
    }
}

/// Every trainable image of the train split, in a deterministic order
/// shuffled by `(seed, epoch)`. Images without usable instances are skipped
/// with a warning.
pub fn build_batches(manifest: &DatasetManifest, seed: u64, epoch: usize) -> Result<Vec<BatchEntry>> {
    let mut entries = Vec::new();
    for (index, record) in manifest.records.iter().enumerate() {
        if record.split != Split::Train {
            continue;
        }
        let instances: Vec<usize> = (0..record.instances.len())
            .filter(|&k| record.instances[k].geometry.has_mask())
            .collect();
        if instances.len() < record.instances.len() {
            log::warn!("{}: {} box-only instances skipped", record.id, record.instances.len() - instances.len());
        }
        if instances.is_empty() {
            log::warn!("{}: no trainable instances, image skipped", record.id);
            continue;
        }
        entries.push(BatchEntry {
            record: index,
            id: record.id.clone(),
            boxes: instances.iter().map(|&k| record.instances[k].bbox).collect(),
            instances,
        });
    }
    if entries.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    entries.shuffle(&mut rng);
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::manifest::{ImageRecord, SourceKind};
    use crate::domain::{AnnotatedInstance, DistressClass, InstanceGeometry};

    fn manifest(per_image: &[usize]) -> DatasetManifest {
        let records = per_image
            .iter()
            .enumerate()
            .map(|(i, &n)| ImageRecord {
                id: format!("img{i}"),
                image_path: format!("img{i}.png").into(),
                height: 10,
                width: 10,
                split: Split::Train,
                instances: (0..n)
                    .map(|_| AnnotatedInstance {
                        class: DistressClass::Patch,
                        geometry: InstanceGeometry::Polygon(vec![(1.0, 1.0), (5.0, 1.0), (5.0, 5.0)]),
                        bbox: BoundingBox::new(1, 1, 5, 5).unwrap(),
                    })
                    .collect(),
            })
            .collect();
        DatasetManifest {
            records,
            source_kind: SourceKind::PolygonManifest,
            train_fraction: 1.0,
        }
    }

    #[test]
    fn full_sized_manifest_yields_one_entry_per_image() {
        let mut counts = vec![6usize; 180];
        for c in counts.iter_mut().take(45) {
            *c = 7;
        }
        let m = manifest(&counts);
        let entries = build_batches(&m, 0, 0).unwrap();
        assert_eq!(entries.len(), 180);
        assert_eq!(entries.iter().map(|e| e.boxes.len()).sum::<usize>(), 1125);
    }

    #[test]
    fn single_instance_and_empty_images() {
        let entries = build_batches(&manifest(&[1, 0]), 3, 0).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].boxes.len(), 1);
        assert!(matches!(build_batches(&manifest(&[0]), 0, 0), Err(Error::NoRecords)));
    }

    #[test]
    fn order_is_a_function_of_seed_and_epoch() {
        let m = manifest(&[1; 30]);
        let order = |s, e| build_batches(&m, s, e).unwrap().into_iter().map(|b| b.record).collect::<Vec<_>>();
        assert_eq!(order(5, 2), order(5, 2));
        assert_ne!(order(5, 2), order(5, 3));
        let mut sorted = order(5, 2);
        sorted.sort();
        assert_eq!(sorted, (0..30).collect::<Vec<_>>());
    }
}
