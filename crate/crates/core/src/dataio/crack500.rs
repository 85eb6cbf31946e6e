//! Crack500 directory layout.
//!
//! The root holds split folders (`traindata`, `valdata`, `testdata`, or the
//! cropped `traincrop`, `valcrop`, `testcrop`). Each folder pairs
//! `NAME.jpg` with a mask `NAME_mask.png` or `NAME.png`. Training and
//! validation folders both map to the train split.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::manifest::{DatasetManifest, ImageRecord, SourceKind};
use super::{maskfile, raster, MIN_COMPONENT_PIXELS};
use crate::domain::{AnnotatedInstance, BoundingBox, DistressClass, InstanceGeometry, Split};
use crate::error::{Error, Result};

const SPLIT_DIRS: [(&str, Split); 6] = [
    ("traindata", Split::Train),
    ("traincrop", Split::Train),
    ("valdata", Split::Train),
    ("valcrop", Split::Train),
    ("testdata", Split::Test),
    ("testcrop", Split::Test),
];

/// Loads a Crack500 root. Every 8-connected crack component of at least
/// [`MIN_COMPONENT_PIXELS`] pixels becomes one instance.
pub fn load_crack500(root: &Path) -> Result<DatasetManifest> {
    let mut records = Vec::new();
    let mut orphans = Vec::new();
    let mut found_dir = false;
    for (dir_name, split) in SPLIT_DIRS {
        let dir = root.join(dir_name);
        if !dir.is_dir() {
            continue;
        }
        found_dir = true;
        let (pairs, mut missing) = pair_files(&dir)?;
        orphans.append(&mut missing);
        for (stem, (image, mask)) in pairs {
            records.push(build_record(stem, image, mask, split)?);
        }
    }
    if !found_dir {
        return Err(Error::InvalidArgument(format!(
            "{}: no Crack500 split folders found",
            root.display()
        )));
    }
    if !orphans.is_empty() {
        orphans.sort();
        return Err(Error::Orphans(orphans));
    }
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut manifest = DatasetManifest {
        records,
        source_kind: SourceKind::MaskDirectory,
        train_fraction: 0.0,
    };
    manifest.refresh_fraction();
    Ok(manifest)
}

type Pairs = BTreeMap<String, (PathBuf, PathBuf)>;

fn pair_files(dir: &Path) -> Result<(Pairs, Vec<PathBuf>)> {
    let mut images: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut masks: BTreeMap<String, PathBuf> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) else {
            continue;
        };
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        match ext.as_str() {
            "jpg" | "jpeg" => {
                images.insert(stem, path);
            }
            "png" => {
                let key = stem.strip_suffix("_mask").unwrap_or(&stem).to_string();
                masks.insert(key, path);
            }
            _ => {}
        }
    }
    let mut pairs = BTreeMap::new();
    let mut orphans = Vec::new();
    for (stem, image) in images {
        match masks.remove(&stem) {
            Some(mask) => {
                pairs.insert(stem, (image, mask));
            }
            None => orphans.push(image),
        }
    }
    orphans.extend(masks.into_values());
    Ok((pairs, orphans))
}

fn build_record(id: String, image_path: PathBuf, mask_path: PathBuf, split: Split) -> Result<ImageRecord> {
    let (w, h) = image::image_dimensions(&image_path).map_err(|e| Error::image(&image_path, e))?;
    let bytes = raster::promote_binary(maskfile::read_mask_bytes(&mask_path)?);
    if bytes.dim() != (h as usize, w as usize) {
        return Err(Error::ShapeMismatch(format!(
            "{}: mask is {:?}, image is {}x{}",
            mask_path.display(),
            bytes.dim(),
            h,
            w
        )));
    }
    let instances = raster::connected_components(&bytes, MIN_COMPONENT_PIXELS)
        .into_iter()
        .enumerate()
        .map(|(k, comp)| AnnotatedInstance {
            class: orientation_class(&comp.bbox),
            geometry: InstanceGeometry::MaskFile {
                path: mask_path.clone(),
                component: Some(k),
            },
            bbox: comp.bbox,
        })
        .collect();
    Ok(ImageRecord {
        id,
        image_path,
        height: h as usize,
        width: w as usize,
        split,
        instances,
    })
}

/// Crack500 carries no class labels; components are tagged by the shape of
/// their box for reporting only.
pub fn orientation_class(b: &BoundingBox) -> DistressClass {
    if b.width() >= 2 * b.height() {
        DistressClass::Transverse
    } else if b.height() >= 2 * b.width() {
        DistressClass::Longitudinal
    } else {
        DistressClass::Block
    }
}
