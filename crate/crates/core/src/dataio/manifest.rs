//! Line-delimited JSON dataset manifests.
//!
//! Each non-blank line is one image:
//!
//! ```json
//! {"id": "img-001", "image_path": "images/001.png", "split": "train",
//!  "instances": [
//!    {"class": "transverse", "polygon": [[10, 4], [60, 4], [60, 7], [10, 7]]},
//!    {"class": "patch", "mask_path": "masks/001_patch.png"},
//!    {"class": "block", "mask_path": "masks/001.png", "component": 2},
//!    {"class": "manhole", "box": [5, 5, 20, 20]}
//!  ]}
//! ```
//!
//! `id` defaults to the image file stem. `split` is either present on every
//! line or on none; in the latter case the default 75/25 split is applied
//! with seed 0 (a single untagged image stays in train). Relative paths
//! resolve against the manifest's directory.
//! An instance carries exactly one of `polygon`, `mask_path` or `box`;
//! `box`-only instances have no pixel ground truth. `iou_score` is accepted
//! and ignored on input (it is written by the box-to-mask converter).

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{maskfile, raster, split, MIN_COMPONENT_PIXELS};
use crate::domain::{AnnotatedInstance, BinaryMask, BoundingBox, DistressClass, ImageSample, InstanceGeometry, Split};
use crate::error::{Error, Result};

/// Default fraction of images assigned to training.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    PolygonManifest,
    MaskDirectory,
    Crack500Layout,
}

/// One image entry of a manifest, validated against the files on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub height: usize,
    pub width: usize,
    pub split: Split,
    pub instances: Vec<AnnotatedInstance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub source_kind: SourceKind,
    /// Fraction of records currently tagged `train`.
    pub train_fraction: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    #[serde(default)]
    instances: Vec<LineInstance>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineInstance {
    class: DistressClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polygon: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    component: Option<usize>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    bbox: Option<[i64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iou_score: Option<f64>,
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let (records, splits, _) = read_records(path, false)?;
    assemble(records, splits)
}

/// Like [`load_manifest`], but records that fail validation (for example an
/// unreadable image) are dropped and returned alongside the manifest.
pub fn load_manifest_lenient(path: &Path) -> Result<(DatasetManifest, Vec<Error>)> {
    let (records, splits, skipped) = read_records(path, true)?;
    if records.is_empty() {
        return Err(skipped.into_iter().next().unwrap_or(Error::NoRecords));
    }
    Ok((assemble(records, splits)?, skipped))
}

type RawRecords = (Vec<ImageRecord>, Vec<Option<Split>>, Vec<Error>);

fn read_records(path: &Path, lenient: bool) -> Result<RawRecords> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut records = Vec::with_capacity(lines.len());
    let mut splits = Vec::with_capacity(lines.len());
    let mut skipped = Vec::new();
    for (index, line) in lines.iter().enumerate() {
        let parsed = serde_json::from_str::<LineRecord>(line)
            .map_err(|e| Error::record(index, format!("malformed record: {e}")))
            .and_then(|raw| {
                let split = raw.split;
                validate_record(index, raw, &base).map(|r| (r, split))
            });
        match parsed {
            Ok((record, split)) => {
                records.push(record);
                splits.push(split);
            }
            Err(e) if lenient => {
                log::error!("skipping {e}");
                skipped.push(e);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((records, splits, skipped))
}

fn assemble(records: Vec<ImageRecord>, splits: Vec<Option<Split>>) -> Result<DatasetManifest> {
    let mut seen = HashSet::new();
    for (index, r) in records.iter().enumerate() {
        if !seen.insert(r.id.clone()) {
            return Err(Error::record(index, format!("duplicate id `{}`", r.id)));
        }
    }

    let tagged = splits.iter().filter(|s| s.is_some()).count();
    let mut manifest = DatasetManifest {
        records,
        source_kind: SourceKind::PolygonManifest,
        train_fraction: 0.0,
    };
    if tagged == 0 && manifest.records.len() >= 2 {
        manifest = split::split_dataset(manifest, DEFAULT_TRAIN_FRACTION, 0)?;
    } else if tagged != 0 && tagged != splits.len() {
        let index = splits.iter().position(|s| s.is_none()).unwrap_or(0);
        return Err(Error::record(index, "split must be given on every record or on none"));
    } else {
        manifest.refresh_fraction();
    }
    Ok(manifest)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn validate_record(index: usize, raw: LineRecord, base: &Path) -> Result<ImageRecord> {
    let image_path = resolve(base, &raw.image_path);
    let (w, h) = image::image_dimensions(&image_path)
        .map_err(|e| Error::record(index, format!("{}: {e}", image_path.display())))?;
    let (height, width) = (h as usize, w as usize);
    let id = match raw.id {
        Some(id) => id,
        None => image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| Error::record(index, "cannot derive id from image path"))?,
    };

    let mut instances = Vec::with_capacity(raw.instances.len());
    for (k, inst) in raw.instances.into_iter().enumerate() {
        let fail = |msg: String| Error::record(index, format!("instance {k}: {msg}"));
        let sources =
            inst.polygon.is_some() as u8 + inst.mask_path.is_some() as u8 + inst.bbox.is_some() as u8;
        if sources != 1 {
            return Err(fail("exactly one of polygon, mask_path, box is required".into()));
        }
        let (geometry, bbox) = if let Some(poly) = inst.polygon {
            let vertices: Vec<(f64, f64)> = poly.into_iter().map(|[x, y]| (x, y)).collect();
            let mask = raster::rasterize_polygon(&vertices, height, width).map_err(|e| fail(e.to_string()))?;
            let bbox = raster::mask_box(&mask).map_err(|e| fail(e.to_string()))?;
            (InstanceGeometry::Polygon(vertices), bbox)
        } else if let Some(mp) = inst.mask_path {
            let geometry = InstanceGeometry::MaskFile {
                path: resolve(base, &mp),
                component: inst.component,
            };
            let mask = geometry_mask(&geometry, height, width).map_err(|e| fail(e.to_string()))?;
            let bbox = raster::mask_box(&mask).map_err(|e| fail(e.to_string()))?;
            (geometry, bbox)
        } else {
            let [x0, y0, x1, y1] = inst.bbox.expect("checked above");
            let bbox = BoundingBox::raw(x0, y0, x1, y1);
            if !bbox.fits(height, width) {
                return Err(fail(format!("box {bbox} outside {height}x{width} image")));
            }
            (InstanceGeometry::BoxOnly, bbox)
        };
        instances.push(AnnotatedInstance {
            class: inst.class,
            geometry,
            bbox,
        });
    }

    Ok(ImageRecord {
        id,
        image_path,
        height,
        width,
        split: raw.split.unwrap_or(Split::Train),
        instances,
    })
}

/// Rasterizes an instance geometry at the given image size.
pub fn geometry_mask(geometry: &InstanceGeometry, height: usize, width: usize) -> Result<BinaryMask> {
    match geometry {
        InstanceGeometry::Polygon(v) => raster::rasterize_polygon(v, height, width),
        InstanceGeometry::MaskFile { path, component } => {
            let bytes = raster::promote_binary(maskfile::read_mask_bytes(path)?);
            if bytes.dim() != (height, width) {
                return Err(Error::ShapeMismatch(format!(
                    "{}: mask is {:?}, image is {:?}",
                    path.display(),
                    bytes.dim(),
                    (height, width)
                )));
            }
            match component {
                None => Ok(BinaryMask::from_array(bytes.mapv(|v| (v > raster::BOX_THRESHOLD) as u8))
                    .expect("values are 0 or 1")),
                Some(k) => {
                    let comps = raster::connected_components(&bytes, MIN_COMPONENT_PIXELS);
                    let comp = comps.get(*k).ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "{}: component {k} requested, {} available",
                            path.display(),
                            comps.len()
                        ))
                    })?;
                    Ok(comp.to_mask(height, width))
                }
            }
        }
        InstanceGeometry::BoxOnly => Err(Error::InvalidArgument("instance has no mask geometry".into())),
    }
}

impl ImageRecord {
    pub fn load_pixels(&self) -> Result<image::RgbImage> {
        Ok(image::open(&self.image_path)
            .map_err(|e| Error::image(&self.image_path, e))?
            .into_rgb8())
    }

    pub fn load_sample(&self) -> Result<ImageSample> {
        Ok(ImageSample {
            id: self.id.clone(),
            pixels: self.load_pixels()?,
            instances: self.instances.clone(),
            split: self.split,
        })
    }

    /// Ground-truth mask of instance `k` at the original image size.
    pub fn instance_mask(&self, k: usize) -> Result<BinaryMask> {
        geometry_mask(&self.instances[k].geometry, self.height, self.width)
    }
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_counts(&self) -> (usize, usize) {
        let train = self.split_records(Split::Train).count();
        (train, self.records.len() - train)
    }

    /// Annotation count per distress class, classes without annotations
    /// omitted.
    pub fn class_counts(&self) -> BTreeMap<DistressClass, usize> {
        let mut counts = BTreeMap::new();
        for inst in self.records.iter().flat_map(|r| &r.instances) {
            *counts.entry(inst.class).or_insert(0) += 1;
        }
        counts
    }

    pub(crate) fn refresh_fraction(&mut self) {
        let (train, _) = self.split_counts();
        self.train_fraction = if self.records.is_empty() {
            0.0
        } else {
            train as f64 / self.records.len() as f64
        };
    }

    /// Writes the manifest in the line format, with paths relative to the
    /// output file's directory where possible.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = Vec::new();
        for r in &self.records {
            let line = LineRecord {
                id: Some(r.id.clone()),
                image_path: relative_to(&r.image_path, base),
                split: Some(r.split),
                instances: r
                    .instances
                    .iter()
                    .map(|inst| {
                        let mut li = LineInstance {
                            class: inst.class,
                            polygon: None,
                            mask_path: None,
                            component: None,
                            bbox: None,
                            iou_score: None,
                        };
                        match &inst.geometry {
                            InstanceGeometry::Polygon(v) => li.polygon = Some(v.iter().map(|&(x, y)| [x, y]).collect()),
                            InstanceGeometry::MaskFile { path, component } => {
                                li.mask_path = Some(relative_to(path, base));
                                li.component = *component;
                            }
                            InstanceGeometry::BoxOnly => li.bbox = Some(inst.bbox.to_array()),
                        }
                        li
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.push(b'\n');
        }
        write_atomic(path, &out)
    }
}

pub(crate) fn relative_to(p: &Path, base: &Path) -> String {
    let abs_base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
    let abs_p = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    abs_p
        .strip_prefix(&abs_base)
        .unwrap_or(&abs_p)
        .to_string_lossy()
        .into_owned()
}

/// Writes a whole file through a temporary sibling and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Instance line written by the box-to-mask converter.
#[derive(Debug, Serialize)]
pub struct ConvertedInstance {
    pub class: DistressClass,
    pub mask_path: String,
    pub iou_score: f64,
}

/// Image line written by the box-to-mask converter.
#[derive(Debug, Serialize)]
pub struct ConvertedRecord {
    pub id: String,
    pub image_path: String,
    pub split: Split,
    pub instances: Vec<ConvertedInstance>,
}
