//! Shared domain types and pixel-space geometry.
//!
//! Coordinates follow `(x = column, y = row)` with the origin at the top-left
//! pixel. Boxes are inclusive of both corners.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned prompt rectangle in pixel space, inclusive of both corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[i64; 4]", try_from = "[i64; 4]")]
pub struct BoundingBox {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl BoundingBox {
    /// Builds a box, rejecting inverted corners.
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::InvalidArgument(format!(
                "inverted box ({x_min},{y_min},{x_max},{y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box without checking corner order. Used where the caller
    /// validates later (request parsing, clamping).
    pub const fn raw(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> i64 {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> i64 {
        self.y_max - self.y_min + 1
    }

    /// True when corners are ordered and every coordinate lies inside an
    /// image of the given size.
    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.x_min >= 0
            && self.y_min >= 0
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
            && self.x_max < width as i64
            && self.y_max < height as i64
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn to_array(self) -> [i64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl From<BoundingBox> for [i64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl TryFrom<[i64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [i64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{},{})",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

/// Clips a box to an image of `height` × `width` pixels.
///
/// A box that does not overlap the image at all (or has inverted corners) is
/// rejected as degenerate.
pub fn clamp_box(b: BoundingBox, height: usize, width: usize) -> Result<BoundingBox> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("image has zero extent".into()));
    }
    let (w, h) = (width as i64, height as i64);
    if b.x_min > b.x_max
        || b.y_min > b.y_max
        || b.x_max < 0
        || b.y_max < 0
        || b.x_min > w - 1
        || b.y_min > h - 1
    {
        return Err(Error::DegenerateBox);
    }
    Ok(BoundingBox {
        x_min: b.x_min.clamp(0, w - 1),
        y_min: b.y_min.clamp(0, h - 1),
        x_max: b.x_max.clamp(0, w - 1),
        y_max: b.y_max.clamp(0, h - 1),
    })
}

/// Pixel count of a box under the inclusive convention.
pub fn box_area(b: &BoundingBox) -> u64 {
    (b.width().max(0) as u64) * (b.height().max(0) as u64)
}

/// A `{0, 1}` mask, indexed `[row, col]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask(Array2<u8>);

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Array2::zeros((height, width)))
    }

    pub fn from_array(values: Array2<u8>) -> Result<Self> {
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument(
                "binary mask values must be 0 or 1".into(),
            ));
        }
        Ok(Self(values))
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self(Array2::from_shape_fn((height, width), |(r, c)| f(r, c) as u8))
    }

    pub fn height(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.0[[row, col]] == 1
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.0[[row, col]] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&v| v == 0)
    }

    pub fn view(&self) -> ndarray::ArrayView2<'_, u8> {
        self.0.view()
    }

    pub fn as_slice(&self) -> &[u8] {
        self.0
            .as_slice()
            .expect("binary masks are stored in standard layout")
    }

    pub fn into_array(self) -> Array2<u8> {
        self.0
    }

    /// The 0/255 byte form used at file boundaries.
    pub fn to_bytes(&self) -> Array2<u8> {
        self.0.mapv(|v| v * 255)
    }

    /// Inverse of [`BinaryMask::to_bytes`]: any nonzero byte is foreground.
    pub fn from_bytes(bytes: &Array2<u8>) -> Self {
        Self(bytes.mapv(|v| (v != 0) as u8))
    }

    /// Values as probabilities in `{0.0, 1.0}`.
    pub fn to_probabilities(&self) -> ProbabilityMask {
        ProbabilityMask(self.0.mapv(f64::from))
    }
}

/// Per-pixel foreground probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMask(Array2<f64>);

impl ProbabilityMask {
    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "probability {v} outside [0, 1]"
            )));
        }
        Ok(Self(values))
    }

    pub fn filled(height: usize, width: usize, p: f64) -> Result<Self> {
        Self::from_array(Array2::from_elem((height, width), p))
    }

    pub fn height(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn view(&self) -> ndarray::ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0
            .as_slice()
            .expect("probability masks are stored in standard layout")
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }
}

/// The six annotated distress categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistressClass {
    Transverse,
    Longitudinal,
    Alligator,
    Block,
    Patch,
    Manhole,
}

impl DistressClass {
    pub const ALL: [DistressClass; 6] = [
        DistressClass::Transverse,
        DistressClass::Longitudinal,
        DistressClass::Alligator,
        DistressClass::Block,
        DistressClass::Patch,
        DistressClass::Manhole,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistressClass::Transverse => "transverse",
            DistressClass::Longitudinal => "longitudinal",
            DistressClass::Alligator => "alligator",
            DistressClass::Block => "block",
            DistressClass::Patch => "patch",
            DistressClass::Manhole => "manhole",
        }
    }
}

impl fmt::Display for DistressClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistressClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistressClass::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown distress class `{s}`")))
    }
}

/// Where an instance's pixels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceGeometry {
    /// Polygon vertices as `(x, y)` pixel coordinates.
    Polygon(Vec<(f64, f64)>),
    /// A 0/255 mask file. With `component`, only that 8-connected component
    /// (in scan order, after dropping small components) belongs to the instance.
    MaskFile {
        path: PathBuf,
        component: Option<usize>,
    },
    /// Only a box is known; no pixel-level ground truth.
    BoxOnly,
}

impl InstanceGeometry {
    pub fn has_mask(&self) -> bool {
        !matches!(self, InstanceGeometry::BoxOnly)
    }
}

/// One annotated distress with its cached prompt box.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedInstance {
    pub class: DistressClass,
    pub geometry: InstanceGeometry,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// One pavement image with its annotations, pixels loaded.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub id: String,
    pub pixels: image::RgbImage,
    pub instances: Vec<AnnotatedInstance>,
    pub split: Split,
}

impl ImageSample {
    pub fn height(&self) -> usize {
        self.pixels.height() as usize
    }

    pub fn width(&self) -> usize {
        self.pixels.width() as usize
    }
}
