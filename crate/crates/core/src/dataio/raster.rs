//! Polygon rasterization, mask-to-box extraction and connected components.

use ndarray::Array2;

use crate::domain::{BinaryMask, BoundingBox};
use crate::error::{Error, Result};

/// Byte values strictly above this count as foreground when extracting boxes.
pub const BOX_THRESHOLD: u8 = 1;

/// Rasterizes a polygon onto a `height` × `width` grid.
///
/// Pixel `(col, row)` has its center at `(col, row)`. A pixel is set when its
/// center lies inside the polygon under the even-odd rule, or exactly on an
/// edge.
pub fn rasterize_polygon(vertices: &[(f64, f64)], height: usize, width: usize) -> Result<BinaryMask> {
    if vertices.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "polygon needs at least 3 vertices, got {}",
            vertices.len()
        )));
    }
    for &(x, y) in vertices {
        if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 || x > width as f64 || y > height as f64 {
            return Err(Error::InvalidArgument(format!(
                "vertex ({x}, {y}) outside {height}x{width} image"
            )));
        }
    }

    let mut mask = BinaryMask::zeros(height, width);
    let n = vertices.len();
    let mut crossings: Vec<f64> = Vec::with_capacity(n);
    for row in 0..height {
        let y = row as f64;
        crossings.clear();
        for i in 0..n {
            let (xi, yi) = vertices[i];
            let (xj, yj) = vertices[(i + n - 1) % n];
            if (yi > y) != (yj > y) {
                crossings.push(xi + (y - yi) * (xj - xi) / (yj - yi));
            }
        }
        crossings.sort_by(|a, b| a.total_cmp(b));
        // Even-odd: a center is inside when an odd number of crossings lie
        // strictly to its right.
        for pair in crossings.chunks_exact(2) {
            let start = pair[0].ceil().max(0.0);
            let end = pair[1];
            let mut c = start as usize;
            while c < width && (c as f64) < end {
                mask.set(row, c, true);
                c += 1;
            }
        }
        mark_boundary_on_row(vertices, row, width, &mut mask);
    }
    Ok(mask)
}

fn mark_boundary_on_row(vertices: &[(f64, f64)], row: usize, width: usize, mask: &mut BinaryMask) {
    let y = row as f64;
    let n = vertices.len();
    for i in 0..n {
        let (x0, y0) = vertices[i];
        let (x1, y1) = vertices[(i + 1) % n];
        if y < y0.min(y1) || y > y0.max(y1) {
            continue;
        }
        if y0 == y1 {
            let lo = x0.min(x1).ceil().max(0.0) as usize;
            let hi = x0.max(x1).floor();
            if hi < 0.0 {
                continue;
            }
            for c in lo..=(hi as usize).min(width.saturating_sub(1)) {
                mask.set(row, c, true);
            }
        } else {
            let x = x0 + (y - y0) * (x1 - x0) / (y1 - y0);
            let xr = x.round();
            if (x - xr).abs() <= 1e-9 && xr >= 0.0 && (xr as usize) < width {
                mask.set(row, xr as usize, true);
            }
        }
    }
}

/// Tight box over every byte strictly greater than [`BOX_THRESHOLD`].
pub fn extract_box(mask_bytes: &Array2<u8>) -> Result<BoundingBox> {
    let (h, w) = mask_bytes.dim();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let mut found: Option<(usize, usize, usize, usize)> = None;
    for ((r, c), &v) in mask_bytes.indexed_iter() {
        if v > BOX_THRESHOLD {
            found = Some(match found {
                None => (c, r, c, r),
                Some((x0, y0, x1, y1)) => (x0.min(c), y0.min(r), x1.max(c), y1.max(r)),
            });
        }
    }
    let (x0, y0, x1, y1) = found.ok_or(Error::EmptyMask)?;
    Ok(BoundingBox::raw(x0 as i64, y0 as i64, x1 as i64, y1 as i64))
}

/// Box of a binary mask, going through the same 0/255 promotion as files.
pub fn mask_box(mask: &BinaryMask) -> Result<BoundingBox> {
    extract_box(&mask.to_bytes())
}

/// Promotes a `{0, 1}` byte grid to `{0, 255}`; other grids pass unchanged.
pub fn promote_binary(bytes: Array2<u8>) -> Array2<u8> {
    if bytes.iter().all(|&v| v <= 1) {
        bytes.mapv(|v| v * 255)
    } else {
        bytes
    }
}

/// One 8-connected foreground component.
#[derive(Debug, Clone)]
pub struct Component {
    pub bbox: BoundingBox,
    /// `(row, col)` pixel coordinates.
    pub pixels: Vec<(usize, usize)>,
}

impl Component {
    pub fn to_mask(&self, height: usize, width: usize) -> BinaryMask {
        let mut m = BinaryMask::zeros(height, width);
        for &(r, c) in &self.pixels {
            m.set(r, c, true);
        }
        m
    }
}

/// 8-connected components over bytes above [`BOX_THRESHOLD`], in raster
/// order of their first pixel. Components smaller than `min_pixels` are
/// dropped.
pub fn connected_components(mask_bytes: &Array2<u8>, min_pixels: usize) -> Vec<Component> {
    let (h, w) = mask_bytes.dim();
    let mut seen = Array2::<bool>::from_elem((h, w), false);
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if seen[[r, c]] || mask_bytes[[r, c]] <= BOX_THRESHOLD {
                continue;
            }
            seen[[r, c]] = true;
            stack.push((r, c));
            let mut pixels = Vec::new();
            let (mut x0, mut y0, mut x1, mut y1) = (c, r, c, r);
            while let Some((pr, pc)) = stack.pop() {
                pixels.push((pr, pc));
                x0 = x0.min(pc);
                x1 = x1.max(pc);
                y0 = y0.min(pr);
                y1 = y1.max(pr);
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let nr = pr as i64 + dr;
                        let nc = pc as i64 + dc;
                        if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                            continue;
                        }
                        let (nr, nc) = (nr as usize, nc as usize);
                        if !seen[[nr, nc]] && mask_bytes[[nr, nc]] > BOX_THRESHOLD {
                            seen[[nr, nc]] = true;
                            stack.push((nr, nc));
                        }
                    }
                }
            }
            if pixels.len() >= min_pixels {
                pixels.sort_unstable();
                out.push(Component {
                    bbox: BoundingBox::raw(x0 as i64, y0 as i64, x1 as i64, y1 as i64),
                    pixels,
                });
            }
        }
    }
    out
}
