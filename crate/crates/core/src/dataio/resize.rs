//! Longest-side resize with bottom/right zero padding, and the box and mask
//! mappings between original and model space.

use image::{Rgb, RgbImage};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::domain::{BinaryMask, BoundingBox, ProbabilityMask};

/// Default model input side length.
pub const DEFAULT_TARGET: usize = 1024;

/// Mapping from a source image to the square model input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizeTransform {
    pub scale: f64,
    pub pad_right: usize,
    pub pad_bottom: usize,
    pub target: usize,
    pub src_height: usize,
    pub src_width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Original image space to model space.
    Forward,
    /// Model space back to original image space.
    Inverse,
}

impl ResizeTransform {
    pub fn new(src_height: usize, src_width: usize, target: usize) -> Self {
        assert!(src_height > 0 && src_width > 0 && target > 0, "empty image");
        let scale = target as f64 / src_height.max(src_width) as f64;
        let content_h = ((src_height as f64 * scale).round() as usize).clamp(1, target);
        let content_w = ((src_width as f64 * scale).round() as usize).clamp(1, target);
        Self {
            scale,
            pad_right: target - content_w,
            pad_bottom: target - content_h,
            target,
            src_height,
            src_width,
        }
    }

    pub fn content_height(&self) -> usize {
        self.target - self.pad_bottom
    }

    pub fn content_width(&self) -> usize {
        self.target - self.pad_right
    }

    fn scale_y(&self) -> f64 {
        self.content_height() as f64 / self.src_height as f64
    }

    fn scale_x(&self) -> f64 {
        self.content_width() as f64 / self.src_width as f64
    }
}

/// Scales the longest side to `target` (bilinear) and zero-pads the other
/// side at the bottom or right.
pub fn resize_and_pad(image: &RgbImage, target: usize) -> (RgbImage, ResizeTransform) {
    let (h, w) = (image.height() as usize, image.width() as usize);
    let t = ResizeTransform::new(h, w, target);
    let (ch, cw) = (t.content_height(), t.content_width());
    let mut out = RgbImage::new(target as u32, target as u32);
    if ch == h && cw == w {
        image::imageops::replace(&mut out, image, 0, 0);
        return (out, t);
    }
    let xs = sample_axis(w, cw);
    let ys = sample_axis(h, ch);
    for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
            let p00 = image.get_pixel(x0 as u32, y0 as u32).0;
            let p01 = image.get_pixel(x1 as u32, y0 as u32).0;
            let p10 = image.get_pixel(x0 as u32, y1 as u32).0;
            let p11 = image.get_pixel(x1 as u32, y1 as u32).0;
            let mut px = [0u8; 3];
            for k in 0..3 {
                let top = p00[k] as f64 * (1.0 - lx) + p01[k] as f64 * lx;
                let bottom = p10[k] as f64 * (1.0 - lx) + p11[k] as f64 * lx;
                let v = top * (1.0 - ly) + bottom * ly;
                px[k] = v.round().clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(ox as u32, oy as u32, Rgb(px));
        }
    }
    (out, t)
}

/// Half-pixel-center bilinear sampling positions: `(lo, hi, weight_of_hi)`
/// for each output index.
pub(crate) fn sample_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Maps box corners between original and model space.
pub fn map_box(b: BoundingBox, t: &ResizeTransform, direction: Direction) -> BoundingBox {
    let (sx, sy, max_x, max_y) = match direction {
        Direction::Forward => (t.scale_x(), t.scale_y(), t.content_width() - 1, t.content_height() - 1),
        Direction::Inverse => (
            1.0 / t.scale_x(),
            1.0 / t.scale_y(),
            t.src_width - 1,
            t.src_height - 1,
        ),
    };
    let f = |v: i64, s: f64, hi: usize| ((v as f64 * s).round() as i64).clamp(0, hi as i64);
    BoundingBox::raw(
        f(b.x_min, sx, max_x),
        f(b.y_min, sy, max_y),
        f(b.x_max, sx, max_x),
        f(b.y_max, sy, max_y),
    )
}

/// Nearest-neighbour resize of a mask into the padded model frame.
pub fn mask_to_model(mask: &BinaryMask, t: &ResizeTransform) -> BinaryMask {
    let (h, w) = mask.dims();
    assert_eq!((h, w), (t.src_height, t.src_width), "mask does not match transform");
    let rows = nearest_axis(h, t.content_height());
    let cols = nearest_axis(w, t.content_width());
    let mut out = BinaryMask::zeros(t.target, t.target);
    for (oy, &sy) in rows.iter().enumerate() {
        for (ox, &sx) in cols.iter().enumerate() {
            if mask.get(sy, sx) {
                out.set(oy, ox, true);
            }
        }
    }
    out
}

fn nearest_axis(src: usize, dst: usize) -> Vec<usize> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| (((o as f64 + 0.5) * ratio).floor() as usize).min(src - 1))
        .collect()
}

/// Bilinear resize of a real-valued grid (half-pixel centers).
pub fn resize_bilinear(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.clone();
    }
    let ys = sample_axis(h, out_h);
    let xs = sample_axis(w, out_w);
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let (y0, y1, ly) = ys[oy];
        let (x0, x1, lx) = xs[ox];
        let top = src[[y0, x0]] * (1.0 - lx) + src[[y0, x1]] * lx;
        let bottom = src[[y1, x0]] * (1.0 - lx) + src[[y1, x1]] * lx;
        top * (1.0 - ly) + bottom * ly
    })
}

/// Crops the content region of a model-space probability map and resizes it
/// back to the source image size.
pub fn probabilities_to_original(p: &ProbabilityMask, t: &ResizeTransform) -> ProbabilityMask {
    let (ch, cw) = (t.content_height(), t.content_width());
    let view = p.view();
    let content = view.slice(ndarray::s![0..ch, 0..cw]).to_owned();
    let resized = resize_bilinear(&content, t.src_height, t.src_width);
    ProbabilityMask::from_array(resized.mapv(|v| v.clamp(0.0, 1.0))).expect("clamped to [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn pavement_frame_transform() {
        let t = ResizeTransform::new(1014, 2011, 1024);
        assert_eq!(t.scale, 1024.0 / 2011.0);
        // 1014 * 1024 / 2011 = 516.32...
        assert_eq!(t.content_height(), 516);
        assert_eq!(t.content_width(), 1024);
        assert_eq!(t.pad_bottom, 508);
        assert_eq!(t.pad_right, 0);
    }

    #[test]
    fn square_inputs_have_no_padding() {
        let t = ResizeTransform::new(1024, 1024, 1024);
        assert_eq!((t.scale, t.pad_right, t.pad_bottom), (1.0, 0, 0));
        let t = ResizeTransform::new(512, 512, 1024);
        assert_eq!((t.scale, t.pad_right, t.pad_bottom), (2.0, 0, 0));
    }

    #[test]
    fn identity_resize_keeps_pixels() {
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([x as u8, y as u8, (x * y) as u8]));
        let (out, t) = resize_and_pad(&img, 16);
        assert_eq!(t.scale, 1.0);
        assert_eq!(out, img);
    }

    #[test]
    fn upscale_of_constant_is_constant_and_pads_are_zero() {
        let img = RgbImage::from_pixel(8, 4, Rgb([200, 100, 50]));
        let (out, t) = resize_and_pad(&img, 16);
        assert_eq!((t.content_height(), t.content_width(), t.pad_bottom), (8, 16, 8));
        for y in 0..16 {
            for x in 0..16 {
                let expected = if y < 8 { [200, 100, 50] } else { [0, 0, 0] };
                assert_eq!(out.get_pixel(x, y).0, expected);
            }
        }
    }

    #[test]
    fn bilinear_matches_hand_computed_downscale() {
        // 1x4 row [0, 100, 200, 255] halved: centers sample at 0.5 and 2.5
        let img = RgbImage::from_fn(4, 1, |x, _| {
            let v = [0u8, 100, 200, 255][x as usize];
            Rgb([v, v, v])
        });
        let (out, _) = resize_and_pad(&img, 2);
        assert_eq!(out.get_pixel(0, 0).0[0], 50);
        assert_eq!(out.get_pixel(1, 0).0[0], 228); // 227.5 rounds away from zero
    }

    #[test]
    fn map_box_examples() {
        let id = ResizeTransform::new(64, 64, 64);
        let b = BoundingBox::raw(3, 4, 20, 30);
        assert_eq!(map_box(b, &id, Direction::Forward), b);
        let half = ResizeTransform::new(64, 64, 32);
        assert_eq!(
            map_box(BoundingBox::raw(10, 10, 20, 20), &half, Direction::Forward),
            BoundingBox::raw(5, 5, 10, 10)
        );
    }

    #[test]
    fn pavement_round_trip_drift_at_most_one_pixel() {
        let t = ResizeTransform::new(1014, 2011, 1024);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x0 = rng.gen_range(0..2011);
            let x1 = rng.gen_range(x0..2011);
            let y0 = rng.gen_range(0..1014);
            let y1 = rng.gen_range(y0..1014);
            let b = BoundingBox::raw(x0, y0, x1, y1);
            let back = map_box(map_box(b, &t, Direction::Forward), &t, Direction::Inverse);
            for (a, c) in b.to_array().iter().zip(back.to_array()) {
                assert!((a - c).abs() <= 1, "{b} -> {back}");
            }
        }
    }

    #[test]
    fn nearest_mask_stays_binary_and_aligned() {
        let m = BinaryMask::from_fn(4, 8, |r, c| r == 1 && c >= 2);
        let t = ResizeTransform::new(4, 8, 16);
        let up = mask_to_model(&m, &t);
        assert_eq!(up.dims(), (16, 16));
        assert_eq!(up.count_ones(), m.count_ones() * 4);
        assert!(up.get(2, 4) && up.get(3, 15) && !up.get(4, 4));
    }

    proptest! {
        #[test]
        fn output_is_square_and_aspect_preserved(h in 1usize..300, w in 1usize..300, target in 8usize..128) {
            let img = RgbImage::new(w as u32, h as u32);
            let (out, t) = resize_and_pad(&img, target);
            prop_assert_eq!((out.width() as usize, out.height() as usize), (target, target));
            prop_assert!(t.pad_right == 0 || t.pad_bottom == 0);
            if h == w { prop_assert_eq!((t.pad_right, t.pad_bottom), (0, 0)); }
            let src_ratio = w as f64 / h as f64;
            let dst_ratio = t.content_width() as f64 / t.content_height() as f64;
            // rounding one side by at most half a pixel
            let tol = if h >= w { 0.5 / t.content_height() as f64 } else { 0.5 / t.content_width() as f64 };
            prop_assert!((src_ratio.min(1.0 / src_ratio) - dst_ratio.min(1.0 / dst_ratio)).abs() <= tol * 2.0 + 1.0 / target as f64);
        }

        #[test]
        fn round_trip_drift_bounded(h in 1usize..2500, w in 1usize..2500, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, d in 0.0f64..1.0) {
            let t = ResizeTransform::new(h, w, 1024);
            let (x0, x1) = { let p = (a * (w - 1) as f64) as i64; let q = (b * (w - 1) as f64) as i64; (p.min(q), p.max(q)) };
            let (y0, y1) = { let p = (c * (h - 1) as f64) as i64; let q = (d * (h - 1) as f64) as i64; (p.min(q), p.max(q)) };
            let bx = BoundingBox::raw(x0, y0, x1, y1);
            let back = map_box(map_box(bx, &t, Direction::Forward), &t, Direction::Inverse);
            for (u, v) in bx.to_array().iter().zip(back.to_array()) {
                prop_assert!((u - v).abs() <= 1, "{} -> {}", bx, back);
            }
        }
    }
}
