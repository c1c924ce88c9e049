//! Geometric pre/post-processing for the erase pipeline: region expansion,
//! cropping, perspective and thin-plate-spline rectification, resize-pad to
//! the network input extent, and paste-back into the source image.

mod homography;
mod pipeline;
mod tps;

pub use homography::{solve_homography, warp_perspective, Homography};
pub use pipeline::{binarized_outcome_mask, erase_regions, CropEraser, EraseOutcome, IdentityEraser, PipelineOptions};
pub use tps::{fit_tps, warp_tps, TpsDirection, TpsWarp};

use crate::imagecore::{ImageBuffer, RegionKind, TextRegion};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("degenerate region (zero area)")]
    DegenerateRegion,
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Default expansion: 0.15 of the region's short side added per side.
pub const DEFAULT_EXPAND_FACTOR: f64 = 0.15;

/// Solve A·X = B for X by Gaussian elimination with partial pivoting.
/// `a` is n×n row-major and is destroyed; `b` is n×m row-major and is
/// replaced by the solution.
pub(crate) fn solve_linear(a: &mut [f64], n: usize, b: &mut [f64], m: usize) -> Result<(), GeomError> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n * m);
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-12 * scale {
            return Err(GeomError::SingularSystem(format!("pivot {col} below tolerance")));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            for k in 0..m {
                b.swap(col * m + k, pivot * m + k);
            }
        }
        let div = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / div;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            for k in 0..m {
                b[row * m + k] -= factor * b[col * m + k];
            }
        }
    }
    for col in (0..n).rev() {
        let div = a[col * n + col];
        for k in 0..m {
            let mut acc = b[col * m + k];
            for j in col + 1..n {
                acc -= a[col * n + j] * b[j * m + k];
            }
            b[col * m + k] = acc / div;
        }
    }
    Ok(())
}

/// Grow a region outward by `factor` × its short side per side, clipped to
/// the image bounds. The original region is contained in the result.
pub fn expand_region(
    region: &TextRegion,
    image_size: (usize, usize),
    factor: f64,
) -> Result<TextRegion, GeomError> {
    let (img_w, img_h) = image_size;
    if region.area() <= 0.0 {
        return Err(GeomError::DegenerateRegion);
    }
    if factor == 0.0 {
        return Ok(region.clone());
    }
    let expanded = match region.kind {
        RegionKind::AxisAligned => {
            let (x0, y0) = region.points[0];
            let (x1, y1) = region.points[1];
            let short = (x1 - x0).min(y1 - y0);
            let pad = factor * short;
            TextRegion::axis_aligned(x0 - pad, y0 - pad, x1 + pad, y1 + pad)
        }
        RegionKind::Quad => {
            let p = &region.points;
            let width = 0.5 * (dist(p[0], p[1]) + dist(p[3], p[2]));
            let height = 0.5 * (dist(p[0], p[3]) + dist(p[1], p[2]));
            let pad = factor * width.min(height);
            let cx = p.iter().map(|p| p.0).sum::<f64>() / 4.0;
            let cy = p.iter().map(|p| p.1).sum::<f64>() / 4.0;
            // Moving a rectangle's corners along the centroid diagonal by
            // pad·√2 shifts each side outward by exactly pad.
            let k = pad * std::f64::consts::SQRT_2;
            let pts: Vec<(f64, f64)> = p
                .iter()
                .map(|&(x, y)| {
                    let d = dist((x, y), (cx, cy)).max(1e-9);
                    (x + k * (x - cx) / d, y + k * (y - cy) / d)
                })
                .collect();
            TextRegion::quad([pts[0], pts[1], pts[2], pts[3]])
        }
        RegionKind::Polygon => {
            let n = region.points.len() / 2;
            let top = &region.points[..n];
            let bottom_rl = &region.points[n..];
            let mut heights = 0.0;
            for i in 0..n {
                heights += dist(top[i], bottom_rl[n - 1 - i]);
            }
            let height = heights / n as f64;
            let width = 0.5 * (poly_len(top) + poly_len(bottom_rl));
            let pad = factor * width.min(height);
            let mut pts = Vec::with_capacity(2 * n);
            // push each top point away from its bottom partner and vice versa
            for i in 0..n {
                let a = top[i];
                let b = bottom_rl[n - 1 - i];
                let d = dist(a, b).max(1e-9);
                let mut q = (a.0 + pad * (a.0 - b.0) / d, a.1 + pad * (a.1 - b.1) / d);
                if i == 0 || i == n - 1 {
                    let t = boundary_tangent(top, i);
                    q = (q.0 + pad * t.0, q.1 + pad * t.1);
                }
                pts.push(q);
            }
            for i in 0..n {
                let a = bottom_rl[i];
                let b = top[n - 1 - i];
                let d = dist(a, b).max(1e-9);
                let mut q = (a.0 + pad * (a.0 - b.0) / d, a.1 + pad * (a.1 - b.1) / d);
                if i == 0 || i == n - 1 {
                    let t = boundary_tangent(bottom_rl, i);
                    q = (q.0 + pad * t.0, q.1 + pad * t.1);
                }
                pts.push(q);
            }
            TextRegion::polygon(pts)
        }
    };
    Ok(expanded.clip(img_w, img_h))
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn poly_len(pts: &[(f64, f64)]) -> f64 {
    pts.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Outward unit tangent at an endpoint of an open boundary; zero elsewhere.
fn boundary_tangent(pts: &[(f64, f64)], i: usize) -> (f64, f64) {
    let n = pts.len();
    if n < 2 {
        return (0.0, 0.0);
    }
    let (a, b) = if i == 0 { (pts[1], pts[0]) } else { (pts[n - 2], pts[n - 1]) };
    if i != 0 && i != n - 1 {
        return (0.0, 0.0);
    }
    let d = dist(a, b).max(1e-9);
    ((b.0 - a.0) / d, (b.1 - a.1) / d)
}

/// What `resize_pad` needs to remember to restore a crop exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestoreInfo {
    /// Crop extent before resizing.
    pub orig_w: usize,
    pub orig_h: usize,
    /// Width of real content in the padded image (the rest is zero fill).
    pub content_w: usize,
}

/// Scale height to `target_h` preserving aspect ratio; zero-pad on the
/// right up to `target_w`, or squeeze the width down to it if the scaled
/// width overshoots.
pub fn resize_pad_to(
    img: &ImageBuffer,
    target_h: usize,
    target_w: usize,
) -> (ImageBuffer, RestoreInfo) {
    let scale = target_h as f64 / img.height() as f64;
    let scaled_w = ((img.width() as f64 * scale).round() as usize).max(1);
    let content_w = scaled_w.min(target_w);
    let resized = resize_bilinear(img, content_w, target_h);
    let info = RestoreInfo {
        orig_w: img.width(),
        orig_h: img.height(),
        content_w,
    };
    if content_w == target_w {
        return (resized, info);
    }
    let mut out = ImageBuffer::new(target_w, target_h);
    for y in 0..target_h {
        for x in 0..content_w {
            out.put(x, y, resized.get(x, y));
        }
    }
    (out, info)
}

/// Network-input normalization at the paper's fixed 128×640 extent.
pub fn resize_pad(img: &ImageBuffer) -> (ImageBuffer, RestoreInfo) {
    resize_pad_to(img, 128, 640)
}

/// Undo `resize_pad_to`: drop the zero padding and scale the content back
/// to the original crop extent.
pub fn restore_from_pad(img: &ImageBuffer, info: &RestoreInfo) -> ImageBuffer {
    let content = if info.content_w == img.width() {
        img.clone()
    } else {
        img.crop(0, 0, info.content_w, img.height())
    };
    resize_bilinear(&content, info.orig_w, info.orig_h)
}

/// Corner-aligned bilinear resize (identity when sizes match).
pub fn resize_bilinear(img: &ImageBuffer, out_w: usize, out_h: usize) -> ImageBuffer {
    if out_w == img.width() && out_h == img.height() {
        return img.clone();
    }
    let sx = if out_w > 1 {
        (img.width() - 1) as f64 / (out_w - 1) as f64
    } else {
        0.0
    };
    let sy = if out_h > 1 {
        (img.height() - 1) as f64 / (out_h - 1) as f64
    } else {
        0.0
    };
    ImageBuffer::from_fn(out_w, out_h, |x, y| {
        img.sample_bilinear(x as f64 * sx, y as f64 * sy)
    })
}

/// Integer pixel window of a crop inside the source canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropExtent {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl CropExtent {
    /// Clipped integer bbox of a region; `None` if it degenerates.
    pub fn around(region: &TextRegion, img_w: usize, img_h: usize) -> Option<CropExtent> {
        let (x0, y0, x1, y1) = region.bbox();
        let x0 = (x0.floor().max(0.0)) as usize;
        let y0 = (y0.floor().max(0.0)) as usize;
        let x1 = (x1.ceil().min(img_w as f64)) as usize;
        let y1 = (y1.ceil().min(img_h as f64)) as usize;
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(CropExtent {
            x0,
            y0,
            width: x1 - x0,
            height: y1 - y0,
        })
    }
}

/// Replace only the canvas pixels strictly inside `region` (the ORIGINAL,
/// unexpanded annotation) with the corresponding pixels of `overlay`, which
/// is aligned to `extent`. Everything else is untouched.
pub fn paste_back(
    canvas: &ImageBuffer,
    overlay: &ImageBuffer,
    region: &TextRegion,
    extent: &CropExtent,
) -> Result<ImageBuffer, GeomError> {
    if overlay.width() != extent.width || overlay.height() != extent.height {
        return Err(GeomError::ShapeMismatch(format!(
            "overlay {}x{} vs extent {}x{}",
            overlay.width(),
            overlay.height(),
            extent.width,
            extent.height
        )));
    }
    let mut out = canvas.clone();
    if region.area() <= 0.0 {
        return Ok(out);
    }
    for y in 0..extent.height {
        for x in 0..extent.width {
            let cx = (extent.x0 + x) as f64;
            let cy = (extent.y0 + y) as f64;
            if region.contains(cx + 0.5, cy + 0.5) {
                out.put(extent.x0 + x, extent.y0 + y, overlay.get(x, y));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::TextRegion;

    fn gradient_image(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| {
            [
                x as f64 / w as f64,
                y as f64 / h as f64,
                (x + y) as f64 / (w + h) as f64,
            ]
        })
    }

    #[test]
    fn expand_axis_box_matches_arithmetic() {
        // box (10,10)-(30,20) in 100x100, factor 0.2: short side 10, pad 2
        let r = TextRegion::axis_aligned(10.0, 10.0, 30.0, 20.0);
        let e = expand_region(&r, (100, 100), 0.2).unwrap();
        assert_eq!(e.points, vec![(8.0, 8.0), (32.0, 22.0)]);
    }

    #[test]
    fn expand_factor_zero_is_identity() {
        let r = TextRegion::axis_aligned(5.0, 5.0, 10.0, 9.0);
        assert_eq!(expand_region(&r, (50, 50), 0.0).unwrap(), r);
    }

    #[test]
    fn expand_clips_to_image_bounds() {
        let r = TextRegion::axis_aligned(0.0, 0.0, 20.0, 10.0);
        let e = expand_region(&r, (25, 25), 0.3).unwrap();
        let (x0, y0, x1, y1) = e.bbox();
        assert_eq!((x0, y0), (0.0, 0.0));
        assert_eq!(x1, 23.0);
        assert_eq!(y1, 13.0);
    }

    #[test]
    fn expand_zero_area_is_degenerate() {
        let r = TextRegion::axis_aligned(4.0, 4.0, 4.0, 9.0);
        assert!(matches!(expand_region(&r, (10, 10), 0.1), Err(GeomError::DegenerateRegion)));
    }

    #[test]
    fn expansion_contains_original_quad() {
        let q = TextRegion::quad([(10.0, 10.0), (40.0, 14.0), (38.0, 30.0), (9.0, 26.0)]);
        let e = expand_region(&q, (100, 100), 0.2).unwrap();
        for &(x, y) in &q.points {
            assert!(e.contains(x, y), "({x},{y}) escaped the expanded quad");
        }
    }

    #[test]
    fn resize_pad_scales_and_pads_to_the_right() {
        // 64x200 -> scale to 128x400, pad 240 zero columns
        let img = gradient_image(200, 64);
        let (out, info) = resize_pad(&img);
        assert_eq!((out.width(), out.height()), (640, 128));
        assert_eq!(info.content_w, 400);
        // padding region is zero
        for y in 0..128 {
            for x in 400..640 {
                assert_eq!(out.get(x, y), [0.0; 3]);
            }
        }
        // content region is not all zero
        assert!(out.get(399, 64)[0] > 0.5);
    }

    #[test]
    fn resize_pad_identity_extent() {
        let img = gradient_image(640, 128);
        let (out, info) = resize_pad(&img);
        assert_eq!(info.content_w, 640);
        assert_eq!(out, img);
    }

    #[test]
    fn resize_pad_squeezes_wide_input() {
        // 256x2560 -> 128x1280 exceeds 640, so width lands at 640
        let img = gradient_image(2560, 256);
        let (out, info) = resize_pad(&img);
        assert_eq!((out.width(), out.height()), (640, 128));
        assert_eq!(info.content_w, 640);
    }

    #[test]
    fn restore_from_pad_undoes_the_transform_closely() {
        let img = gradient_image(200, 64);
        let (padded, info) = resize_pad(&img);
        let back = restore_from_pad(&padded, &info);
        assert_eq!((back.width(), back.height()), (200, 64));
        assert!(img.max_abs_diff(&back) < 0.02, "err {}", img.max_abs_diff(&back));
    }

    #[test]
    fn paste_back_touches_only_inside_pixels() {
        let canvas = gradient_image(40, 30);
        let region = TextRegion::axis_aligned(10.0, 8.0, 25.0, 18.0);
        let extent = CropExtent::around(&region, 40, 30).unwrap();
        let overlay = ImageBuffer::from_fn(extent.width, extent.height, |_, _| [0.9, 0.1, 0.5]);
        let out = paste_back(&canvas, &overlay, &region, &extent).unwrap();
        for y in 0..30 {
            for x in 0..40 {
                let inside = region.contains(x as f64 + 0.5, y as f64 + 0.5);
                if inside {
                    assert_eq!(out.get(x, y), [0.9, 0.1, 0.5]);
                } else {
                    assert_eq!(out.get(x, y), canvas.get(x, y), "({x},{y}) changed");
                }
            }
        }
    }

    #[test]
    fn paste_back_identity_crop_is_identity() {
        let canvas = gradient_image(40, 30);
        let region = TextRegion::axis_aligned(5.0, 5.0, 20.0, 15.0);
        let extent = CropExtent::around(&region, 40, 30).unwrap();
        let overlay = canvas.crop(extent.x0, extent.y0, extent.width, extent.height);
        let out = paste_back(&canvas, &overlay, &region, &extent).unwrap();
        assert_eq!(out, canvas);
    }

    #[test]
    fn zero_area_region_pastes_nothing() {
        let canvas = gradient_image(20, 20);
        let region = TextRegion::axis_aligned(5.0, 5.0, 5.0, 15.0);
        let extent = CropExtent {
            x0: 5,
            y0: 5,
            width: 1,
            height: 10,
        };
        let overlay = ImageBuffer::new(1, 10);
        let out = paste_back(&canvas, &overlay, &region, &extent).unwrap();
        assert_eq!(out, canvas);
    }

    #[test]
    fn solve_linear_small_system() {
        // [2 1; 1 3] x = [3; 5] -> x = (4/5, 7/5)
        let mut a = vec![2.0, 1.0, 1.0, 3.0];
        let mut b = vec![3.0, 5.0];
        solve_linear(&mut a, 2, &mut b, 1).unwrap();
        assert!((b[0] - 0.8).abs() < 1e-12);
        assert!((b[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn solve_linear_detects_singularity() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(solve_linear(&mut a, 2, &mut b, 1).is_err());
    }
}
