//! The crop → rectify → erase → restore → paste-back pipeline.
//!
//! The network itself is injected through [`CropEraser`], so the geometry
//! can be exercised (and tested) with an identity stub, and the CLI can
//! plug in the real checkpointed model.

use super::homography::{solve_homography, warp_perspective};
use super::tps::{fit_tps, warp_tps, TpsDirection};
use super::{expand_region, paste_back, resize_pad_to, restore_from_pad, CropExtent};
use crate::imagecore::{binarize, ImageBuffer, RegionKind, StrokeMask, TextRegion, DEFAULT_TAU};

/// Erases text from one normalized crop. Implementations must accept crops
/// of exactly `input_size()` and return an image and predicted stroke mask
/// of the same extent.
pub trait CropEraser: Sync {
    fn input_size(&self) -> (usize, usize);
    fn erase(&self, crop: &ImageBuffer) -> Result<(ImageBuffer, StrokeMask), String>;
}

/// Pass-through eraser: returns the crop unchanged with an all-valid mask.
pub struct IdentityEraser {
    pub height: usize,
    pub width: usize,
}

impl IdentityEraser {
    pub fn network_sized() -> Self {
        IdentityEraser {
            height: 128,
            width: 640,
        }
    }
}

impl CropEraser for IdentityEraser {
    fn input_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn erase(&self, crop: &ImageBuffer) -> Result<(ImageBuffer, StrokeMask), String> {
        Ok((
            crop.clone(),
            StrokeMask::all_valid(crop.width(), crop.height()),
        ))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PipelineOptions {
    /// Box expansion per side as a fraction of the region's short side.
    pub expand_factor: f64,
    /// Process regions concurrently (results are still pasted in input
    /// order, so overlap resolution stays deterministic).
    pub parallel: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            expand_factor: super::DEFAULT_EXPAND_FACTOR,
            parallel: false,
        }
    }
}

pub struct EraseOutcome {
    pub image: ImageBuffer,
    /// Full-size composite stroke mask (1 = valid, 0 = predicted stroke).
    pub mask: StrokeMask,
    /// Regions that could not be processed: (index, reason).
    pub skipped: Vec<(usize, String)>,
}

struct RegionPatch {
    extent: CropExtent,
    overlay: ImageBuffer,
    /// Per-extent-pixel validity in [0,1], aligned with `overlay`.
    hole: Vec<f64>,
}

/// Run the full pipeline over every region of one image.
pub fn erase_regions(
    canvas: &ImageBuffer,
    regions: &[TextRegion],
    eraser: &dyn CropEraser,
    opts: &PipelineOptions,
) -> EraseOutcome {
    let patches: Vec<Result<RegionPatch, String>> = {
        #[cfg(feature = "parallel")]
        {
            if opts.parallel {
                use rayon::prelude::*;
                regions
                    .par_iter()
                    .map(|r| process_region(canvas, r, eraser, opts.expand_factor))
                    .collect()
            } else {
                regions
                    .iter()
                    .map(|r| process_region(canvas, r, eraser, opts.expand_factor))
                    .collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            regions
                .iter()
                .map(|r| process_region(canvas, r, eraser, opts.expand_factor))
                .collect()
        }
    };

    let mut image = canvas.clone();
    let mut mask = StrokeMask::all_valid(canvas.width(), canvas.height());
    let mut skipped = Vec::new();
    for (idx, (patch, region)) in patches.into_iter().zip(regions.iter()).enumerate() {
        match patch {
            Ok(p) => {
                match paste_back(&image, &p.overlay, region, &p.extent) {
                    Ok(updated) => image = updated,
                    Err(e) => {
                        skipped.push((idx, e.to_string()));
                        continue;
                    }
                }
                for y in 0..p.extent.height {
                    for x in 0..p.extent.width {
                        let cx = (p.extent.x0 + x) as f64 + 0.5;
                        let cy = (p.extent.y0 + y) as f64 + 0.5;
                        if region.contains(cx, cy) && p.hole[y * p.extent.width + x] < DEFAULT_TAU {
                            mask.set(p.extent.x0 + x, p.extent.y0 + y, 0.0);
                        }
                    }
                }
            }
            Err(reason) => skipped.push((idx, reason)),
        }
    }
    EraseOutcome {
        image,
        mask,
        skipped,
    }
}

fn mask_to_gray(mask: &StrokeMask) -> ImageBuffer {
    ImageBuffer::from_fn(mask.width(), mask.height(), |x, y| {
        let v = mask.get(x, y);
        [v, v, v]
    })
}

fn process_region(
    canvas: &ImageBuffer,
    region: &TextRegion,
    eraser: &dyn CropEraser,
    expand_factor: f64,
) -> Result<RegionPatch, String> {
    let (img_w, img_h) = (canvas.width(), canvas.height());
    let clipped = region.clip(img_w, img_h);
    if clipped.area() <= 0.0 {
        return Err("region has no area inside the image".into());
    }
    let expanded = expand_region(&clipped, (img_w, img_h), expand_factor).map_err(|e| e.to_string())?;
    let extent = CropExtent::around(&expanded, img_w, img_h)
        .ok_or_else(|| "expanded region degenerates to an empty window".to_string())?;
    let (net_h, net_w) = eraser.input_size();

    // A 4-point polygon is just a quad written in boundary order.
    let kind = match (region.kind, expanded.points.len()) {
        (RegionKind::Polygon, 4) => RegionKind::Quad,
        (k, _) => k,
    };

    match kind {
        RegionKind::AxisAligned => {
            let crop = canvas.crop(extent.x0, extent.y0, extent.width, extent.height);
            let (net_in, restore) = resize_pad_to(&crop, net_h, net_w);
            let (erased, pred) = eraser.erase(&net_in)?;
            let overlay = restore_from_pad(&erased, &restore);
            let hole_img = restore_from_pad(&mask_to_gray(&pred), &restore);
            let hole = (0..extent.width * extent.height)
                .map(|i| hole_img.get(i % extent.width, i / extent.width)[0])
                .collect();
            Ok(RegionPatch {
                extent,
                overlay,
                hole,
            })
        }
        RegionKind::Quad => {
            let p = &expanded.points;
            let corners = [p[0], p[1], p[2], p[3]];
            let top = hyp(p[0], p[1]);
            let bottom = hyp(p[3], p[2]);
            let left = hyp(p[0], p[3]);
            let right = hyp(p[1], p[2]);
            let rw = (0.5 * (top + bottom)).round().max(2.0) as usize;
            let rh = (0.5 * (left + right)).round().max(2.0) as usize;
            let rect = [
                (0.0, 0.0),
                (rw as f64 - 1.0, 0.0),
                (rw as f64 - 1.0, rh as f64 - 1.0),
                (0.0, rh as f64 - 1.0),
            ];
            let h_fwd = solve_homography(&corners, &rect).map_err(|e| e.to_string())?;
            let rectified = warp_perspective(canvas, &h_fwd, (rh, rw)).map_err(|e| e.to_string())?;
            let (net_in, restore) = resize_pad_to(&rectified, net_h, net_w);
            let (erased, pred) = eraser.erase(&net_in)?;
            let rect_back = restore_from_pad(&erased, &restore);
            let rect_hole = restore_from_pad(&mask_to_gray(&pred), &restore);
            // map each extent pixel through the forward homography into the
            // rectified image
            let mut overlay = ImageBuffer::new(extent.width, extent.height);
            let mut hole = vec![1.0; extent.width * extent.height];
            for y in 0..extent.height {
                for x in 0..extent.width {
                    let (u, v) = h_fwd.apply((extent.x0 + x) as f64, (extent.y0 + y) as f64);
                    overlay.put(x, y, rect_back.sample_bilinear(u, v));
                    hole[y * extent.width + x] = rect_hole.sample_bilinear(u, v)[0];
                }
            }
            Ok(RegionPatch {
                extent,
                overlay,
                hole,
            })
        }
        RegionKind::Polygon => {
            let pts = &expanded.points;
            let n = pts.len() / 2;
            let top = &pts[..n];
            let bottom_rl = &pts[n..];
            let top_len = arc_lengths(top);
            let bottom_lr: Vec<(f64, f64)> = bottom_rl.iter().rev().cloned().collect();
            let bot_len = arc_lengths(&bottom_lr);
            let mut heights = 0.0;
            for i in 0..n {
                heights += hyp(top[i], bottom_lr[i]);
            }
            let rw = (0.5 * (top_len[n - 1] + bot_len[n - 1])).round().max(2.0) as usize;
            let rh = (heights / n as f64).round().max(2.0) as usize;
            // paired control points along averaged arc-length fractions
            let mut rect_pts = Vec::with_capacity(2 * n);
            let mut fracs = Vec::with_capacity(n);
            for i in 0..n {
                let f = 0.5 * (top_len[i] / top_len[n - 1] + bot_len[i] / bot_len[n - 1]);
                fracs.push(f);
                rect_pts.push((f * (rw as f64 - 1.0), 0.0));
            }
            for i in (0..n).rev() {
                rect_pts.push((fracs[i] * (rw as f64 - 1.0), rh as f64 - 1.0));
            }
            let rect_to_canvas = fit_tps(&rect_pts, pts).map_err(|e| e.to_string())?;
            let rectified =
                warp_tps(canvas, &rect_to_canvas, (rh, rw), TpsDirection::Inverse).map_err(|e| e.to_string())?;
            let (net_in, restore) = resize_pad_to(&rectified, net_h, net_w);
            let (erased, pred) = eraser.erase(&net_in)?;
            let rect_back = restore_from_pad(&erased, &restore);
            let rect_hole = restore_from_pad(&mask_to_gray(&pred), &restore);
            let canvas_to_rect = fit_tps(pts, &rect_pts).map_err(|e| e.to_string())?;
            let mut overlay = ImageBuffer::new(extent.width, extent.height);
            let mut hole = vec![1.0; extent.width * extent.height];
            for y in 0..extent.height {
                for x in 0..extent.width {
                    let (u, v) = canvas_to_rect.apply((extent.x0 + x) as f64, (extent.y0 + y) as f64);
                    overlay.put(x, y, rect_back.sample_bilinear(u, v));
                    hole[y * extent.width + x] = rect_hole.sample_bilinear(u, v)[0];
                }
            }
            Ok(RegionPatch {
                extent,
                overlay,
                hole,
            })
        }
    }
}

fn hyp(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn arc_lengths(pts: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in pts.windows(2) {
        acc += hyp(w[0], w[1]);
        out.push(acc);
    }
    out
}

/// Composite an outcome's predicted stroke mask over a binarized base, for
/// writing the optional full-size mask artifact.
pub fn binarized_outcome_mask(outcome: &EraseOutcome) -> StrokeMask {
    binarize(&outcome.mask, DEFAULT_TAU)
}
