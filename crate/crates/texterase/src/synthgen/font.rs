//! Text rasterization to alpha maps.
//!
//! Two font sources: real TrueType/OpenType files through ab_glyph, and a
//! built-in monospace stroke font (`builtin:mono`) that keeps the engine
//! and its tests independent of any system font installation.

use ab_glyph::{Font, FontVec, ScaleFont};

use super::SynthError;
use crate::imagecore::TextRegion;

/// Rasterized text: an alpha map in [0,1] plus the tight bounding box of
/// its nonzero support.
#[derive(Clone, Debug)]
pub struct TextLayer {
    pub width: usize,
    pub height: usize,
    pub alpha: Vec<f64>,
    pub tight_bbox: TextRegion,
}

impl TextLayer {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }
}

pub enum FontSource {
    BuiltinMono,
    File(Box<FontVec>),
}

/// Load a font by path; `builtin:mono` selects the embedded stroke font.
pub fn load_font(path: &str) -> Result<FontSource, SynthError> {
    if path == "builtin:mono" {
        return Ok(FontSource::BuiltinMono);
    }
    let bytes = std::fs::read(path)
        .map_err(|e| SynthError::FontLoadError(format!("{path}: {e}")))?;
    let font = FontVec::try_from_vec(bytes)
        .map_err(|e| SynthError::FontLoadError(format!("{path}: {e}")))?;
    Ok(FontSource::File(Box::new(font)))
}

/// Rasterize one line of text at the given pixel height.
pub fn render_text_layer(
    text: &str,
    font: &FontSource,
    height_px: usize,
) -> Result<TextLayer, SynthError> {
    if text.is_empty() {
        return Err(SynthError::EmptyText);
    }
    let layer = match font {
        FontSource::BuiltinMono => render_builtin(text, height_px),
        FontSource::File(f) => render_ttf(text, f, height_px),
    };
    Ok(layer)
}

fn finish_layer(width: usize, height: usize, alpha: Vec<f64>) -> TextLayer {
    let mut x0 = width;
    let mut y0 = height;
    let mut x1 = 0usize;
    let mut y1 = 0usize;
    for y in 0..height {
        for x in 0..width {
            if alpha[y * width + x] > 0.0 {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x0 >= x1 {
        // fully blank (e.g. all spaces): degenerate 1px box at origin
        x0 = 0;
        y0 = 0;
        x1 = 1;
        y1 = 1;
    }
    TextLayer {
        width,
        height,
        alpha,
        tight_bbox: TextRegion::axis_aligned(x0 as f64, y0 as f64, x1 as f64, y1 as f64),
    }
}

fn render_ttf(text: &str, font: &FontVec, height_px: usize) -> TextLayer {
    let scale = ab_glyph::PxScale::from(height_px as f32);
    let scaled = font.as_scaled(scale);
    let ascent = scaled.ascent();
    let mut caret = 0.0f32;
    let mut glyphs = Vec::new();
    let mut prev: Option<ab_glyph::GlyphId> = None;
    for ch in text.chars() {
        let id = scaled.glyph_id(ch);
        if let Some(p) = prev {
            caret += scaled.kern(p, id);
        }
        glyphs.push((id, caret));
        caret += scaled.h_advance(id);
        prev = Some(id);
    }
    let width = (caret.ceil() as usize).max(1);
    let height = (scaled.height().ceil() as usize).max(height_px);
    let mut alpha = vec![0.0f64; width * height];
    for (id, x0) in glyphs {
        let glyph = id.with_scale_and_position(scale, ab_glyph::point(x0, ascent));
        if let Some(outlined) = font.outline_glyph(glyph) {
            let bounds = outlined.px_bounds();
            outlined.draw(|gx, gy, c| {
                let px = bounds.min.x as i64 + gx as i64;
                let py = bounds.min.y as i64 + gy as i64;
                if px >= 0 && py >= 0 && (px as usize) < width && (py as usize) < height {
                    let slot = &mut alpha[py as usize * width + px as usize];
                    *slot = slot.max(c as f64).min(1.0);
                }
            });
        }
    }
    finish_layer(width, height, alpha)
}

// Built-in stroke font: segments on a 2×4 grid, y axis pointing down.
type Seg = (f32, f32, f32, f32);

fn glyph_segments(ch: char) -> &'static [Seg] {
    match ch.to_ascii_uppercase() {
        'A' => &[(0.0, 4.0, 1.0, 0.0), (1.0, 0.0, 2.0, 4.0), (0.5, 2.5, 1.5, 2.5)],
        'B' => &[(0.0, 0.0, 0.0, 4.0), (0.0, 0.0, 2.0, 1.0), (2.0, 1.0, 0.0, 2.0), (0.0, 2.0, 2.0, 3.0), (2.0, 3.0, 0.0, 4.0)],
        'C' => &[(2.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 4.0), (0.0, 4.0, 2.0, 4.0)],
        'D' => &[(0.0, 0.0, 0.0, 4.0), (0.0, 0.0, 2.0, 1.0), (2.0, 1.0, 2.0, 3.0), (2.0, 3.0, 0.0, 4.0)],
        'E' => &[(2.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 4.0), (0.0, 4.0, 2.0, 4.0), (0.0, 2.0, 1.5, 2.0)],
        'F' => &[(2.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 4.0), (0.0, 2.0, 1.5, 2.0)],
        'G' => &[(2.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 4.0), (0.0, 4.0, 2.0, 4.0), (2.0, 4.0, 2.0, 2.0), (2.0, 2.0, 1.0, 2.0)],
        'H' => &[(0.0, 0.0, 0.0, 4.0), (2.0, 0.0, 2.0, 4.0), (0.0, 2.0, 2.0, 2.0)],
        'I' => &[(1.0, 0.0, 1.0, 4.0), (0.5, 0.0, 1.5, 0.0), (0.5, 4.0, 1.5, 4.0)],
        'J' => &[(2.0, 0.0, 2.0, 3.0), (2.0, 3.0, 1.0, 4.0), (1.0, 4.0, 0.0, 3.0)],
        'K' => &[(0.0, 0.0, 0.0, 4.0), (2.0, 0.0, 0.0, 2.0), (0.0, 2.0, 2.0, 4.0)],
        'L' => &[(0.0, 0.0, 0.0, 4.0), (0.0, 4.0, 2.0, 4.0)],
        'M' => &[(0.0, 4.0, 0.0, 0.0), (0.0, 0.0, 1.0, 2.0), (1.0, 2.0, 2.0, 0.0), (2.0, 0.0, 2.0, 4.0)],
        'N' => &[(0.0, 4.0, 0.0, 0.0), (0.0, 0.0, 2.0, 4.0), (2.0, 4.0, 2.0, 0.0)],
        'O' => &[(0.0, 0.0, 2.0, 0.0), (2.0, 0.0, 2.0, 4.0), (2.0, 4.0, 0.0, 4.0), (0.0, 4.0, 0.0, 0.0)],
        'P' => &[(0.0, 4.0, 0.0, 0.0), (0.0, 0.0, 2.0, 0.0), (2.0, 0.0, 2.0, 2.0), (2.0, 2.0, 0.0, 2.0)],
        'Q' => &[(0.0, 0.0, 2.0, 0.0), (2.0, 0.0, 2.0, 4.0), (2.0, 4.0, 0.0, 4.0), (0.0, 4.0, 0.0, 0.0), (1.0, 3.0, 2.0, 4.0)],
        'R' => &[(0.0, 4.0, 0.0, 0.0), (0.0, 0.0, 2.0, 0.0), (2.0, 0.0, 2.0, 2.0), (2.0, 2.0, 0.0, 2.0), (0.7, 2.0, 2.0, 4.0)],
        'S' => &[(2.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 2.0), (0.0, 2.0, 2.0, 2.0), (2.0, 2.0, 2.0, 4.0), (2.0, 4.0, 0.0, 4.0)],
        'T' => &[(0.0, 0.0, 2.0, 0.0), (1.0, 0.0, 1.0, 4.0)],
        'U' => &[(0.0, 0.0, 0.0, 4.0), (0.0, 4.0, 2.0, 4.0), (2.0, 4.0, 2.0, 0.0)],
        'V' => &[(0.0, 0.0, 1.0, 4.0), (1.0, 4.0, 2.0, 0.0)],
        'W' => &[(0.0, 0.0, 0.5, 4.0), (0.5, 4.0, 1.0, 1.5), (1.0, 1.5, 1.5, 4.0), (1.5, 4.0, 2.0, 0.0)],
        'X' => &[(0.0, 0.0, 2.0, 4.0), (2.0, 0.0, 0.0, 4.0)],
        'Y' => &[(0.0, 0.0, 1.0, 2.0), (2.0, 0.0, 1.0, 2.0), (1.0, 2.0, 1.0, 4.0)],
        'Z' => &[(0.0, 0.0, 2.0, 0.0), (2.0, 0.0, 0.0, 4.0), (0.0, 4.0, 2.0, 4.0)],
        '0' => &[(0.0, 0.0, 2.0, 0.0), (2.0, 0.0, 2.0, 4.0), (2.0, 4.0, 0.0, 4.0), (0.0, 4.0, 0.0, 0.0), (0.0, 3.0, 2.0, 1.0)],
        '1' => &[(0.5, 1.0, 1.0, 0.0), (1.0, 0.0, 1.0, 4.0), (0.5, 4.0, 1.5, 4.0)],
        '2' => &[(0.0, 0.0, 2.0, 0.0), (2.0, 0.0, 2.0, 2.0), (2.0, 2.0, 0.0, 4.0), (0.0, 4.0, 2.0, 4.0)],
        '3' => &[(0.0, 0.0, 2.0, 0.0), (2.0, 0.0, 2.0, 4.0), (2.0, 4.0, 0.0, 4.0), (0.5, 2.0, 2.0, 2.0)],
        '4' => &[(1.5, 0.0, 0.0, 2.5), (0.0, 2.5, 2.0, 2.5), (1.5, 0.0, 1.5, 4.0)],
        '5' => &[(2.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 2.0), (0.0, 2.0, 2.0, 2.2), (2.0, 2.2, 2.0, 4.0), (2.0, 4.0, 0.0, 4.0)],
        '6' => &[(2.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 4.0), (0.0, 4.0, 2.0, 4.0), (2.0, 4.0, 2.0, 2.0), (2.0, 2.0, 0.0, 2.0)],
        '7' => &[(0.0, 0.0, 2.0, 0.0), (2.0, 0.0, 0.7, 4.0)],
        '8' => &[(0.0, 0.0, 2.0, 0.0), (2.0, 0.0, 2.0, 4.0), (2.0, 4.0, 0.0, 4.0), (0.0, 4.0, 0.0, 0.0), (0.0, 2.0, 2.0, 2.0)],
        '9' => &[(2.0, 2.0, 0.0, 2.0), (0.0, 2.0, 0.0, 0.0), (0.0, 0.0, 2.0, 0.0), (2.0, 0.0, 2.0, 4.0), (2.0, 4.0, 0.0, 4.0)],
        '.' => &[(1.0, 3.7, 1.0, 4.0)],
        ',' => &[(1.1, 3.6, 0.9, 4.3)],
        '-' => &[(0.4, 2.0, 1.6, 2.0)],
        '\'' => &[(1.0, 0.0, 1.0, 0.7)],
        '!' => &[(1.0, 0.0, 1.0, 2.8), (1.0, 3.7, 1.0, 4.0)],
        ':' => &[(1.0, 1.0, 1.0, 1.3), (1.0, 3.0, 1.0, 3.3)],
        ' ' => &[],
        // unknown characters render as a box, like missing-glyph tofu
        _ => &[(0.2, 0.2, 1.8, 0.2), (1.8, 0.2, 1.8, 3.8), (1.8, 3.8, 0.2, 3.8), (0.2, 3.8, 0.2, 0.2)],
    }
}

fn dist_to_segment(px: f64, py: f64, seg: &Seg) -> f64 {
    let (x1, y1, x2, y2) = (seg.0 as f64, seg.1 as f64, seg.2 as f64, seg.3 as f64);
    let (dx, dy) = (x2 - x1, y2 - y1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - x1) * dx + (py - y1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (x1 + t * dx, y1 + t * dy);
    (px - cx).hypot(py - cy)
}

fn render_builtin(text: &str, height_px: usize) -> TextLayer {
    let h = height_px.max(6);
    let cell_w = ((h as f64) * 0.62).round() as usize;
    let pad_x = (cell_w as f64 * 0.14).max(1.0);
    let pad_y = (h as f64 * 0.12).max(1.0);
    let gx = (cell_w as f64 - 2.0 * pad_x) / 2.0;
    let gy = (h as f64 - 2.0 * pad_y) / 4.0;
    let stroke = (h as f64 / 9.0).max(1.2);
    let chars: Vec<char> = text.chars().collect();
    let width = (cell_w * chars.len()).max(1);
    let mut alpha = vec![0.0f64; width * h];
    for (ci, &ch) in chars.iter().enumerate() {
        let segs = glyph_segments(ch);
        if segs.is_empty() {
            continue;
        }
        let lower = ch.is_ascii_lowercase();
        let (scale, y_off) = if lower { (0.74, 4.0 * gy * 0.26) } else { (1.0, 0.0) };
        let x0 = ci * cell_w;
        for y in 0..h {
            for x in 0..cell_w {
                // pixel center in glyph grid coordinates
                let ux = (x as f64 + 0.5 - pad_x) / (gx * scale);
                let uy = (y as f64 + 0.5 - pad_y - y_off) / (gy * scale);
                let mut d = f64::INFINITY;
                for seg in segs {
                    d = d.min(dist_to_segment(ux, uy, seg));
                }
                // distance is in grid units; convert to pixels
                let d_px = d * gx.min(gy) * scale;
                let cov = (0.5 + (stroke * 0.5 - d_px)).clamp(0.0, 1.0);
                if cov > 0.0 {
                    let slot = &mut alpha[y * width + x0 + x];
                    *slot = slot.max(cov);
                }
            }
        }
    }
    finish_layer(width, h, alpha)
}
