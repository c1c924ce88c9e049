//! Synthetic scene-text engine: renders text onto text-free backgrounds
//! with blur/shadow/3D/shift effects, composes it either directly or by
//! Poisson blending, degrades through JPEG, and emits (input, ground truth,
//! dilated stroke mask) training triplets.
//!
//! Generation is a pure function of (config, index): every sample draws all
//! of its randomness from an RNG seeded with hash(config.seed, index), so
//! datasets regenerate byte-identically and indices can run in parallel.

mod font;
mod poisson;

pub use font::{load_font, render_text_layer, FontSource, TextLayer};
pub use poisson::{laplacian_residual, poisson_blend, BlendRegion};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{
    jpeg_roundtrip, load_image, save_image, save_mask, ImageBuffer, ImageError, SaveFormat,
    StrokeMask,
};
use texterase_tensor::rng::{mix, Rng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no fonts configured")]
    NoFonts,
    #[error("no backgrounds configured")]
    NoBackgrounds,
    #[error("font failed to load: {0}")]
    FontLoadError(String),
    #[error("text is empty")]
    EmptyText,
    #[error("blend region touches the image border")]
    RegionOutOfBounds,
    #[error("poisson solver did not converge (residual {0:.2e})")]
    SolverNotConverged(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShadowConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Probability of drawing a shadow at all.
    #[serde(default = "ShadowConfig::default_probability")]
    pub probability: f64,
    /// Offset magnitude per axis, pixels.
    #[serde(default = "ShadowConfig::default_offset")]
    pub offset_range: (f64, f64),
    #[serde(default = "ShadowConfig::default_opacity")]
    pub opacity_range: (f64, f64),
    #[serde(default = "ShadowConfig::default_blur")]
    pub blur_range: (f64, f64),
}

impl ShadowConfig {
    fn default_probability() -> f64 {
        0.5
    }
    fn default_offset() -> (f64, f64) {
        (2.0, 8.0)
    }
    fn default_opacity() -> (f64, f64) {
        (0.3, 0.8)
    }
    fn default_blur() -> (f64, f64) {
        (0.5, 2.0)
    }
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig {
            enabled: true,
            probability: Self::default_probability(),
            offset_range: Self::default_offset(),
            opacity_range: Self::default_opacity(),
            blur_range: Self::default_blur(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Font files, or `builtin:mono` for the embedded stroke font.
    pub fonts: Vec<String>,
    /// Text-free background images.
    pub backgrounds: Vec<PathBuf>,
    #[serde(default = "SynthConfig::default_direct_prob")]
    pub direct_compose_probability: f64,
    /// Opacity of directly composed text (sub-unity keeps some background
    /// visible behind the strokes).
    #[serde(default = "SynthConfig::default_direct_opacity")]
    pub direct_opacity_range: (f64, f64),
    #[serde(default = "SynthConfig::default_blur_sigma")]
    pub blur_sigma_range: (f64, f64),
    #[serde(default)]
    pub shadow: ShadowConfig,
    #[serde(default = "default_true")]
    pub border3d_enabled: bool,
    #[serde(default = "SynthConfig::default_border3d_prob")]
    pub border3d_probability: f64,
    /// Max text shift per axis, pixels.
    #[serde(default = "SynthConfig::default_shift")]
    pub shift_range: f64,
    #[serde(default = "default_true")]
    pub jpeg_enabled: bool,
    #[serde(default = "SynthConfig::default_jpeg_quality")]
    pub jpeg_quality_range: (u8, u8),
    #[serde(default = "SynthConfig::default_dilation")]
    pub mask_dilation_radius: usize,
    #[serde(default = "SynthConfig::default_text_height")]
    pub text_height_range: (usize, usize),
    #[serde(default = "SynthConfig::default_margin")]
    pub margin_range: (usize, usize),
    /// Optional newline-separated corpus; random alphanumeric words otherwise.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    fn default_direct_prob() -> f64 {
        0.5
    }
    fn default_direct_opacity() -> (f64, f64) {
        (0.7, 1.0)
    }
    fn default_blur_sigma() -> (f64, f64) {
        (0.0, 2.0)
    }
    fn default_border3d_prob() -> f64 {
        0.3
    }
    fn default_shift() -> f64 {
        3.0
    }
    fn default_jpeg_quality() -> (u8, u8) {
        (40, 95)
    }
    fn default_dilation() -> usize {
        2
    }
    fn default_text_height() -> (usize, usize) {
        (20, 56)
    }
    fn default_margin() -> (usize, usize) {
        (4, 16)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.fonts.is_empty() {
            return Err(SynthError::NoFonts);
        }
        if self.backgrounds.is_empty() {
            return Err(SynthError::NoBackgrounds);
        }
        assert!(
            (0.0..=1.0).contains(&self.direct_compose_probability),
            "direct_compose_probability outside [0,1]"
        );
        assert!(
            self.jpeg_quality_range.0 >= 1 && self.jpeg_quality_range.1 <= 100,
            "jpeg quality range outside [1,100]"
        );
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            fonts: vec!["builtin:mono".into()],
            backgrounds: Vec::new(),
            direct_compose_probability: Self::default_direct_prob(),
            direct_opacity_range: Self::default_direct_opacity(),
            blur_sigma_range: Self::default_blur_sigma(),
            shadow: ShadowConfig::default(),
            border3d_enabled: true,
            border3d_probability: Self::default_border3d_prob(),
            shift_range: Self::default_shift(),
            jpeg_enabled: true,
            jpeg_quality_range: Self::default_jpeg_quality(),
            mask_dilation_radius: Self::default_dilation(),
            text_height_range: Self::default_text_height(),
            margin_range: Self::default_margin(),
            corpus: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionMode {
    Poisson,
    Direct,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectsMeta {
    pub blur_sigma: f64,
    pub shift: (f64, f64),
    pub shadow: Option<(f64, f64, f64, f64)>,
    /// (dx, dy, stamps)
    pub border3d: Option<(i32, i32, u32)>,
    pub opacity: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub mode: CompositionMode,
    pub font: String,
    pub text: String,
    pub effects: EffectsMeta,
    pub jpeg_quality: Option<u8>,
    /// Max 5-point-Laplacian mismatch of the blend, measured by the
    /// residual oracle; absent for directly composed samples.
    pub poisson_residual: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SynthSample {
    pub input: ImageBuffer,
    pub ground_truth: ImageBuffer,
    pub mask: StrokeMask,
    pub meta: SampleMeta,
}

/// Colored, effect-augmented text layer sharing the sample's canvas extent.
pub struct EffectLayer {
    pub width: usize,
    pub height: usize,
    /// Straight (non-premultiplied) color.
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    pub meta: EffectsMeta,
}

fn gaussian_blur_plane(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 1e-3 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i * i) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let mut tmp = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = x + ki as isize - radius;
                if sx >= 0 && sx < w as isize {
                    acc += k * plane[y as usize * w + sx as usize];
                }
            }
            tmp[y as usize * w + x as usize] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = y + ki as isize - radius;
                if sy >= 0 && sy < h as isize {
                    acc += k * tmp[sy as usize * w + x as usize];
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

fn translate_plane(plane: &[f64], w: usize, h: usize, dx: f64, dy: f64) -> Vec<f64> {
    if dx == 0.0 && dy == 0.0 {
        return plane.to_vec();
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 - dx;
            let sy = y as f64 - dy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let (fx, fy) = (sx - x0, sy - y0);
            let mut acc = 0.0;
            for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let (px, py) = (x0 + ox, y0 + oy);
                    if px >= 0.0 && py >= 0.0 && px < w as f64 && py < h as f64 {
                        acc += wy * wx * plane[py as usize * w + px as usize];
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Composite (premultiplied) `top` over `bottom`, in place on `bottom`.
fn over(bottom: &mut (Vec<[f64; 3]>, Vec<f64>), top_rgb: [f64; 3], top_alpha: &[f64]) {
    for ((rgb, ba), &ta) in bottom.0.iter_mut().zip(bottom.1.iter_mut()).zip(top_alpha) {
        let a = ta.clamp(0.0, 1.0);
        if a == 0.0 {
            continue;
        }
        for (dst, &top) in rgb.iter_mut().zip(top_rgb.iter()) {
            *dst = top * a + (1.0 - a) * *dst;
        }
        *ba = a + (1.0 - a) * *ba;
    }
}

/// Apply shift, shadow, 3D border, and defocus blur to a canvas-sized glyph
/// alpha map. The returned alpha is the union support of every effect.
pub fn apply_effects(
    glyph_alpha: &[f64],
    width: usize,
    height: usize,
    color: [f64; 3],
    cfg: &SynthConfig,
    rng: &mut Rng,
) -> EffectLayer {
    let shift = if cfg.shift_range > 0.0 {
        (
            rng.range_f64(-cfg.shift_range, cfg.shift_range),
            rng.range_f64(-cfg.shift_range, cfg.shift_range),
        )
    } else {
        (0.0, 0.0)
    };
    let base = translate_plane(glyph_alpha, width, height, shift.0, shift.1);

    // premultiplied accumulation buffer
    let mut accum = (vec![[0.0; 3]; width * height], vec![0.0; width * height]);

    let shadow_meta = if cfg.shadow.enabled && rng.chance(cfg.shadow.probability) {
        let mag = rng.range_f64(cfg.shadow.offset_range.0, cfg.shadow.offset_range.1);
        let angle = rng.range_f64(0.0, std::f64::consts::TAU);
        let (dx, dy) = (mag * angle.cos(), mag * angle.sin());
        let opacity = rng.range_f64(cfg.shadow.opacity_range.0, cfg.shadow.opacity_range.1);
        let blur = rng.range_f64(cfg.shadow.blur_range.0, cfg.shadow.blur_range.1);
        let shadow = translate_plane(&base, width, height, dx, dy);
        let shadow = gaussian_blur_plane(&shadow, width, height, blur);
        let shadow: Vec<f64> = shadow.iter().map(|&a| a * opacity).collect();
        over(&mut accum, [0.0; 3], &shadow);
        Some((dx, dy, opacity, blur))
    } else {
        None
    };

    let border_meta = if cfg.border3d_enabled && rng.chance(cfg.border3d_probability) {
        let dirs = [(1, 1), (1, 0), (0, 1), (-1, 1), (1, -1), (-1, 0), (0, -1), (-1, -1)];
        let (dx, dy) = *rng.pick(&dirs);
        let stamps = rng.range_u32(1, 4);
        let dark = [color[0] * 0.35, color[1] * 0.35, color[2] * 0.35];
        for i in (1..=stamps).rev() {
            let stamped = translate_plane(&base, width, height, (dx * i as i32) as f64, (dy * i as i32) as f64);
            over(&mut accum, dark, &stamped);
        }
        Some((dx, dy, stamps))
    } else {
        None
    };

    over(&mut accum, color, &base);

    let sigma = rng.range_f64(cfg.blur_sigma_range.0, cfg.blur_sigma_range.1);
    let (mut rgb_p, mut alpha) = accum;
    if sigma > 1e-3 {
        for c in 0..3 {
            let plane: Vec<f64> = rgb_p.iter().map(|p| p[c]).collect();
            let blurred = gaussian_blur_plane(&plane, width, height, sigma);
            for (p, v) in rgb_p.iter_mut().zip(blurred) {
                p[c] = v;
            }
        }
        alpha = gaussian_blur_plane(&alpha, width, height, sigma);
    }

    // un-premultiply for the straight-color interface
    let rgb = rgb_p
        .iter()
        .zip(alpha.iter())
        .map(|(p, &a)| {
            if a > 1e-9 {
                [p[0] / a, p[1] / a, p[2] / a]
            } else {
                color
            }
        })
        .collect();
    EffectLayer {
        width,
        height,
        rgb,
        alpha,
        meta: EffectsMeta {
            blur_sigma: sigma,
            shift,
            shadow: shadow_meta,
            border3d: border_meta,
            opacity: 1.0,
        },
    }
}

/// out = alpha·fg + (1−alpha)·background, per pixel and channel.
pub fn direct_compose(
    background: &ImageBuffer,
    fg: &ImageBuffer,
    alpha: &[f64],
) -> Result<ImageBuffer, SynthError> {
    let (w, h) = (background.width(), background.height());
    if fg.width() != w || fg.height() != h || alpha.len() != w * h {
        return Err(SynthError::ShapeMismatch(format!(
            "background {}x{}, fg {}x{}, alpha {}",
            w,
            h,
            fg.width(),
            fg.height(),
            alpha.len()
        )));
    }
    let mut out = background.clone();
    for y in 0..h {
        for x in 0..w {
            let a = alpha[y * w + x].clamp(0.0, 1.0);
            if a == 0.0 {
                continue;
            }
            let b = background.get(x, y);
            let f = fg.get(x, y);
            out.put(
                x,
                y,
                [
                    a * f[0] + (1.0 - a) * b[0],
                    a * f[1] + (1.0 - a) * b[1],
                    a * f[2] + (1.0 - a) * b[2],
                ],
            );
        }
    }
    Ok(out)
}

/// The composition mode a given sample index will use. This is the first
/// draw `generate_sample` makes, exposed so the mode distribution can be
/// checked cheaply.
pub fn composition_mode(config: &SynthConfig, index: u64) -> CompositionMode {
    let mut rng = Rng::seed_from(mix(config.seed, index));
    draw_mode(config, &mut rng)
}

fn draw_mode(config: &SynthConfig, rng: &mut Rng) -> CompositionMode {
    if rng.chance(config.direct_compose_probability) {
        CompositionMode::Direct
    } else {
        CompositionMode::Poisson
    }
}

fn luma(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn random_word(rng: &mut Rng) -> String {
    const CHARS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    let len = rng.range_usize(1, 12);
    (0..len)
        .map(|_| CHARS[rng.range_usize(0, CHARS.len() - 1)] as char)
        .collect()
}

fn pick_text(config: &SynthConfig, rng: &mut Rng) -> String {
    if let Some(path) = &config.corpus {
        if let Ok(contents) = std::fs::read_to_string(path) {
            let lines: Vec<&str> = contents
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            if !lines.is_empty() {
                return lines[rng.range_usize(0, lines.len() - 1)].to_string();
            }
        }
    }
    random_word(rng)
}

/// Crop a window from a background, tiling it if the window is larger.
fn crop_background(bg: &ImageBuffer, w: usize, h: usize, rng: &mut Rng) -> ImageBuffer {
    if bg.width() >= w && bg.height() >= h {
        let x0 = rng.range_usize(0, bg.width() - w);
        let y0 = rng.range_usize(0, bg.height() - h);
        bg.crop(x0, y0, w, h)
    } else {
        let x0 = rng.range_usize(0, bg.width().saturating_sub(1));
        let y0 = rng.range_usize(0, bg.height().saturating_sub(1));
        ImageBuffer::from_fn(w, h, |x, y| {
            bg.get((x0 + x) % bg.width(), (y0 + y) % bg.height())
        })
    }
}

/// Generate one training triplet. Deterministic in (config.seed, index).
pub fn generate_sample(config: &SynthConfig, index: u64) -> Result<SynthSample, SynthError> {
    config.validate()?;
    let sample_seed = mix(config.seed, index);
    let mut rng = Rng::seed_from(sample_seed);
    let mode = draw_mode(config, &mut rng);

    let font_name = rng.pick(&config.fonts).clone();
    let font = load_font(&font_name)?;
    let text = pick_text(config, &mut rng);
    let text_h = rng.range_usize(config.text_height_range.0, config.text_height_range.1);
    let layer = render_text_layer(&text, &font, text_h)?;

    let margin = rng.range_usize(config.margin_range.0, config.margin_range.1);
    let (x0t, y0t, x1t, y1t) = layer.tight_bbox.bbox();
    let text_w = (x1t - x0t) as usize;
    let text_hh = (y1t - y0t) as usize;
    let canvas_w = (text_w + 2 * margin).max(8);
    let canvas_h = (text_hh + 2 * margin).max(8);

    let bg_path = rng.pick(&config.backgrounds).clone();
    let bg_full = load_image(&bg_path)?;
    let ground_truth = crop_background(&bg_full, canvas_w, canvas_h, &mut rng);

    // glyph alpha placed on the canvas at the margin offset
    let mut glyph_alpha = vec![0.0; canvas_w * canvas_h];
    for y in 0..text_hh.min(canvas_h.saturating_sub(margin)) {
        for x in 0..text_w.min(canvas_w.saturating_sub(margin)) {
            glyph_alpha[(y + margin) * canvas_w + (x + margin)] =
                layer.get(x + x0t as usize, y + y0t as usize);
        }
    }

    // text color with some luma contrast against the background
    let bg_mean = {
        let mut acc = [0.0; 3];
        for y in 0..canvas_h {
            for x in 0..canvas_w {
                let p = ground_truth.get(x, y);
                for c in 0..3 {
                    acc[c] += p[c];
                }
            }
        }
        let n = (canvas_w * canvas_h) as f64;
        [acc[0] / n, acc[1] / n, acc[2] / n]
    };
    let mut color = [rng.uniform(), rng.uniform(), rng.uniform()];
    for _ in 0..4 {
        if (luma(color) - luma(bg_mean)).abs() >= 0.25 {
            break;
        }
        color = [rng.uniform(), rng.uniform(), rng.uniform()];
    }
    if (luma(color) - luma(bg_mean)).abs() < 0.25 {
        color = if luma(bg_mean) > 0.5 { [0.05; 3] } else { [0.95; 3] };
    }

    let mut effects = apply_effects(&glyph_alpha, canvas_w, canvas_h, color, config, &mut rng);

    let fg_img = ImageBuffer::from_fn(canvas_w, canvas_h, |x, y| effects.rgb[y * canvas_w + x]);
    let mut poisson_residual = None;
    let composed = match mode {
        CompositionMode::Direct => {
            let opacity =
                rng.range_f64(config.direct_opacity_range.0, config.direct_opacity_range.1);
            effects.meta.opacity = opacity;
            let alpha: Vec<f64> = effects.alpha.iter().map(|&a| a * opacity).collect();
            direct_compose(&ground_truth, &fg_img, &alpha)?
        }
        CompositionMode::Poisson => {
            let fg_full = direct_compose(&ground_truth, &fg_img, &effects.alpha)?;
            let region = BlendRegion::from_alpha(canvas_w, canvas_h, &effects.alpha, 0.0)
                .clipped_to_interior();
            let blended = poisson_blend(&ground_truth, &fg_full, &region)?;
            poisson_residual = Some(laplacian_residual(&blended, &fg_full, &region));
            blended
        }
    };

    // the mask covers every effect pixel, dilated to absorb codec artifacts
    let support: Vec<f64> = effects
        .alpha
        .iter()
        .map(|&a| if a > 0.0 { 1.0 } else { 0.0 })
        .collect();
    let mask = StrokeMask::from_text_alpha(canvas_w, canvas_h, &support)
        .dilate_hole(config.mask_dilation_radius);

    let (input, jpeg_quality) = if config.jpeg_enabled {
        let q = rng.range_u32(config.jpeg_quality_range.0 as u32, config.jpeg_quality_range.1 as u32)
            as u8;
        (jpeg_roundtrip(&composed, q)?, Some(q))
    } else {
        (composed, None)
    };

    Ok(SynthSample {
        input,
        ground_truth,
        mask,
        meta: SampleMeta {
            seed: sample_seed,
            mode,
            font: font_name,
            text,
            effects: effects.meta,
            jpeg_quality,
            poisson_residual,
        },
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dir: String,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub count: usize,
    pub samples: Vec<ManifestEntry>,
    pub config: SynthConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, SynthError> {
        let contents = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&contents)?)
    }
}

/// Write `count` samples under `out_dir` as
/// `sample_%08d/{input.jpg, gt.png, mask.png, meta.json}` plus a manifest.
/// Returns the manifest path.
pub fn write_dataset(config: &SynthConfig, count: usize, out_dir: &Path) -> Result<PathBuf, SynthError> {
    if count > 0 {
        config.validate()?;
    }
    std::fs::create_dir_all(out_dir)?;

    let indices: Vec<u64> = (0..count as u64).collect();
    let results: Vec<Result<SampleMeta, SynthError>> = {
        let write_one = |&i: &u64| -> Result<SampleMeta, SynthError> {
            let sample = generate_sample(config, i)?;
            let dir = out_dir.join(format!("sample_{i:08}"));
            std::fs::create_dir_all(&dir)?;
            let quality = sample.meta.jpeg_quality.unwrap_or(95);
            save_image(&sample.input, &dir.join("input.jpg"), SaveFormat::Jpeg { quality })?;
            save_image(&sample.ground_truth, &dir.join("gt.png"), SaveFormat::Png)?;
            save_mask(&sample.mask, &dir.join("mask.png"))?;
            std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&sample.meta)?)?;
            Ok(sample.meta)
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            indices.par_iter().map(write_one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            indices.iter().map(write_one).collect()
        }
    };

    let mut samples = Vec::with_capacity(count);
    for (i, r) in results.into_iter().enumerate() {
        let meta = r?;
        samples.push(ManifestEntry {
            dir: format!("sample_{i:08}"),
            seed: meta.seed,
        });
    }
    let manifest = Manifest {
        count,
        samples,
        config: config.clone(),
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_test_background(dir: &Path, name: &str, seed: u64) -> PathBuf {
        let mut rng = Rng::seed_from(seed);
        let base = [rng.uniform(), rng.uniform(), rng.uniform()];
        let img = ImageBuffer::from_fn(160, 120, |x, y| {
            let t = (x as f64 * 0.05 + seed as f64).sin() * 0.15;
            let u = (y as f64 * 0.04).cos() * 0.15;
            [
                (base[0] + t).clamp(0.05, 0.95),
                (base[1] + u).clamp(0.05, 0.95),
                (base[2] + 0.5 * (t + u)).clamp(0.05, 0.95),
            ]
        });
        let path = dir.join(name);
        save_image(&img, &path, SaveFormat::Png).unwrap();
        path
    }

    fn test_config(dir: &Path) -> SynthConfig {
        SynthConfig {
            backgrounds: vec![
                write_test_background(dir, "bg0.png", 1),
                write_test_background(dir, "bg1.png", 2),
            ],
            text_height_range: (16, 28),
            seed: 42,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn direct_compose_matches_formula() {
        let bg = ImageBuffer::from_fn(2, 1, |_, _| [0.2; 3]);
        let fg = ImageBuffer::from_fn(2, 1, |_, _| [0.8; 3]);
        // alpha 0, alpha 1
        let out = direct_compose(&bg, &fg, &[0.0, 1.0]).unwrap();
        assert_eq!(out.get(0, 0), [0.2; 3]);
        assert_eq!(out.get(1, 0), [0.8; 3]);
        // alpha 0.5, bg 0.2, fg 0.8 -> 0.5
        let out = direct_compose(&bg, &fg, &[0.5, 0.5]).unwrap();
        for c in 0..3 {
            assert!((out.get(0, 0)[c] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_compose_rejects_shape_mismatch() {
        let bg = ImageBuffer::new(2, 2);
        let fg = ImageBuffer::new(3, 2);
        assert!(matches!(
            direct_compose(&bg, &fg, &[0.0; 4]),
            Err(SynthError::ShapeMismatch(_))
        ));
    }

    fn box_alpha(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Vec<f64> {
        let mut a = vec![0.0; w * h];
        for y in y0..y1 {
            for x in x0..x1 {
                a[y * w + x] = 1.0;
            }
        }
        a
    }

    fn effects_disabled() -> SynthConfig {
        SynthConfig {
            blur_sigma_range: (0.0, 0.0),
            shadow: ShadowConfig {
                enabled: false,
                ..ShadowConfig::default()
            },
            border3d_enabled: false,
            shift_range: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn all_effects_disabled_is_identity() {
        let alpha = box_alpha(20, 12, 5, 3, 15, 9);
        let mut rng = Rng::seed_from(7);
        let layer = apply_effects(&alpha, 20, 12, [0.9, 0.2, 0.1], &effects_disabled(), &mut rng);
        assert_eq!(layer.alpha, alpha);
        for (i, &a) in alpha.iter().enumerate() {
            if a > 0.0 {
                assert_eq!(layer.rgb[i], [0.9, 0.2, 0.1]);
            }
        }
    }

    #[test]
    fn blur_sigma_zero_is_identity() {
        let alpha = box_alpha(16, 10, 4, 2, 12, 8);
        let mut cfg = effects_disabled();
        cfg.blur_sigma_range = (0.0, 0.0);
        let mut rng = Rng::seed_from(9);
        let layer = apply_effects(&alpha, 16, 10, [0.5; 3], &cfg, &mut rng);
        assert_eq!(layer.alpha, alpha);
    }

    #[test]
    fn shadow_support_is_union_of_text_and_offset_copy() {
        let alpha = box_alpha(30, 20, 8, 6, 16, 12);
        let mut cfg = effects_disabled();
        // pin the shadow: always on, offset exactly (3,3) via a magnitude-3
        // draw at angle 45° is not controllable, so use the support oracle:
        // support(effect) must contain both the text and a translated copy.
        cfg.shadow = ShadowConfig {
            enabled: true,
            probability: 1.0,
            offset_range: (4.0, 4.0),
            opacity_range: (0.6, 0.6),
            blur_range: (0.0, 0.0),
        };
        let mut rng = Rng::seed_from(11);
        let layer = apply_effects(&alpha, 30, 20, [0.1; 3], &cfg, &mut rng);
        let (dx, dy, _, blur) = layer.meta.shadow.unwrap();
        assert!((dx.hypot(dy) - 4.0).abs() < 1e-9);
        // union oracle on binary supports
        let shifted = translate_plane(&alpha, 30, 20, dx, dy);
        for i in 0..alpha.len() {
            let in_union = alpha[i] > 0.05 || shifted[i] > 0.05;
            if in_union {
                assert!(layer.alpha[i] > 0.0, "union pixel {i} missing from effect alpha");
            }
            // no blur: support must not exceed the union (plus bilinear halo)
            if layer.alpha[i] > 0.05 && blur == 0.0 {
                let halo = alpha[i] > 0.0
                    || shifted[i] > 0.0
                    || (i % 30 > 0 && (alpha[i - 1] > 0.0 || shifted[i - 1] > 0.0))
                    || (i >= 30 && (alpha[i - 30] > 0.0 || shifted[i - 30] > 0.0));
                assert!(halo, "stray support at {i}");
            }
        }
    }

    #[test]
    fn generate_sample_is_deterministic() {
        let dir = tempdir().unwrap();
        let cfg = test_config(dir.path());
        let a = generate_sample(&cfg, 5).unwrap();
        let b = generate_sample(&cfg, 5).unwrap();
        assert_eq!(a.input, b.input);
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_eq!(a.mask.data(), b.mask.data());
        assert_eq!(a.meta.text, b.meta.text);
        // and differs for another index
        let c = generate_sample(&cfg, 6).unwrap();
        assert_ne!(a.meta.seed, c.meta.seed);
    }

    #[test]
    fn without_jpeg_input_matches_gt_outside_hole() {
        let dir = tempdir().unwrap();
        let mut cfg = test_config(dir.path());
        cfg.jpeg_enabled = false;
        cfg.mask_dilation_radius = 0;
        for index in 0..6 {
            let s = generate_sample(&cfg, index).unwrap();
            let w = s.input.width();
            for y in 0..s.input.height() {
                for x in 0..w {
                    if s.mask.get(x, y) == 1.0 {
                        assert_eq!(
                            s.input.get(x, y),
                            s.ground_truth.get(x, y),
                            "index {index} pixel ({x},{y}) differs outside the hole"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn composition_mode_fraction_matches_probability() {
        let cfg = SynthConfig {
            direct_compose_probability: 0.5,
            seed: 99,
            ..SynthConfig::default()
        };
        let n = 10_000u64;
        let direct = (0..n)
            .filter(|&i| composition_mode(&cfg, i) == CompositionMode::Direct)
            .count() as f64;
        let frac = direct / n as f64;
        assert!((frac - 0.5).abs() <= 0.02, "direct fraction {frac}");
    }

    #[test]
    fn generate_sample_uses_the_published_mode() {
        let dir = tempdir().unwrap();
        let cfg = test_config(dir.path());
        for i in 0..4 {
            let s = generate_sample(&cfg, i).unwrap();
            assert_eq!(s.meta.mode, composition_mode(&cfg, i));
        }
    }

    #[test]
    fn corpus_file_drives_the_text_content() {
        let dir = tempdir().unwrap();
        let corpus = dir.path().join("words.txt");
        std::fs::write(&corpus, "ONLYWORD\n").unwrap();
        let mut cfg = test_config(dir.path());
        cfg.corpus = Some(corpus);
        for i in 0..3 {
            let s = generate_sample(&cfg, i).unwrap();
            assert_eq!(s.meta.text, "ONLYWORD");
        }
    }

    #[test]
    fn write_dataset_count_zero_is_empty_manifest() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("ds");
        let cfg = SynthConfig::default(); // no backgrounds needed for 0
        let path = write_dataset(&cfg, 0, &out).unwrap();
        let manifest = Manifest::load(&path).unwrap();
        assert_eq!(manifest.count, 0);
        assert!(manifest.samples.is_empty());
        let dirs: Vec<_> = std::fs::read_dir(&out)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().is_dir())
            .collect();
        assert!(dirs.is_empty());
    }

    #[test]
    fn write_dataset_layout_and_determinism() {
        let dir = tempdir().unwrap();
        let cfg = test_config(dir.path());
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        write_dataset(&cfg, 3, &out_a).unwrap();
        write_dataset(&cfg, 3, &out_b).unwrap();
        for i in 0..3 {
            let sub = format!("sample_{i:08}");
            for f in ["input.jpg", "gt.png", "mask.png", "meta.json"] {
                let pa = out_a.join(&sub).join(f);
                let pb = out_b.join(&sub).join(f);
                assert!(pa.exists(), "{pa:?} missing");
                let ba = std::fs::read(&pa).unwrap();
                let bb = std::fs::read(&pb).unwrap();
                assert_eq!(ba, bb, "{f} of {sub} not byte-identical");
            }
        }
    }
}
