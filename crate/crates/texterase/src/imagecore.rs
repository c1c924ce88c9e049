//! Image and mask value types shared by every other module, plus the codec
//! boundary (PNG/JPEG in, PNG/JPEG out).
//!
//! Conventions, fixed here once:
//! - images are RGB, channel-last, f64 in [0,1];
//! - stroke masks are 1 = valid background, 0 = text-stroke hole;
//! - mask *files* store text strokes as white (255) single-channel PNG, so
//!   the loader inverts on the way in and the writer inverts on the way out.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image: {0}")]
    CorruptImage(String),
    #[error("jpeg quality {0} outside 1..=100")]
    InvalidQuality(u8),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// H×W×3 image, values in [0,1], row-major with channel-last layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "degenerate image {width}x{height}");
        ImageBuffer {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = ImageBuffer::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, px: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = px[0].clamp(0.0, 1.0);
        self.data[i + 1] = px[1].clamp(0.0, 1.0);
        self.data[i + 2] = px[2].clamp(0.0, 1.0);
    }

    /// Bilinear sample at fractional coordinates; out-of-range reads are 0.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        if x < -1.0 || y < -1.0 || x > self.width as f64 || y > self.height as f64 {
            return [0.0; 3];
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let mut out = [0.0; 3];
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let w = wy * wx;
                if w == 0.0 {
                    continue;
                }
                let xi = x0 + dx;
                let yi = y0 + dy;
                if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                    continue;
                }
                let px = self.get(xi as usize, yi as usize);
                for c in 0..3 {
                    out[c] += w * px[c];
                }
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ImageBuffer {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        ImageBuffer::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    pub fn max_abs_diff(&self, other: &ImageBuffer) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        ImageBuffer {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }
}

/// 8-bit quantization used by every save path: round(v·255), clamped.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// The value a [0,1] channel becomes after one save/load cycle through PNG.
pub fn quantize_roundtrip(v: f64) -> f64 {
    quantize_u8(v) as f64 / 255.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaveFormat {
    Png,
    Jpeg { quality: u8 },
}

pub fn load_image(path: &Path) -> Result<ImageBuffer, ImageError> {
    let dynimg = open_dynamic(path)?;
    let rgb = dynimg.to_rgb8();
    Ok(ImageBuffer::from_rgb8(
        rgb.width() as usize,
        rgb.height() as usize,
        rgb.as_raw(),
    ))
}

fn open_dynamic(path: &Path) -> Result<DynamicImage, ImageError> {
    if !path.exists() {
        return Err(ImageError::FileNotFound(path.to_path_buf()));
    }
    let reader = image::ImageReader::open(path)?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| ImageError::CorruptImage(e.to_string()))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Jpeg) => {}
        Some(other) => return Err(ImageError::UnsupportedFormat(format!("{other:?}"))),
        None => return Err(ImageError::UnsupportedFormat("unrecognized".into())),
    }
    reader
        .decode()
        .map_err(|e| ImageError::CorruptImage(e.to_string()))
}

pub fn save_image(img: &ImageBuffer, path: &Path, format: SaveFormat) -> Result<(), ImageError> {
    let bytes = encode_image(img, format)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Encode to an in-memory PNG/JPEG byte stream.
pub fn encode_image(img: &ImageBuffer, format: SaveFormat) -> Result<Vec<u8>, ImageError> {
    let raw = img.to_rgb8();
    let mut out = Vec::new();
    match format {
        SaveFormat::Png => {
            image::codecs::png::PngEncoder::new(Cursor::new(&mut out))
                .write_image(
                    &raw,
                    img.width as u32,
                    img.height as u32,
                    ExtendedColorType::Rgb8,
                )
                .map_err(|e| ImageError::CorruptImage(e.to_string()))?;
        }
        SaveFormat::Jpeg { quality } => {
            if quality == 0 || quality > 100 {
                return Err(ImageError::InvalidQuality(quality));
            }
            image::codecs::jpeg::JpegEncoder::new_with_quality(Cursor::new(&mut out), quality)
                .encode(
                    &raw,
                    img.width as u32,
                    img.height as u32,
                    ExtendedColorType::Rgb8,
                )
                .map_err(|e| ImageError::CorruptImage(e.to_string()))?;
        }
    }
    Ok(out)
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
    let dynimg = image::load_from_memory(bytes).map_err(|e| ImageError::CorruptImage(e.to_string()))?;
    let rgb = dynimg.to_rgb8();
    Ok(ImageBuffer::from_rgb8(
        rgb.width() as usize,
        rgb.height() as usize,
        rgb.as_raw(),
    ))
}

/// Degrade an image through an in-memory JPEG encode/decode cycle.
pub fn jpeg_roundtrip(img: &ImageBuffer, quality: u8) -> Result<ImageBuffer, ImageError> {
    let bytes = encode_image(img, SaveFormat::Jpeg { quality })?;
    decode_image(&bytes)
}

/// H×W map in [0,1]; 1 = valid background, 0 = text-stroke hole.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokeMask {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl StrokeMask {
    pub fn all_valid(width: usize, height: usize) -> Self {
        StrokeMask {
            width,
            height,
            data: vec![1.0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        StrokeMask {
            width,
            height,
            data,
        }
    }

    /// Build the canonical mask from a text-stroke alpha map (text = high).
    pub fn from_text_alpha(width: usize, height: usize, alpha: &[f64]) -> Self {
        StrokeMask {
            width,
            height,
            data: alpha.iter().map(|&a| 1.0 - a.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_holes(&self) -> usize {
        self.data.iter().filter(|&&v| v < 0.5).count()
    }

    /// Grow the hole (0) region by a disk of the given radius.
    pub fn dilate_hole(&self, radius: usize) -> StrokeMask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as isize;
        let mut out = StrokeMask::all_valid(self.width, self.height);
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                if self.data[y as usize * self.width + x as usize] >= 0.5 {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy > r * r {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < self.width as isize && ny < self.height as isize {
                            out.data[ny as usize * self.width + nx as usize] = 0.0;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Threshold a soft mask: output 1 where value ≥ τ, else 0.
pub fn binarize(mask: &StrokeMask, tau: f64) -> StrokeMask {
    assert!(tau > 0.0 && tau < 1.0, "threshold {tau} outside (0,1)");
    StrokeMask {
        width: mask.width,
        height: mask.height,
        data: mask.data.iter().map(|&v| if v >= tau { 1.0 } else { 0.0 }).collect(),
    }
}

/// Default binarization threshold.
pub const DEFAULT_TAU: f64 = 0.5;

/// Load a mask PNG (text stroke = white) into the 1 = valid convention.
pub fn load_mask(path: &Path) -> Result<StrokeMask, ImageError> {
    let dynimg = open_dynamic(path)?;
    let gray = dynimg.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.as_raw().iter().map(|&b| 1.0 - b as f64 / 255.0).collect();
    Ok(StrokeMask {
        width: w,
        height: h,
        data,
    })
}

/// Save a mask as single-channel PNG with text strokes white.
pub fn save_mask(mask: &StrokeMask, path: &Path) -> Result<(), ImageError> {
    let raw: Vec<u8> = mask.data.iter().map(|&v| quantize_u8(1.0 - v)).collect();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(Cursor::new(&mut out))
        .write_image(&raw, mask.width as u32, mask.height as u32, ExtendedColorType::L8)
        .map_err(|e| ImageError::CorruptImage(e.to_string()))?;
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    AxisAligned,
    Quad,
    Polygon,
}

/// One annotated text instance: an axis-aligned box (2 points), a
/// quadrilateral (4 points, clockwise from top-left) or a polygon with 2N
/// points, top boundary left-to-right then bottom boundary right-to-left.
#[derive(Clone, Debug, PartialEq)]
pub struct TextRegion {
    pub kind: RegionKind,
    pub points: Vec<(f64, f64)>,
}

impl TextRegion {
    pub fn axis_aligned(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        TextRegion {
            kind: RegionKind::AxisAligned,
            points: vec![(x0.min(x1), y0.min(y1)), (x0.max(x1), y0.max(y1))],
        }
    }

    pub fn quad(points: [(f64, f64); 4]) -> Self {
        TextRegion {
            kind: RegionKind::Quad,
            points: points.to_vec(),
        }
    }

    pub fn polygon(points: Vec<(f64, f64)>) -> Self {
        assert!(points.len() >= 4 && points.len().is_multiple_of(2), "polygon needs 2N points, N >= 2");
        TextRegion {
            kind: RegionKind::Polygon,
            points,
        }
    }

    /// Clamp every point into [0,w]×[0,h].
    pub fn clip(&self, width: usize, height: usize) -> TextRegion {
        TextRegion {
            kind: self.kind,
            points: self
                .points
                .iter()
                .map(|&(x, y)| (x.clamp(0.0, width as f64), y.clamp(0.0, height as f64)))
                .collect(),
        }
    }

    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut x0 = f64::INFINITY;
        let mut y0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for &(x, y) in &self.points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        (x0, y0, x1, y1)
    }

    pub fn area(&self) -> f64 {
        let (x0, y0, x1, y1) = self.bbox();
        (x1 - x0).max(0.0) * (y1 - y0).max(0.0)
    }

    /// Point-in-region test against the closed outline (bbox for axis
    /// boxes, even-odd rule for quads and polygons).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self.kind {
            RegionKind::AxisAligned => {
                let (x0, y0) = self.points[0];
                let (x1, y1) = self.points[1];
                x >= x0 && x < x1 && y >= y0 && y < y1
            }
            RegionKind::Quad | RegionKind::Polygon => {
                let pts = &self.points;
                let mut inside = false;
                let n = pts.len();
                let mut j = n - 1;
                for i in 0..n {
                    let (xi, yi) = pts[i];
                    let (xj, yj) = pts[j];
                    if ((yi > y) != (yj > y)) && (x < (xj - xi) * (y - yi) / (yj - yi) + xi) {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn white_and_black_pixels_load_as_unit_values() {
        let dir = tempdir().unwrap();
        for (px, want) in [([1.0, 1.0, 1.0], 1.0), ([0.0, 0.0, 0.0], 0.0)] {
            let mut img = ImageBuffer::new(1, 1);
            img.put(0, 0, px);
            let path = dir.path().join(format!("p{want}.png"));
            save_image(&img, &path, SaveFormat::Png).unwrap();
            let back = load_image(&path).unwrap();
            assert!(back.data().iter().all(|&v| v == want));
        }
    }

    #[test]
    fn png_roundtrip_is_exact_after_quantization() {
        let dir = tempdir().unwrap();
        let img = ImageBuffer::from_fn(2, 2, |x, y| {
            [x as f64 / 3.0, y as f64 / 3.0, (x + y) as f64 / 7.0]
        });
        let path = dir.path().join("rt.png");
        save_image(&img, &path, SaveFormat::Png).unwrap();
        let back = load_image(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            assert_eq!(quantize_roundtrip(*a), *b);
        }
        // saving the loaded image again reproduces it bit for bit
        let path2 = dir.path().join("rt2.png");
        save_image(&back, &path2, SaveFormat::Png).unwrap();
        assert_eq!(load_image(&path2).unwrap(), back);
    }

    #[test]
    fn constant_gray_quantizes_to_half() {
        let dir = tempdir().unwrap();
        let img = ImageBuffer::from_fn(4, 4, |_, _| [0.5; 3]);
        let path = dir.path().join("g.png");
        save_image(&img, &path, SaveFormat::Png).unwrap();
        let back = load_image(&path).unwrap();
        let want = (0.5f64 * 255.0).round() / 255.0;
        assert!(back.data().iter().all(|&v| (v - want).abs() < 1e-12));
    }

    #[test]
    fn jpeg_quality_100_bounded_error() {
        let img = ImageBuffer::from_fn(32, 24, |x, y| {
            let t = (x as f64 * 0.17).sin() * 0.5 + 0.5;
            let u = (y as f64 * 0.23).cos() * 0.5 + 0.5;
            [t, u, (t + u) / 2.0]
        });
        let back = jpeg_roundtrip(&img, 100).unwrap();
        assert!(img.max_abs_diff(&back) <= 0.05, "err {}", img.max_abs_diff(&back));
    }

    #[test]
    fn jpeg_quality_zero_rejected() {
        let img = ImageBuffer::new(2, 2);
        match encode_image(&img, SaveFormat::Jpeg { quality: 0 }) {
            Err(ImageError::InvalidQuality(0)) => {}
            other => panic!("expected InvalidQuality, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_file_not_found() {
        match load_image(Path::new("/definitely/not/here.png")) {
            Err(ImageError::FileNotFound(_)) => {}
            other => panic!("expected FileNotFound, got {other:?}"),
        }
    }

    #[test]
    fn binarize_examples() {
        let m = StrokeMask::from_data(3, 1, vec![0.2, 0.5, 0.8]);
        let b = binarize(&m, 0.5);
        assert_eq!(b.data(), &[0.0, 1.0, 1.0]);
        let all_high = StrokeMask::from_data(2, 2, vec![0.9; 4]);
        assert!(binarize(&all_high, 0.5).data().iter().all(|&v| v == 1.0));
        let all_low = StrokeMask::from_data(2, 2, vec![0.1; 4]);
        assert!(binarize(&all_low, 0.5).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binarize_idempotent_and_monotone_in_tau() {
        let m = StrokeMask::from_data(4, 1, vec![0.1, 0.4, 0.6, 0.9]);
        let b = binarize(&m, 0.5);
        assert_eq!(binarize(&b, 0.5).data(), b.data());
        // raising tau never adds 1-pixels
        let lo = binarize(&m, 0.3);
        let hi = binarize(&m, 0.7);
        for (l, h) in lo.data().iter().zip(hi.data().iter()) {
            assert!(h <= l);
        }
    }

    #[test]
    fn mask_file_polarity_roundtrip() {
        let dir = tempdir().unwrap();
        // hole (text) at (1,0)
        let mut m = StrokeMask::all_valid(2, 1);
        m.set(1, 0, 0.0);
        let path = dir.path().join("m.png");
        save_mask(&m, &path).unwrap();
        // file stores text as white
        let raw = image::open(&path).unwrap().to_luma8();
        assert_eq!(raw.get_pixel(0, 0).0[0], 0);
        assert_eq!(raw.get_pixel(1, 0).0[0], 255);
        let back = load_mask(&path).unwrap();
        assert_eq!(back.data(), m.data());
    }

    #[test]
    fn dilate_hole_grows_a_disk() {
        let mut m = StrokeMask::all_valid(7, 7);
        m.set(3, 3, 0.0);
        let d = m.dilate_hole(2);
        assert_eq!(d.get(3, 3), 0.0);
        assert_eq!(d.get(5, 3), 0.0);
        assert_eq!(d.get(3, 5), 0.0);
        assert_eq!(d.get(5, 5), 1.0); // corner outside the disk
        assert_eq!(d.get(6, 3), 1.0);
        assert_eq!(m.dilate_hole(0).data(), m.data());
    }

    #[test]
    fn region_contains_and_bbox() {
        let r = TextRegion::axis_aligned(2.0, 3.0, 10.0, 8.0);
        assert!(r.contains(2.0, 3.0));
        assert!(!r.contains(10.0, 8.0));
        assert_eq!(r.bbox(), (2.0, 3.0, 10.0, 8.0));

        let q = TextRegion::quad([(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)]);
        assert!(q.contains(2.0, 2.0));
        assert!(!q.contains(5.0, 2.0));
    }
}
