//! Image-quality metrics over prediction/ground-truth pairs: MSE, PSNR
//! (capped at 99 dB for identical images), and SSIM on BT.601 luma with
//! the standard 11×11 Gaussian window, σ = 1.5.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::ImageBuffer;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} smaller than the {2}-pixel SSIM window")]
    ImageTooSmall(usize, usize, usize),
}

/// PSNR value reported when the error is exactly zero.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricsError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::ShapeMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    Ok(())
}

/// Mean squared error over all channels and pixels.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricsError> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// 10·log10(peak² / mse), capped at [`PSNR_CAP_DB`] when the MSE is zero.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64, MetricsError> {
    let e = mse(a, b)?;
    if e <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / e).log10()).min(PSNR_CAP_DB))
}

fn luma_plane(img: &ImageBuffer) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let p = img.get(x, y);
            out.push(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]);
        }
    }
    out
}

fn gaussian_kernel() -> Vec<f64> {
    let r = SSIM_WINDOW / 2;
    let mut k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= s;
    }
    k
}

/// Separable Gaussian filter, valid region only.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let r = k.len() / 2;
    let ow = w - 2 * r;
    let oh = h - 2 * r;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + i];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * horiz[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, ow, oh)
}

/// Mean local SSIM on luma with a Gaussian window over valid positions.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricsError> {
    check_shapes(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::ImageTooSmall(w, h, SSIM_WINDOW));
    }
    let x = luma_plane(a);
    let y = luma_plane(b);
    let k = gaussian_kernel();

    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y.iter()).map(|(u, v)| u * v).collect();

    let (mu_x, ow, oh) = filter_valid(&x, w, h, &k);
    let (mu_y, _, _) = filter_valid(&y, w, h, &k);
    let (e_xx, _, _) = filter_valid(&xx, w, h, &k);
    let (e_yy, _, _) = filter_valid(&yy, w, h, &k);
    let (e_xy, _, _) = filter_valid(&xy, w, h, &k);

    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut acc = 0.0;
    for i in 0..ow * oh {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let v = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        acc += v;
    }
    Ok(acc / (ow * oh) as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageEval {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageEval>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_mse: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,psnr,ssim,mse\n");
        for i in &self.images {
            out.push_str(&format!("{},{:.6},{:.6},{:.8}\n", i.name, i.psnr, i.ssim, i.mse));
        }
        out.push_str(&format!(
            "mean,{:.6},{:.6},{:.8}\n",
            self.mean_psnr, self.mean_ssim, self.mean_mse
        ));
        out
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> std::io::Result<()> {
        std::fs::write(json_path, serde_json::to_vec_pretty(self).expect("report serializes"))?;
        std::fs::write(csv_path, self.to_csv())
    }
}

/// Evaluate named prediction/ground-truth pairs and aggregate the means.
pub fn evaluate_pairs(
    pairs: &[(String, ImageBuffer, ImageBuffer)],
) -> Result<EvalReport, MetricsError> {
    let results: Vec<Result<ImageEval, MetricsError>> = {
        let eval_one = |(name, pred, gt): &(String, ImageBuffer, ImageBuffer)| {
            Ok(ImageEval {
                name: name.clone(),
                psnr: psnr(pred, gt, 1.0)?,
                ssim: ssim(pred, gt)?,
                mse: mse(pred, gt)?,
            })
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            pairs.par_iter().map(eval_one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            pairs.iter().map(eval_one).collect()
        }
    };
    let mut images = Vec::with_capacity(pairs.len());
    for r in results {
        images.push(r?);
    }
    let n = images.len().max(1) as f64;
    Ok(EvalReport {
        mean_psnr: images.iter().map(|i| i.psnr).sum::<f64>() / n,
        mean_ssim: images.iter().map(|i| i.ssim).sum::<f64>() / n,
        mean_mse: images.iter().map(|i| i.mse).sum::<f64>() / n,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use texterase_tensor::Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> ImageBuffer {
        let mut rng = Rng::seed_from(seed);
        ImageBuffer::from_fn(w, h, |_, _| [rng.uniform(), rng.uniform(), rng.uniform()])
    }

    /// Direct, non-separable SSIM: full-window double loops.
    fn ssim_bruteforce(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
        let (w, h) = (a.width(), a.height());
        let x = luma_plane(a);
        let y = luma_plane(b);
        let k1d = gaussian_kernel();
        let r = SSIM_WINDOW / 2;
        let c1 = 0.01f64.powi(2);
        let c2 = 0.03f64.powi(2);
        let mut acc = 0.0;
        let mut count = 0;
        for cy in r..h - r {
            for cx in r..w - r {
                let mut mx = 0.0;
                let mut my = 0.0;
                let mut exx = 0.0;
                let mut eyy = 0.0;
                let mut exy = 0.0;
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let wgt = k1d[dy] * k1d[dx];
                        let px = x[(cy + dy - r) * w + cx + dx - r];
                        let py = y[(cy + dy - r) * w + cx + dx - r];
                        mx += wgt * px;
                        my += wgt * py;
                        exx += wgt * px * px;
                        eyy += wgt * py * py;
                        exy += wgt * px * py;
                    }
                }
                let vx = exx - mx * mx;
                let vy = eyy - my * my;
                let cov = exy - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn mse_examples() {
        let a = random_image(8, 8, 1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = ImageBuffer::from_fn(8, 8, |x, y| {
            let p = a.get(x, y);
            [p[0] + 0.1, p[1] + 0.1, p[2] + 0.1]
        });
        // constant diff 0.1 -> 0.01 (away from the clamp boundaries)
        let a_safe = ImageBuffer::from_fn(8, 8, |_, _| [0.4, 0.5, 0.6]);
        let b_safe = ImageBuffer::from_fn(8, 8, |_, _| [0.5, 0.6, 0.7]);
        assert!((mse(&a_safe, &b_safe).unwrap() - 0.01).abs() < 1e-12);
        let _ = b;
    }

    #[test]
    fn mse_matches_bruteforce_loops() {
        let a = random_image(8, 8, 2);
        let b = random_image(8, 8, 3);
        let mut want = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    let d = a.get(x, y)[c] - b.get(x, y)[c];
                    want += d * d;
                }
            }
        }
        want /= 192.0;
        assert!((mse(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(8, 8, 4);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        // mse 0.01, peak 1 -> 20 dB
        let x = ImageBuffer::from_fn(8, 8, |_, _| [0.4; 3]);
        let y = ImageBuffer::from_fn(8, 8, |_, _| [0.5; 3]);
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_strictly_decreases_in_mse() {
        let base = ImageBuffer::from_fn(8, 8, |_, _| [0.5; 3]);
        let mut last = f64::INFINITY;
        for step in 1..6 {
            let shifted = ImageBuffer::from_fn(8, 8, |_, _| [0.5 + 0.05 * step as f64; 3]);
            let p = psnr(&base, &shifted, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_symmetry_and_oracle() {
        let a = random_image(16, 12, 5);
        let b = random_image(16, 12, 6);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b).unwrap();
        let ba = ssim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!((ab - ssim_bruteforce(&a, &b)).abs() < 1e-9);
        // constant 0 vs constant 1 matches the brute-force value too
        let zeros = ImageBuffer::from_fn(16, 12, |_, _| [0.0; 3]);
        let ones = ImageBuffer::from_fn(16, 12, |_, _| [1.0; 3]);
        let got = ssim(&zeros, &ones).unwrap();
        assert!((got - ssim_bruteforce(&zeros, &ones)).abs() < 1e-12);
        assert!(got < 0.01, "completely different constants score {got}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random_image(8, 8, 7);
        assert!(matches!(ssim(&a, &a), Err(MetricsError::ImageTooSmall(..))));
    }

    #[test]
    fn shape_mismatch_detected() {
        let a = random_image(8, 8, 8);
        let b = random_image(9, 8, 9);
        assert!(matches!(mse(&a, &b), Err(MetricsError::ShapeMismatch(..))));
    }

    #[test]
    fn report_means_are_hand_averages() {
        let a = random_image(16, 16, 10);
        let b = random_image(16, 16, 11);
        let c = random_image(16, 16, 12);
        let pairs = vec![
            ("one".to_string(), a.clone(), b.clone()),
            ("two".to_string(), b.clone(), c.clone()),
        ];
        let report = evaluate_pairs(&pairs).unwrap();
        let want_psnr = (psnr(&a, &b, 1.0).unwrap() + psnr(&b, &c, 1.0).unwrap()) / 2.0;
        let want_mse = (mse(&a, &b).unwrap() + mse(&b, &c).unwrap()) / 2.0;
        assert!((report.mean_psnr - want_psnr).abs() < 1e-12);
        assert!((report.mean_mse - want_mse).abs() < 1e-12);
        assert_eq!(report.images.len(), 2);
        let csv = report.to_csv();
        assert!(csv.lines().count() == 4);
        assert!(csv.starts_with("name,psnr,ssim,mse"));
    }
}
