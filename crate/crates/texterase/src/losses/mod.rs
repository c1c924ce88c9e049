//! Training losses: dice + L1 on the predicted stroke mask, hole-weighted
//! pixel reconstruction, perceptual and style (Gram) terms over frozen
//! feature maps, and total variation over the hole region.
//!
//! Conventions: mask tensors passed to the mask losses use the text=1
//! representation; the pixel/compose losses take the soft mask in the
//! 1=valid convention. Every L1 reduction is an element mean so the loss
//! weights stay resolution-independent.

pub mod vgg;

pub use vgg::{FeatureExtractor, VggExtractor};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use texterase_tensor::graph::{Graph, Value};
use texterase_tensor::Tensor;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

const DICE_EPS: f64 = 1e-6;

/// λ coefficients of the loss stack.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    /// Dice weight inside the mask loss.
    pub lambda_dice: f64,
    /// Weight of the whole mask loss in the total.
    pub mask_weight: f64,
    /// Weight of the reconstruction term in the total.
    pub pixel_weight: f64,
    /// Extra weight on hole pixels inside the reconstruction loss.
    pub hole_pixel_weight: f64,
    pub lambda_perceptual: f64,
    pub lambda_style: f64,
    pub lambda_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dice: 1.0,
            mask_weight: 10.0,
            pixel_weight: 1.0,
            hole_pixel_weight: 6.0,
            lambda_perceptual: 0.05,
            lambda_style: 100.0,
            lambda_tv: 0.1,
        }
    }
}

fn check_same_shape(a: Value, b: Value, what: &str) -> Result<(), LossError> {
    if a.shape != b.shape {
        return Err(LossError::ShapeMismatch(format!(
            "{what}: {} vs {}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

/// Dice loss on text=1 maps: 1 − 2Σ(p·g)/(Σp + Σg + ε).
pub fn dice_loss(g: &mut Graph, pred: Value, gt: Value) -> Result<Value, LossError> {
    check_same_shape(pred, gt, "dice_loss")?;
    let inter = g.mul(pred, gt);
    let inter = g.sum_all(inter);
    let sp = g.sum_all(pred);
    let sg = g.sum_all(gt);
    let denom = g.add(sp, sg);
    let denom = g.add_const(denom, DICE_EPS);
    let ratio = g.div(inter, denom);
    let ratio = g.scale(ratio, -2.0);
    Ok(g.add_const(ratio, 1.0))
}

/// Mask-branch loss: mean L1 + λ0 · dice.
pub fn mask_loss(
    g: &mut Graph,
    pred: Value,
    gt: Value,
    lambda_dice: f64,
) -> Result<Value, LossError> {
    check_same_shape(pred, gt, "mask_loss")?;
    let l1 = g.l1_mean(pred, gt);
    let dice = dice_loss(g, pred, gt)?;
    let dice = g.scale(dice, lambda_dice);
    Ok(g.add(l1, dice))
}

/// Hole-weighted reconstruction loss. `mask_valid` is the soft mask in the
/// 1 = valid convention, broadcast over channels.
pub fn pixel_loss(
    g: &mut Graph,
    out_hat: Value,
    out_gt: Value,
    mask_valid: Value,
    hole_weight: f64,
) -> Result<Value, LossError> {
    check_same_shape(out_hat, out_gt, "pixel_loss")?;
    let diff = g.sub(out_hat, out_gt);
    let valid_part = g.mul_mask(diff, mask_valid);
    let valid_part = g.abs(valid_part);
    let valid_term = g.mean_all(valid_part);
    let inv = inverted_mask(g, mask_valid);
    let hole_part = g.mul_mask(diff, inv);
    let hole_part = g.abs(hole_part);
    let hole_term = g.mean_all(hole_part);
    let hole_term = g.scale(hole_term, hole_weight);
    Ok(g.add(valid_term, hole_term))
}

fn inverted_mask(g: &mut Graph, mask: Value) -> Value {
    let m = g.scale(mask, -1.0);
    g.add_const(m, 1.0)
}

/// Composed image: valid region from the ground truth, hole region from
/// the prediction.
pub fn compose(
    g: &mut Graph,
    out_hat: Value,
    out_gt: Value,
    mask_valid: Value,
) -> Result<Value, LossError> {
    check_same_shape(out_hat, out_gt, "compose")?;
    let a = g.mul_mask(out_gt, mask_valid);
    let inv = inverted_mask(g, mask_valid);
    let b = g.mul_mask(out_hat, inv);
    Ok(g.add(a, b))
}

/// Sum over feature stages of mean-L1 distances of both the raw output and
/// the composed image against the ground truth.
pub fn perceptual_loss(
    g: &mut Graph,
    out_hat: Value,
    composed: Value,
    out_gt: Value,
    extractor: &dyn FeatureExtractor,
) -> Value {
    let f_hat = extractor.features(g, out_hat);
    let f_comp = extractor.features(g, composed);
    let f_gt = extractor.features(g, out_gt);
    let mut total: Option<Value> = None;
    for ((h, c), t) in f_hat.into_iter().zip(f_comp).zip(f_gt) {
        let a = g.l1_mean(h, t);
        let b = g.l1_mean(c, t);
        let s = g.add(a, b);
        total = Some(match total {
            Some(acc) => g.add(acc, s),
            None => s,
        });
    }
    total.expect("extractor produced no feature stages")
}

/// Like the perceptual term but on Gram matrices of the feature maps.
pub fn style_loss(
    g: &mut Graph,
    out_hat: Value,
    composed: Value,
    out_gt: Value,
    extractor: &dyn FeatureExtractor,
) -> Value {
    let f_hat = extractor.features(g, out_hat);
    let f_comp = extractor.features(g, composed);
    let f_gt = extractor.features(g, out_gt);
    let mut total: Option<Value> = None;
    for ((h, c), t) in f_hat.into_iter().zip(f_comp).zip(f_gt) {
        let gh = g.gram(h);
        let gc = g.gram(c);
        let gt_gram = g.gram(t);
        let a = g.l1_mean(gh, gt_gram);
        let b = g.l1_mean(gc, gt_gram);
        let s = g.add(a, b);
        total = Some(match total {
            Some(acc) => g.add(acc, s),
            None => s,
        });
    }
    total.expect("extractor produced no feature stages")
}

/// Total variation over pairs rooted at hole pixels: for every pixel of the
/// hole region M, |I(i,j+1) − I(i,j)| + |I(i+1,j) − I(i,j)|, summed over
/// channels and normalized by the element count.
pub fn tv_loss(g: &mut Graph, composed: Value, hole_region: &Tensor) -> Result<Value, LossError> {
    let s = composed.shape;
    let sm = hole_region.shape();
    if sm.n != s.n || sm.c != 1 || sm.h != s.h || sm.w != s.w {
        return Err(LossError::ShapeMismatch(format!(
            "tv_loss: hole region {} for image {}",
            sm, s
        )));
    }
    let tx = g.tensor(composed).clone();
    let hole = hole_region.clone();
    let norm = 1.0 / s.numel() as f64;
    let plane = s.h * s.w;

    let mut acc = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let hbase = n * plane;
            for i in 0..s.h {
                for j in 0..s.w {
                    if hole.data()[hbase + i * s.w + j] == 0.0 {
                        continue;
                    }
                    let here = tx.data()[base + i * s.w + j];
                    if j + 1 < s.w {
                        acc += (tx.data()[base + i * s.w + j + 1] - here).abs();
                    }
                    if i + 1 < s.h {
                        acc += (tx.data()[base + (i + 1) * s.w + j] - here).abs();
                    }
                }
            }
        }
    }
    let out = Tensor::scalar(acc * norm);
    Ok(g.push_op(out, composed.requires_grad, move |grad, store| {
        let gscale = grad.item() * norm;
        let mut dx = Tensor::zeros(s);
        let d = dx.data_mut();
        for n in 0..s.n {
            for c in 0..s.c {
                let base = (n * s.c + c) * plane;
                let hbase = n * plane;
                for i in 0..s.h {
                    for j in 0..s.w {
                        if hole.data()[hbase + i * s.w + j] == 0.0 {
                            continue;
                        }
                        let here = tx.data()[base + i * s.w + j];
                        if j + 1 < s.w {
                            let sign = (tx.data()[base + i * s.w + j + 1] - here).signum() * gscale;
                            d[base + i * s.w + j + 1] += sign;
                            d[base + i * s.w + j] -= sign;
                        }
                        if i + 1 < s.h {
                            let sign = (tx.data()[base + (i + 1) * s.w + j] - here).signum() * gscale;
                            d[base + (i + 1) * s.w + j] += sign;
                            d[base + i * s.w + j] -= sign;
                        }
                    }
                }
            }
        }
        store.accumulate(composed, dx);
    }))
}

/// Per-term values of one loss evaluation, for logging.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mask: f64,
    pub pixel: f64,
    pub perceptual: f64,
    pub style: f64,
    pub tv: f64,
    pub total: f64,
}

/// Inputs to the combined loss, all living in one graph.
pub struct TotalLossInputs<'a> {
    /// Soft predicted text mask (N,1,H,W), text = 1.
    pub pred_text_soft: Value,
    /// Ground-truth text mask, text = 1, binary.
    pub gt_text: Value,
    /// Network inpainting output.
    pub out_hat: Value,
    /// Text-free ground truth.
    pub out_gt: Value,
    /// Binary hole region (1 = hole) for the TV term, derived from the
    /// binarized predicted mask.
    pub hole_region: &'a Tensor,
    pub extractor: &'a dyn FeatureExtractor,
}

/// Weighted sum of all terms:
/// total = w_mask·L_mask + w_pix·L_pixel + λ_per·L_per + λ_style·L_style + λ_tv·L_tv.
pub fn total_loss(
    g: &mut Graph,
    inputs: &TotalLossInputs,
    w: &LossWeights,
) -> Result<(Value, LossBreakdown), LossError> {
    let l_mask = mask_loss(g, inputs.pred_text_soft, inputs.gt_text, w.lambda_dice)?;
    // the pixel/compose losses take the mask in the 1=valid convention
    let mask_valid = inverted_mask(g, inputs.pred_text_soft);
    let l_pixel = pixel_loss(g, inputs.out_hat, inputs.out_gt, mask_valid, w.hole_pixel_weight)?;
    let composed = compose(g, inputs.out_hat, inputs.out_gt, mask_valid)?;
    let l_per = perceptual_loss(g, inputs.out_hat, composed, inputs.out_gt, inputs.extractor);
    let l_style = style_loss(g, inputs.out_hat, composed, inputs.out_gt, inputs.extractor);
    let l_tv = tv_loss(g, composed, inputs.hole_region)?;

    let breakdown_parts = (
        g.tensor(l_mask).item(),
        g.tensor(l_pixel).item(),
        g.tensor(l_per).item(),
        g.tensor(l_style).item(),
        g.tensor(l_tv).item(),
    );

    let mask_term = g.scale(l_mask, w.mask_weight);
    let pixel_term = g.scale(l_pixel, w.pixel_weight);
    let per_term = g.scale(l_per, w.lambda_perceptual);
    let style_term = g.scale(l_style, w.lambda_style);
    let tv_term = g.scale(l_tv, w.lambda_tv);
    let mut total = g.add(mask_term, pixel_term);
    total = g.add(total, per_term);
    total = g.add(total, style_term);
    total = g.add(total, tv_term);

    let breakdown = LossBreakdown {
        mask: breakdown_parts.0,
        pixel: breakdown_parts.1,
        perceptual: breakdown_parts.2,
        style: breakdown_parts.3,
        tv: breakdown_parts.4,
        total: g.tensor(total).item(),
    };
    Ok((total, breakdown))
}
