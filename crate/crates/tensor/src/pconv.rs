//! Partial convolution: convolution renormalized over the valid-pixel count
//! of each window, with the validity mask updated alongside the features.
//!
//! For a window with mask M: out = Wᵀ(X ⊙ M) · sum(1)/sum(M) + b when
//! sum(M) > 0, else 0; the updated mask is 1 exactly where sum(M) > 0.
//! sum(1) counts the in-bounds taps of the window, so an all-ones mask
//! reproduces a standard zero-padded convolution everywhere, borders
//! included.

use crate::conv::{col2im, conv_out_dim, gemm, im2col};
use crate::graph::{Graph, Value};
use crate::{Shape, Tensor};

/// Per-output-position window sums of a single-channel mask, plus the
/// in-bounds tap count for each position.
#[allow(clippy::too_many_arguments)]
fn mask_window_sums(
    mask: &[f64],
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut sums = vec![0.0; out_h * out_w];
    let mut inb = vec![0.0; out_h * out_w];
    for ho in 0..out_h {
        for wo in 0..out_w {
            let mut s = 0.0;
            let mut cnt = 0.0;
            for ki in 0..kh {
                let hi = (ho * stride + ki) as isize - pad as isize;
                if hi < 0 || hi >= h as isize {
                    continue;
                }
                for kj in 0..kw {
                    let wi = (wo * stride + kj) as isize - pad as isize;
                    if wi < 0 || wi >= w as isize {
                        continue;
                    }
                    s += mask[hi as usize * w + wi as usize];
                    cnt += 1.0;
                }
            }
            sums[ho * out_w + wo] = s;
            inb[ho * out_w + wo] = cnt;
        }
    }
    (sums, inb)
}

impl Graph {
    /// Partial convolution over (features, mask). The mask is (N,1,H,W),
    /// binary, and treated as a constant: no gradient flows through it.
    /// Returns the output features and the updated mask.
    pub fn partial_conv2d(
        &mut self,
        x: Value,
        mask: Value,
        weight: Value,
        bias: Option<Value>,
        stride: usize,
        pad: usize,
    ) -> (Value, Value) {
        let sx = x.shape;
        let sm = mask.shape;
        let sw = weight.shape;
        assert_eq!(sx.c, sw.c, "partial_conv2d channels");
        assert!(sm.n == sx.n && sm.c == 1 && sm.h == sx.h && sm.w == sx.w, "mask shape {} for input {}", sm, sx);
        assert!(!mask.requires_grad, "partial conv mask must be a constant");
        let cout = sw.n;
        let (kh, kw) = (sw.h, sw.w);
        let kk = sx.c * kh * kw;
        let out_h = conv_out_dim(sx.h, kh, stride, pad);
        let out_w = conv_out_dim(sx.w, kw, stride, pad);
        let ncols = out_h * out_w;

        let tx = self.tensor(x).clone();
        let tm = self.tensor(mask).clone();
        let tw = self.tensor(weight).clone();
        let tb = bias.map(|b| self.tensor(b).clone());

        // Mask-gated input, window counts, and renormalization field.
        let plane = sx.h * sx.w;
        let mut xm = tx.clone();
        {
            let d = xm.data_mut();
            for n in 0..sx.n {
                for c in 0..sx.c {
                    let base = (n * sx.c + c) * plane;
                    let mb = n * plane;
                    for i in 0..plane {
                        d[base + i] *= tm.data()[mb + i];
                    }
                }
            }
        }
        let mut ratio = vec![0.0; sx.n * ncols];
        let mut new_mask = Tensor::zeros(Shape::new(sx.n, 1, out_h, out_w));
        {
            let nm = new_mask.data_mut();
            for n in 0..sx.n {
                let (sums, inb) =
                    mask_window_sums(&tm.data()[n * plane..], sx.h, sx.w, kh, kw, stride, pad, out_h, out_w);
                for i in 0..ncols {
                    if sums[i] > 0.0 {
                        ratio[n * ncols + i] = inb[i] / sums[i];
                        nm[n * ncols + i] = 1.0;
                    }
                }
            }
        }

        let mut out = Tensor::zeros(Shape::new(sx.n, cout, out_h, out_w));
        {
            let od = out.data_mut();
            let mut cols = vec![0.0; kk * ncols];
            for n in 0..sx.n {
                im2col(
                    &xm.data()[n * sx.c * plane..],
                    sx.c, sx.h, sx.w, kh, kw, stride, pad, out_h, out_w,
                    &mut cols,
                );
                gemm(
                    cout, kk, ncols,
                    tw.data(), kk as isize, 1,
                    &cols, ncols as isize, 1,
                    0.0,
                    &mut od[n * cout * ncols..(n + 1) * cout * ncols],
                );
                for co in 0..cout {
                    let base = (n * cout + co) * ncols;
                    let b = tb.as_ref().map(|t| t.data()[co]).unwrap_or(0.0);
                    for i in 0..ncols {
                        let r = ratio[n * ncols + i];
                        od[base + i] = if r > 0.0 { od[base + i] * r + b } else { 0.0 };
                    }
                }
            }
        }

        let req = x.requires_grad
            || weight.requires_grad
            || bias.map(|b| b.requires_grad).unwrap_or(false);
        let ratio_arc = std::sync::Arc::new(ratio);
        let out_value = self.push_op(out, req, move |g, store| {
            // gv = g ⊙ ratio, zero at invalid windows; bias sees raw g at
            // valid windows only.
            let mut gv = vec![0.0; cout * ncols];
            let mut dw = weight.requires_grad.then(|| Tensor::zeros(sw));
            let mut dx = x.requires_grad.then(|| Tensor::zeros(sx));
            let mut db = bias
                .filter(|b| b.requires_grad)
                .map(|b| Tensor::zeros(b.shape));
            let mut cols = vec![0.0; kk * ncols];
            let mut gcols = vec![0.0; kk * ncols];
            for n in 0..sx.n {
                for co in 0..cout {
                    let base = (n * cout + co) * ncols;
                    for i in 0..ncols {
                        let r = ratio_arc[n * ncols + i];
                        gv[co * ncols + i] = if r > 0.0 { g.data()[base + i] * r } else { 0.0 };
                    }
                }
                if let Some(dw) = &mut dw {
                    im2col(
                        &xm.data()[n * sx.c * plane..],
                        sx.c, sx.h, sx.w, kh, kw, stride, pad, out_h, out_w,
                        &mut cols,
                    );
                    gemm(
                        cout, ncols, kk,
                        &gv, ncols as isize, 1,
                        &cols, 1, ncols as isize,
                        1.0,
                        dw.data_mut(),
                    );
                }
                if let Some(dx) = &mut dx {
                    gemm(
                        kk, cout, ncols,
                        tw.data(), 1, kk as isize,
                        &gv, ncols as isize, 1,
                        0.0,
                        &mut gcols,
                    );
                    let dxd = dx.data_mut();
                    col2im(
                        &gcols,
                        sx.c, sx.h, sx.w, kh, kw, stride, pad, out_h, out_w,
                        &mut dxd[n * sx.c * plane..(n + 1) * sx.c * plane],
                    );
                }
                if let Some(db) = &mut db {
                    let dbd = db.data_mut();
                    for co in 0..cout {
                        let base = (n * cout + co) * ncols;
                        let mut acc = 0.0;
                        for i in 0..ncols {
                            if ratio_arc[n * ncols + i] > 0.0 {
                                acc += g.data()[base + i];
                            }
                        }
                        dbd[co] += acc;
                    }
                }
            }
            if let (Some(dx), true) = (&mut dx, x.requires_grad) {
                // chain through the mask gating
                let d = dx.data_mut();
                for n in 0..sx.n {
                    for c in 0..sx.c {
                        let base = (n * sx.c + c) * plane;
                        let mb = n * plane;
                        for i in 0..plane {
                            d[base + i] *= tm.data()[mb + i];
                        }
                    }
                }
            }
            if let Some(dw) = dw {
                store.accumulate(weight, dw);
            }
            if let Some(dx) = dx {
                store.accumulate(x, dx);
            }
            if let (Some(db), Some(b)) = (db, bias) {
                store.accumulate(b, db);
            }
        });
        let mask_value = self.constant(new_mask);
        (out_value, mask_value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::fd_check_with;
    use crate::Rng;

    fn random_binary_mask(shape: Shape, p_valid: f64, seed: u64) -> Tensor {
        let mut rng = Rng::seed_from(seed);
        Tensor::from_fn(shape, |_, _, _, _| if rng.chance(p_valid) { 1.0 } else { 0.0 })
    }

    #[test]
    fn all_ones_mask_equals_standard_conv() {
        let mut rng = Rng::seed_from(0xD0);
        let x0 = Tensor::randn(Shape::new(2, 3, 6, 7), 1.0, &mut rng);
        let w0 = Tensor::randn(Shape::new(4, 3, 3, 3), 0.7, &mut rng);
        let b0 = Tensor::randn(Shape::new(1, 4, 1, 1), 0.3, &mut rng);
        let ones = Tensor::full(Shape::new(2, 1, 6, 7), 1.0);

        let mut g = Graph::new();
        let x = g.constant(x0);
        let w = g.constant(w0);
        let b = g.constant(b0);
        let m = g.constant(ones);
        let (y, m2) = g.partial_conv2d(x, m, w, Some(b), 1, 1);
        let y_std = g.conv2d(x, w, Some(b), 1, 1);
        assert!(g.tensor(y).max_abs_diff(g.tensor(y_std)) < 1e-12);
        assert!(g.tensor(m2).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_window_outputs_exact_zero() {
        let x0 = Tensor::full(Shape::new(1, 2, 5, 5), 3.0);
        let zeros = Tensor::zeros(Shape::new(1, 1, 5, 5));
        let w0 = Tensor::full(Shape::new(2, 2, 3, 3), 1.0);
        let b0 = Tensor::full(Shape::new(1, 2, 1, 1), 0.5);

        let mut g = Graph::new();
        let x = g.constant(x0);
        let m = g.constant(zeros);
        let w = g.constant(w0);
        let b = g.constant(b0);
        let (y, m2) = g.partial_conv2d(x, m, w, Some(b), 1, 1);
        assert!(g.tensor(y).iter().all(|&v| v == 0.0));
        assert!(g.tensor(m2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn renormalizes_by_valid_count() {
        // 3x3 ones kernel, bias 0, window holding exactly 3 valid pixels of
        // value v: output = 3v * 9/3 = 9v at the center position.
        let v = 0.7;
        let mut x0 = Tensor::zeros(Shape::new(1, 1, 5, 5));
        let mut m0 = Tensor::zeros(Shape::new(1, 1, 5, 5));
        for (h, w) in [(1usize, 1usize), (2, 2), (1, 3)] {
            x0.set(0, 0, h, w, v);
            m0.set(0, 0, h, w, 1.0);
        }
        let w0 = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let mut g = Graph::new();
        let x = g.constant(x0);
        let m = g.constant(m0);
        let w = g.constant(w0);
        let (y, _) = g.partial_conv2d(x, m, w, None, 1, 1);
        let got = g.tensor(y).at(0, 0, 2, 2);
        assert!((got - 9.0 * v).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn stride1_mask_update_never_shrinks_valid_set() {
        let m0 = random_binary_mask(Shape::new(1, 1, 8, 8), 0.4, 0xD1);
        let x0 = Tensor::full(Shape::new(1, 1, 8, 8), 1.0);
        let w0 = Tensor::full(Shape::new(1, 1, 3, 3), 0.1);
        let mut g = Graph::new();
        let x = g.constant(x0);
        let m = g.constant(m0.clone());
        let w = g.constant(w0);
        let (_, m2) = g.partial_conv2d(x, m, w, None, 1, 1);
        for i in 0..m0.numel() {
            if m0.data()[i] == 1.0 {
                assert_eq!(g.tensor(m2).data()[i], 1.0);
            }
        }
    }

    #[test]
    fn backward_matches_fd_with_holes() {
        let mut rng = Rng::seed_from(0xD2);
        let x0 = Tensor::randn(Shape::new(1, 2, 6, 6), 1.0, &mut rng);
        let w0 = Tensor::randn(Shape::new(3, 2, 3, 3), 0.5, &mut rng);
        let b0 = Tensor::randn(Shape::new(1, 3, 1, 1), 0.5, &mut rng);
        let m0 = random_binary_mask(Shape::new(1, 1, 6, 6), 0.6, 0xD3);
        fd_check_with(vec![x0, w0, b0], move |g, vals| {
            let m = g.constant(m0.clone());
            let (y, _) = g.partial_conv2d(vals[0], m, vals[1], Some(vals[2]), 2, 1);
            let y = g.mul(y, y);
            g.mean_all(y)
        });
    }
}
