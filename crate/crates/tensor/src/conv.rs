//! conv2d / conv_transpose2d via im2col + GEMM.
//!
//! Weight layouts: conv2d uses (Cout, Cin, kh, kw); conv_transpose2d uses
//! (Cin, Cout, kh, kw). Bias tensors are (1, C, 1, 1).

use crate::graph::{Graph, Value};
use crate::par;
use crate::{Shape, Tensor};

/// Output extent of a strided convolution.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Gather k×k patches of one image plane-stack into a (C*kh*kw, out_h*out_w)
/// column matrix. Out-of-bounds taps read as zero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    cols: &mut [f64],
) {
    let ncols = out_h * out_w;
    debug_assert_eq!(cols.len(), c * kh * kw * ncols);
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * ncols;
                for ho in 0..out_h {
                    let hi = (ho * stride + ki) as isize - pad as isize;
                    let dst = row + ho * out_w;
                    if hi < 0 || hi >= h as isize {
                        cols[dst..dst + out_w].fill(0.0);
                        continue;
                    }
                    let src_row = (ci * h + hi as usize) * w;
                    for wo in 0..out_w {
                        let wi = (wo * stride + kj) as isize - pad as isize;
                        cols[dst + wo] = if wi < 0 || wi >= w as isize {
                            0.0
                        } else {
                            x[src_row + wi as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter a column matrix back onto an image, accumulating overlaps.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    x: &mut [f64],
) {
    let ncols = out_h * out_w;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * ncols;
                for ho in 0..out_h {
                    let hi = (ho * stride + ki) as isize - pad as isize;
                    if hi < 0 || hi >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + hi as usize) * w;
                    for wo in 0..out_w {
                        let wi = (wo * stride + kj) as isize - pad as isize;
                        if wi >= 0 && wi < w as isize {
                            x[dst_row + wi as usize] += cols[row + ho * out_w + wo];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major GEMM: c(m×n) += a(m×n_k) · b(n_k×n), with arbitrary strides on
/// a and b so transposed views come for free. Splits the n axis across
/// workers when it pays off; the column ranges write disjoint elements of c.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    let flops = 2 * m * k * n;
    let c_addr = c.as_mut_ptr() as usize;
    let a_addr = a.as_ptr() as usize;
    let b_addr = b.as_ptr() as usize;
    let run = move |j0: usize, j1: usize| {
        let nn = j1 - j0;
        if nn == 0 {
            return;
        }
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                nn,
                1.0,
                a_addr as *const f64,
                rsa,
                csa,
                (b_addr as *const f64).offset(csb * j0 as isize),
                rsb,
                csb,
                beta,
                (c_addr as *mut f64).add(j0),
                n as isize,
                1,
            );
        }
    };
    if flops < 1 << 20 || n < 64 {
        run(0, n);
    } else {
        par::for_each_range(n, move |r| run(r.start, r.end));
    }
}

impl Graph {
    /// Standard 2-D convolution with zero padding.
    pub fn conv2d(
        &mut self,
        x: Value,
        weight: Value,
        bias: Option<Value>,
        stride: usize,
        pad: usize,
    ) -> Value {
        let sx = x.shape;
        let sw = weight.shape;
        assert_eq!(sx.c, sw.c, "conv2d: input channels {} != weight {}", sx.c, sw.c);
        let (cout, kk) = (sw.n, sw.c * sw.h * sw.w);
        let out_h = conv_out_dim(sx.h, sw.h, stride, pad);
        let out_w = conv_out_dim(sx.w, sw.w, stride, pad);
        let ncols = out_h * out_w;

        let tx = self.tensor(x).clone();
        let tw = self.tensor(weight).clone();
        let mut out = Tensor::zeros(Shape::new(sx.n, cout, out_h, out_w));
        {
            let od = out.data_mut();
            let mut cols = vec![0.0; kk * ncols];
            for n in 0..sx.n {
                im2col(
                    &tx.data()[n * sx.c * sx.h * sx.w..],
                    sx.c, sx.h, sx.w, sw.h, sw.w, stride, pad, out_h, out_w,
                    &mut cols,
                );
                gemm(
                    cout, kk, ncols,
                    tw.data(), kk as isize, 1,
                    &cols, ncols as isize, 1,
                    0.0,
                    &mut od[n * cout * ncols..(n + 1) * cout * ncols],
                );
            }
            if let Some(b) = bias {
                let tb = self.tensor(b);
                assert_eq!(tb.numel(), cout, "bias length");
                for n in 0..sx.n {
                    for co in 0..cout {
                        let add = tb.data()[co];
                        for v in &mut od[(n * cout + co) * ncols..(n * cout + co + 1) * ncols] {
                            *v += add;
                        }
                    }
                }
            }
        }

        let req = x.requires_grad
            || weight.requires_grad
            || bias.map(|b| b.requires_grad).unwrap_or(false);
        self.push_op(out, req, move |g, store| {
            let (kh, kw) = (sw.h, sw.w);
            if weight.requires_grad {
                let mut dw = Tensor::zeros(sw);
                let dwd = dw.data_mut();
                let mut cols = vec![0.0; kk * ncols];
                for n in 0..sx.n {
                    im2col(
                        &tx.data()[n * sx.c * sx.h * sx.w..],
                        sx.c, sx.h, sx.w, kh, kw, stride, pad, out_h, out_w,
                        &mut cols,
                    );
                    // dW(cout×kk) += g_n(cout×ncols) · colsᵀ(ncols×kk)
                    gemm(
                        cout, ncols, kk,
                        &g.data()[n * cout * ncols..], ncols as isize, 1,
                        &cols, 1, ncols as isize,
                        1.0,
                        dwd,
                    );
                }
                store.accumulate(weight, dw);
            }
            if x.requires_grad {
                let mut dx = Tensor::zeros(sx);
                let dxd = dx.data_mut();
                let mut gcols = vec![0.0; kk * ncols];
                for n in 0..sx.n {
                    // cols_g(kk×ncols) = wᵀ(kk×cout) · g_n(cout×ncols)
                    gemm(
                        kk, cout, ncols,
                        tw.data(), 1, kk as isize,
                        &g.data()[n * cout * ncols..], ncols as isize, 1,
                        0.0,
                        &mut gcols,
                    );
                    col2im(
                        &gcols,
                        sx.c, sx.h, sx.w, kh, kw, stride, pad, out_h, out_w,
                        &mut dxd[n * sx.c * sx.h * sx.w..(n + 1) * sx.c * sx.h * sx.w],
                    );
                }
                store.accumulate(x, dx);
            }
            if let Some(b) = bias {
                if b.requires_grad {
                    let mut db = Tensor::zeros(b.shape);
                    let dbd = db.data_mut();
                    for n in 0..sx.n {
                        for co in 0..cout {
                            dbd[co] += g.data()[(n * cout + co) * ncols..(n * cout + co + 1) * ncols]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                    store.accumulate(b, db);
                }
            }
        })
    }

    /// Transposed (fractionally strided) convolution. With stride 2, k 3,
    /// pad 1 and output_pad 1 it exactly doubles the spatial extent.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose2d(
        &mut self,
        x: Value,
        weight: Value,
        bias: Option<Value>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Value {
        let sx = x.shape;
        let sw = weight.shape; // (Cin, Cout, kh, kw)
        assert_eq!(sx.c, sw.n, "conv_transpose2d: input channels {} != weight {}", sx.c, sw.n);
        let cout = sw.c;
        let (kh, kw) = (sw.h, sw.w);
        let out_h = (sx.h - 1) * stride + kh + output_pad - 2 * pad;
        let out_w = (sx.w - 1) * stride + kw + output_pad - 2 * pad;
        let coutkk = cout * kh * kw;
        let ncols = sx.h * sx.w;

        let tx = self.tensor(x).clone();
        let tw = self.tensor(weight).clone();
        let mut out = Tensor::zeros(Shape::new(sx.n, cout, out_h, out_w));
        {
            let od = out.data_mut();
            let mut cols = vec![0.0; coutkk * ncols];
            for n in 0..sx.n {
                // cols(coutkk×ncols) = wᵀ(coutkk×cin) · x_n(cin×ncols)
                gemm(
                    coutkk, sx.c, ncols,
                    tw.data(), 1, coutkk as isize,
                    &tx.data()[n * sx.c * ncols..], ncols as isize, 1,
                    0.0,
                    &mut cols,
                );
                col2im(
                    &cols,
                    cout, out_h, out_w, kh, kw, stride, pad, sx.h, sx.w,
                    &mut od[n * cout * out_h * out_w..(n + 1) * cout * out_h * out_w],
                );
            }
            if let Some(b) = bias {
                let tb = self.tensor(b);
                for n in 0..sx.n {
                    for co in 0..cout {
                        let add = tb.data()[co];
                        let base = (n * cout + co) * out_h * out_w;
                        for v in &mut od[base..base + out_h * out_w] {
                            *v += add;
                        }
                    }
                }
            }
        }

        let req = x.requires_grad
            || weight.requires_grad
            || bias.map(|b| b.requires_grad).unwrap_or(false);
        self.push_op(out, req, move |g, store| {
            let mut gcols = vec![0.0; coutkk * ncols];
            let mut gcols_ready = false;
            let fill_gcols = |gcols: &mut Vec<f64>, n: usize| {
                im2col(
                    &g.data()[n * cout * out_h * out_w..],
                    cout, out_h, out_w, kh, kw, stride, pad, sx.h, sx.w,
                    gcols,
                );
            };
            if x.requires_grad {
                let mut dx = Tensor::zeros(sx);
                let dxd = dx.data_mut();
                for n in 0..sx.n {
                    fill_gcols(&mut gcols, n);
                    // dx_n(cin×ncols) = w(cin×coutkk) · gcols(coutkk×ncols)
                    gemm(
                        sx.c, coutkk, ncols,
                        tw.data(), coutkk as isize, 1,
                        &gcols, ncols as isize, 1,
                        0.0,
                        &mut dxd[n * sx.c * ncols..(n + 1) * sx.c * ncols],
                    );
                    gcols_ready = sx.n == 1;
                }
                store.accumulate(x, dx);
            }
            if weight.requires_grad {
                let mut dw = Tensor::zeros(sw);
                let dwd = dw.data_mut();
                for n in 0..sx.n {
                    if !gcols_ready {
                        fill_gcols(&mut gcols, n);
                    }
                    // dW(cin×coutkk) += x_n(cin×ncols) · gcolsᵀ(ncols×coutkk)
                    gemm(
                        sx.c, ncols, coutkk,
                        &tx.data()[n * sx.c * ncols..], ncols as isize, 1,
                        &gcols, 1, ncols as isize,
                        1.0,
                        dwd,
                    );
                }
                store.accumulate(weight, dw);
            }
            if let Some(b) = bias {
                if b.requires_grad {
                    let mut db = Tensor::zeros(b.shape);
                    let dbd = db.data_mut();
                    let plane = out_h * out_w;
                    for n in 0..sx.n {
                        for co in 0..cout {
                            dbd[co] += g.data()[(n * cout + co) * plane..(n * cout + co + 1) * plane]
                                .iter()
                                .sum::<f64>();
                        }
                    }
                    store.accumulate(b, db);
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::fd_check_with;
    use crate::Rng;

    #[test]
    fn conv_out_dims_halve_with_same_padding() {
        for (h, k) in [(128, 3), (128, 7), (64, 5)] {
            assert_eq!(conv_out_dim(h, k, 2, k / 2), h / 2);
        }
        assert_eq!(conv_out_dim(128, 3, 1, 1), 128);
    }

    #[test]
    fn conv2d_matches_hand_computation() {
        // 1x1x3x3 input, 3x3 kernel of ones, pad 1: center output = sum of all.
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, h, w| {
            (h * 3 + w) as f64
        }));
        let w = g.constant(Tensor::full(Shape::new(1, 1, 3, 3), 1.0));
        let y = g.conv2d(x, w, None, 1, 1);
        assert_eq!(g.tensor(y).at(0, 0, 1, 1), 36.0);
        // corner (0,0): taps (0,0),(0,1),(1,0),(1,1) = 0+1+3+4
        assert_eq!(g.tensor(y).at(0, 0, 0, 0), 8.0);
    }

    #[test]
    fn conv2d_single_filter_param_count_example() {
        // 3x3 conv, 3 -> 8 channels with bias: 3*3*3*8 + 8 = 224 scalars
        let w = Tensor::zeros(Shape::new(8, 3, 3, 3));
        let b = Tensor::zeros(Shape::new(1, 8, 1, 1));
        assert_eq!(w.numel() + b.numel(), 224);
    }

    #[test]
    fn conv2d_backward_matches_fd() {
        let mut rng = Rng::seed_from(0xB0);
        let x0 = Tensor::randn(Shape::new(2, 3, 5, 6), 1.0, &mut rng);
        let w0 = Tensor::randn(Shape::new(4, 3, 3, 3), 0.5, &mut rng);
        let b0 = Tensor::randn(Shape::new(1, 4, 1, 1), 0.5, &mut rng);
        fd_check_with(vec![x0, w0, b0], |g, vals| {
            let y = g.conv2d(vals[0], vals[1], Some(vals[2]), 2, 1);
            let y = g.mul(y, y);
            g.mean_all(y)
        });
    }

    #[test]
    fn conv_transpose2d_doubles_extent_and_matches_fd() {
        let mut rng = Rng::seed_from(0xB1);
        let x0 = Tensor::randn(Shape::new(1, 3, 4, 5), 1.0, &mut rng);
        let w0 = Tensor::randn(Shape::new(3, 2, 3, 3), 0.5, &mut rng);
        let b0 = Tensor::randn(Shape::new(1, 2, 1, 1), 0.5, &mut rng);
        {
            let mut g = Graph::new();
            let x = g.constant(x0.clone());
            let w = g.constant(w0.clone());
            let y = g.conv_transpose2d(x, w, None, 2, 1, 1);
            assert_eq!(y.shape, Shape::new(1, 2, 8, 10));
        }
        fd_check_with(vec![x0, w0, b0], |g, vals| {
            let y = g.conv_transpose2d(vals[0], vals[1], Some(vals[2]), 2, 1, 1);
            let y = g.mul(y, y);
            g.mean_all(y)
        });
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> for zero-pad correlation pairs.
        let mut rng = Rng::seed_from(0xB2);
        let x0 = Tensor::randn(Shape::new(1, 2, 6, 6), 1.0, &mut rng);
        let y0 = Tensor::randn(Shape::new(1, 3, 3, 3), 1.0, &mut rng);
        let w0 = Tensor::randn(Shape::new(3, 2, 3, 3), 1.0, &mut rng);

        let mut g = Graph::new();
        let x = g.constant(x0.clone());
        let w = g.constant(w0.clone());
        let cx = g.conv2d(x, w, None, 2, 1); // (1,3,3,3)
        let lhs: f64 = g
            .tensor(cx)
            .iter()
            .zip(y0.iter())
            .map(|(a, b)| a * b)
            .sum();

        // convT weight layout is (Cin=3, Cout=2, kh, kw); w0 is (3,2,3,3) already.
        let y = g.constant(y0);
        let wt = g.constant(w0);
        let cty = g.conv_transpose2d(y, wt, None, 2, 1, 1); // (1,2,6,6)
        let rhs: f64 = g
            .tensor(cty)
            .iter()
            .zip(x0.iter())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-9, "lhs {lhs} rhs {rhs}");
    }
}
