//! Spatial resampling ops: 2×2 max pooling and nearest-neighbor ×2 upsampling.

use crate::graph::{Graph, Value};
use crate::{Shape, Tensor};

impl Graph {
    /// 2×2 max pool with stride 2. Odd trailing rows/columns are dropped.
    pub fn maxpool2(&mut self, x: Value) -> Value {
        let s = x.shape;
        let (oh, ow) = (s.h / 2, s.w / 2);
        assert!(oh > 0 && ow > 0, "maxpool2 on {}", s);
        let tx = self.tensor(x).clone();
        let out_shape = Shape::new(s.n, s.c, oh, ow);
        let mut out = Tensor::zeros(out_shape);
        let mut argmax = vec![0usize; out_shape.numel()];
        {
            let od = out.data_mut();
            for n in 0..s.n {
                for c in 0..s.c {
                    let ib = (n * s.c + c) * s.h * s.w;
                    let ob = (n * s.c + c) * oh * ow;
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0;
                            for di in 0..2 {
                                for dj in 0..2 {
                                    let idx = ib + (2 * i + di) * s.w + (2 * j + dj);
                                    if tx.data()[idx] > best {
                                        best = tx.data()[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            od[ob + i * ow + j] = best;
                            argmax[ob + i * ow + j] = best_idx;
                        }
                    }
                }
            }
        }
        self.push_op(out, x.requires_grad, move |g, store| {
            let mut dx = Tensor::zeros(s);
            let d = dx.data_mut();
            for (o, &src) in argmax.iter().enumerate() {
                d[src] += g.data()[o];
            }
            store.accumulate(x, dx);
        })
    }

    /// Nearest-neighbor ×2 upsampling.
    pub fn upsample2(&mut self, x: Value) -> Value {
        let s = x.shape;
        let out_shape = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
        let tx = self.tensor(x).clone();
        let mut out = Tensor::zeros(out_shape);
        {
            let od = out.data_mut();
            for n in 0..s.n {
                for c in 0..s.c {
                    let ib = (n * s.c + c) * s.h * s.w;
                    let ob = (n * s.c + c) * out_shape.h * out_shape.w;
                    for i in 0..out_shape.h {
                        for j in 0..out_shape.w {
                            od[ob + i * out_shape.w + j] = tx.data()[ib + (i / 2) * s.w + j / 2];
                        }
                    }
                }
            }
        }
        self.push_op(out, x.requires_grad, move |g, store| {
            let mut dx = Tensor::zeros(s);
            let d = dx.data_mut();
            for n in 0..s.n {
                for c in 0..s.c {
                    let ib = (n * s.c + c) * s.h * s.w;
                    let ob = (n * s.c + c) * out_shape.h * out_shape.w;
                    for i in 0..out_shape.h {
                        for j in 0..out_shape.w {
                            d[ib + (i / 2) * s.w + j / 2] += g.data()[ob + i * out_shape.w + j];
                        }
                    }
                }
            }
            store.accumulate(x, dx);
        })
    }
}

/// Nearest-neighbor ×2 on a plain tensor (used for propagating binary masks
/// outside the autodiff graph).
pub fn upsample2_value(x: &Tensor) -> Tensor {
    let s = x.shape();
    let out_shape = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    Tensor::from_fn(out_shape, |n, c, h, w| x.at(n, c, h / 2, w / 2))
}
