//! Elementwise, reduction, and broadcast ops on the autodiff graph.

use crate::graph::{Graph, Value};
use crate::{Shape, Tensor};

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch: {} vs {}", a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data)
}

impl Graph {
    pub fn add(&mut self, a: Value, b: Value) -> Value {
        let out = zip_map(self.tensor(a), self.tensor(b), |x, y| x + y);
        let req = a.requires_grad || b.requires_grad;
        self.push_op(out, req, move |g, store| {
            store.accumulate(a, g.clone());
            store.accumulate(b, g.clone());
        })
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Value {
        let out = zip_map(self.tensor(a), self.tensor(b), |x, y| x - y);
        let req = a.requires_grad || b.requires_grad;
        self.push_op(out, req, move |g, store| {
            store.accumulate(a, g.clone());
            store.accumulate(b, g.map(|v| -v));
        })
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Value {
        let ta = self.tensor(a).clone();
        let tb = self.tensor(b).clone();
        let out = zip_map(&ta, &tb, |x, y| x * y);
        let req = a.requires_grad || b.requires_grad;
        self.push_op(out, req, move |g, store| {
            if a.requires_grad {
                store.accumulate(a, zip_map(g, &tb, |gv, y| gv * y));
            }
            if b.requires_grad {
                store.accumulate(b, zip_map(g, &ta, |gv, x| gv * x));
            }
        })
    }

    pub fn div(&mut self, a: Value, b: Value) -> Value {
        let ta = self.tensor(a).clone();
        let tb = self.tensor(b).clone();
        let out = zip_map(&ta, &tb, |x, y| x / y);
        let req = a.requires_grad || b.requires_grad;
        self.push_op(out, req, move |g, store| {
            if a.requires_grad {
                store.accumulate(a, zip_map(g, &tb, |gv, y| gv / y));
            }
            if b.requires_grad {
                let mut d = zip_map(&ta, &tb, |x, y| -x / (y * y));
                d = zip_map(&d, g, |dv, gv| dv * gv);
                store.accumulate(b, d);
            }
        })
    }

    pub fn scale(&mut self, x: Value, k: f64) -> Value {
        let out = self.tensor(x).map(|v| v * k);
        self.push_op(out, x.requires_grad, move |g, store| {
            store.accumulate(x, g.map(|v| v * k));
        })
    }

    pub fn add_const(&mut self, x: Value, k: f64) -> Value {
        let out = self.tensor(x).map(|v| v + k);
        self.push_op(out, x.requires_grad, move |g, store| {
            store.accumulate(x, g.clone());
        })
    }

    pub fn relu(&mut self, x: Value) -> Value {
        let tx = self.tensor(x).clone();
        let out = tx.map(|v| v.max(0.0));
        self.push_op(out, x.requires_grad, move |g, store| {
            store.accumulate(x, zip_map(g, &tx, |gv, v| if v > 0.0 { gv } else { 0.0 }));
        })
    }

    pub fn sigmoid(&mut self, x: Value) -> Value {
        let out = self.tensor(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let ty = out.clone();
        self.push_op(out, x.requires_grad, move |g, store| {
            store.accumulate(x, zip_map(g, &ty, |gv, y| gv * y * (1.0 - y)));
        })
    }

    pub fn abs(&mut self, x: Value) -> Value {
        let tx = self.tensor(x).clone();
        let out = tx.map(f64::abs);
        self.push_op(out, x.requires_grad, move |g, store| {
            store.accumulate(x, zip_map(g, &tx, |gv, v| gv * v.signum()));
        })
    }

    pub fn sum_all(&mut self, x: Value) -> Value {
        let s: f64 = self.tensor(x).iter().sum();
        let shape = x.shape;
        self.push_op(Tensor::scalar(s), x.requires_grad, move |g, store| {
            store.accumulate(x, Tensor::full(shape, g.item()));
        })
    }

    pub fn mean_all(&mut self, x: Value) -> Value {
        let n = x.shape.numel() as f64;
        let s: f64 = self.tensor(x).iter().sum();
        let shape = x.shape;
        self.push_op(Tensor::scalar(s / n), x.requires_grad, move |g, store| {
            store.accumulate(x, Tensor::full(shape, g.item() / n));
        })
    }

    /// Multiply (N,C,H,W) features by a (N,1,H,W) map broadcast over channels.
    pub fn mul_mask(&mut self, x: Value, m: Value) -> Value {
        let (sx, sm) = (x.shape, m.shape);
        assert_eq!(sm.c, 1, "mask must be single-channel");
        assert!(sx.n == sm.n && sx.h == sm.h && sx.w == sm.w, "mul_mask {} vs {}", sx, sm);
        let tx = self.tensor(x).clone();
        let tm = self.tensor(m).clone();
        let out = broadcast_mul(&tx, &tm);
        let req = x.requires_grad || m.requires_grad;
        self.push_op(out, req, move |g, store| {
            if x.requires_grad {
                store.accumulate(x, broadcast_mul(g, &tm));
            }
            if m.requires_grad {
                // dm[n,hw] = sum_c g[n,c,hw] * x[n,c,hw]
                let mut dm = Tensor::zeros(sm);
                let plane = sx.h * sx.w;
                let d = dm.data_mut();
                for n in 0..sx.n {
                    for c in 0..sx.c {
                        let base = (n * sx.c + c) * plane;
                        for i in 0..plane {
                            d[n * plane + i] += g.data()[base + i] * tx.data()[base + i];
                        }
                    }
                }
                store.accumulate(m, dm);
            }
        })
    }

    /// Add a (N,C,1,1) vector to every spatial position of (N,C,H,W).
    pub fn add_cvec(&mut self, x: Value, v: Value) -> Value {
        let (sx, sv) = (x.shape, v.shape);
        assert!(sv.n == sx.n && sv.c == sx.c && sv.h == 1 && sv.w == 1, "add_cvec {} vs {}", sx, sv);
        let tv = self.tensor(v).clone();
        let tx = self.tensor(x).clone();
        let plane = sx.h * sx.w;
        let mut out = tx.clone();
        {
            let d = out.data_mut();
            for n in 0..sx.n {
                for c in 0..sx.c {
                    let add = tv.data()[n * sx.c + c];
                    let base = (n * sx.c + c) * plane;
                    for slot in &mut d[base..base + plane] {
                        *slot += add;
                    }
                }
            }
        }
        let req = x.requires_grad || v.requires_grad;
        self.push_op(out, req, move |g, store| {
            if x.requires_grad {
                store.accumulate(x, g.clone());
            }
            if v.requires_grad {
                let mut dv = Tensor::zeros(sv);
                let d = dv.data_mut();
                for n in 0..sx.n {
                    for c in 0..sx.c {
                        let base = (n * sx.c + c) * plane;
                        d[n * sx.c + c] = g.data()[base..base + plane].iter().sum();
                    }
                }
                store.accumulate(v, dv);
            }
        })
    }

    /// Per-pixel mean over channels: (N,C,H,W) -> (N,1,H,W).
    pub fn mean_channels(&mut self, x: Value) -> Value {
        let s = x.shape;
        let plane = s.h * s.w;
        let tx = self.tensor(x).clone();
        let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
        {
            let d = out.data_mut();
            for n in 0..s.n {
                for c in 0..s.c {
                    let base = (n * s.c + c) * plane;
                    for i in 0..plane {
                        d[n * plane + i] += tx.data()[base + i];
                    }
                }
            }
            for v in d.iter_mut() {
                *v /= s.c as f64;
            }
        }
        self.push_op(out, x.requires_grad, move |g, store| {
            let mut dx = Tensor::zeros(s);
            let d = dx.data_mut();
            let k = 1.0 / s.c as f64;
            for n in 0..s.n {
                for c in 0..s.c {
                    let base = (n * s.c + c) * plane;
                    for i in 0..plane {
                        d[base + i] = g.data()[n * plane + i] * k;
                    }
                }
            }
            store.accumulate(x, dx);
        })
    }

    /// Concatenate along the channel axis.
    pub fn concat_c(&mut self, a: Value, b: Value) -> Value {
        let (sa, sb) = (a.shape, b.shape);
        assert!(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w, "concat_c {} vs {}", sa, sb);
        let out_shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        let plane = sa.h * sa.w;
        let ta = self.tensor(a).clone();
        let tb = self.tensor(b).clone();
        let mut out = Tensor::zeros(out_shape);
        {
            let d = out.data_mut();
            for n in 0..sa.n {
                let dst = n * out_shape.c * plane;
                let src_a = n * sa.c * plane;
                let src_b = n * sb.c * plane;
                d[dst..dst + sa.c * plane].copy_from_slice(&ta.data()[src_a..src_a + sa.c * plane]);
                d[dst + sa.c * plane..dst + (sa.c + sb.c) * plane]
                    .copy_from_slice(&tb.data()[src_b..src_b + sb.c * plane]);
            }
        }
        let req = a.requires_grad || b.requires_grad;
        self.push_op(out, req, move |g, store| {
            if a.requires_grad {
                let mut da = Tensor::zeros(sa);
                let d = da.data_mut();
                for n in 0..sa.n {
                    let src = n * out_shape.c * plane;
                    d[n * sa.c * plane..(n + 1) * sa.c * plane]
                        .copy_from_slice(&g.data()[src..src + sa.c * plane]);
                }
                store.accumulate(a, da);
            }
            if b.requires_grad {
                let mut db = Tensor::zeros(sb);
                let d = db.data_mut();
                for n in 0..sb.n {
                    let src = n * out_shape.c * plane + sa.c * plane;
                    d[n * sb.c * plane..(n + 1) * sb.c * plane]
                        .copy_from_slice(&g.data()[src..src + sb.c * plane]);
                }
                store.accumulate(b, db);
            }
        })
    }

    /// Gram matrix per sample: G[n,i,j] = sum_hw x[n,i,hw] x[n,j,hw] / (C*H*W).
    pub fn gram(&mut self, x: Value) -> Value {
        let s = x.shape;
        let plane = s.h * s.w;
        let norm = (s.c * s.h * s.w) as f64;
        let tx = self.tensor(x).clone();
        let mut out = Tensor::zeros(Shape::new(s.n, s.c, s.c, 1));
        {
            let d = out.data_mut();
            for n in 0..s.n {
                for i in 0..s.c {
                    let bi = (n * s.c + i) * plane;
                    for j in i..s.c {
                        let bj = (n * s.c + j) * plane;
                        let mut acc = 0.0;
                        for p in 0..plane {
                            acc += tx.data()[bi + p] * tx.data()[bj + p];
                        }
                        acc /= norm;
                        d[(n * s.c + i) * s.c + j] = acc;
                        d[(n * s.c + j) * s.c + i] = acc;
                    }
                }
            }
        }
        self.push_op(out, x.requires_grad, move |g, store| {
            // dx[n,i,p] = sum_j (g[n,i,j] + g[n,j,i]) x[n,j,p] / norm
            let mut dx = Tensor::zeros(s);
            let d = dx.data_mut();
            for n in 0..s.n {
                for i in 0..s.c {
                    let bi = (n * s.c + i) * plane;
                    for j in 0..s.c {
                        let coef =
                            (g.data()[(n * s.c + i) * s.c + j] + g.data()[(n * s.c + j) * s.c + i]) / norm;
                        if coef == 0.0 {
                            continue;
                        }
                        let bj = (n * s.c + j) * plane;
                        for p in 0..plane {
                            d[bi + p] += coef * tx.data()[bj + p];
                        }
                    }
                }
            }
            store.accumulate(x, dx);
        })
    }

    /// Mean absolute difference, the L1 reduction used by the losses.
    pub fn l1_mean(&mut self, a: Value, b: Value) -> Value {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean_all(d)
    }
}

fn broadcast_mul(x: &Tensor, m: &Tensor) -> Tensor {
    let sx = x.shape();
    let plane = sx.h * sx.w;
    let mut out = x.clone();
    let d = out.data_mut();
    for n in 0..sx.n {
        for c in 0..sx.c {
            let base = (n * sx.c + c) * plane;
            let mbase = n * plane;
            for i in 0..plane {
                d[base + i] *= m.data()[mbase + i];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::fd_check;

    #[test]
    fn elementwise_backward_matches_fd() {
        let shape = Shape::new(1, 2, 3, 3);
        fd_check(shape, 0xA1, |g, x| {
            let y = g.sigmoid(x);
            let z = g.mul(y, x);
            let z = g.add_const(z, 0.3);
            let z = g.relu(z);
            g.mean_all(z)
        });
    }

    #[test]
    fn div_backward_matches_fd() {
        let shape = Shape::new(1, 1, 2, 2);
        fd_check(shape, 0xA2, |g, x| {
            let num = g.add_const(x, 2.0);
            let den = g.add_const(x, 5.0);
            let q = g.div(num, den);
            g.sum_all(q)
        });
    }

    #[test]
    fn broadcast_ops_backward_match_fd() {
        let shape = Shape::new(2, 3, 4, 4);
        fd_check(shape, 0xA3, |g, x| {
            let m = g.mean_channels(x);
            let y = g.mul_mask(x, m);
            g.mean_all(y)
        });
    }

    #[test]
    fn gram_matches_hand_example() {
        // 1-channel map [1, 2]: G = (1 + 4) / 2 = 2.5
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(Shape::new(1, 1, 1, 2), vec![1.0, 2.0]));
        let gm = g.gram(x);
        assert!((g.tensor(gm).item() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn gram_backward_matches_fd() {
        let shape = Shape::new(1, 3, 2, 2);
        fd_check(shape, 0xA4, |g, x| {
            let gm = g.gram(x);
            let gm = g.mul(gm, gm);
            g.sum_all(gm)
        });
    }

    #[test]
    fn concat_roundtrip_gradients() {
        let shape = Shape::new(1, 2, 2, 2);
        fd_check(shape, 0xA5, |g, x| {
            let y = g.scale(x, 2.0);
            let c = g.concat_c(x, y);
            let c = g.mul(c, c);
            g.mean_all(c)
        });
    }
}
