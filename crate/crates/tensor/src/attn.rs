//! Softmax-weighted global context pooling, the core of the GC attention
//! block: attention logits are softmaxed over all spatial positions and the
//! features are pooled into one per-channel context vector.

use crate::graph::{Graph, Value};
use crate::{Shape, Tensor};

impl Graph {
    /// x: (N,C,H,W), logits: (N,1,H,W) -> context (N,C,1,1) where
    /// context[n,c] = Σ_hw softmax(logits[n])_hw · x[n,c,hw].
    pub fn context_pool(&mut self, x: Value, logits: Value) -> Value {
        let s = x.shape;
        let sl = logits.shape;
        assert!(sl.n == s.n && sl.c == 1 && sl.h == s.h && sl.w == s.w, "context_pool {} vs {}", s, sl);
        let plane = s.h * s.w;
        let tx = self.tensor(x).clone();
        let tl = self.tensor(logits).clone();

        // softmax over the spatial plane, per sample
        let mut alpha = Tensor::zeros(sl);
        {
            let a = alpha.data_mut();
            for n in 0..s.n {
                let base = n * plane;
                let row = &tl.data()[base..base + plane];
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let mut z = 0.0;
                for i in 0..plane {
                    let e = (row[i] - max).exp();
                    a[base + i] = e;
                    z += e;
                }
                for v in &mut a[base..base + plane] {
                    *v /= z;
                }
            }
        }

        let mut out = Tensor::zeros(Shape::new(s.n, s.c, 1, 1));
        {
            let od = out.data_mut();
            for n in 0..s.n {
                for c in 0..s.c {
                    let xb = (n * s.c + c) * plane;
                    let ab = n * plane;
                    let mut acc = 0.0;
                    for i in 0..plane {
                        acc += tx.data()[xb + i] * alpha.data()[ab + i];
                    }
                    od[n * s.c + c] = acc;
                }
            }
        }
        let req = x.requires_grad || logits.requires_grad;
        self.push_op(out, req, move |g, store| {
            if x.requires_grad {
                // dx[n,c,hw] = g[n,c] * alpha[n,hw]
                let mut dx = Tensor::zeros(s);
                let d = dx.data_mut();
                for n in 0..s.n {
                    for c in 0..s.c {
                        let gb = g.data()[n * s.c + c];
                        let xb = (n * s.c + c) * plane;
                        let ab = n * plane;
                        for i in 0..plane {
                            d[xb + i] = gb * alpha.data()[ab + i];
                        }
                    }
                }
                store.accumulate(x, dx);
            }
            if logits.requires_grad {
                // s_hw = Σ_c g[n,c]·x[n,c,hw];  dlogit = α·(s − Σ α·s)
                let mut dl = Tensor::zeros(sl);
                let d = dl.data_mut();
                for n in 0..s.n {
                    let ab = n * plane;
                    let mut dot = 0.0;
                    for i in 0..plane {
                        let mut sv = 0.0;
                        for c in 0..s.c {
                            sv += g.data()[n * s.c + c] * tx.data()[(n * s.c + c) * plane + i];
                        }
                        d[ab + i] = sv;
                        dot += alpha.data()[ab + i] * sv;
                    }
                    for i in 0..plane {
                        d[ab + i] = alpha.data()[ab + i] * (d[ab + i] - dot);
                    }
                }
                store.accumulate(logits, dl);
            }
        })
    }
}
