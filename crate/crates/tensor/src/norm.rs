//! Batch normalization (with frozen/eval mode) and per-sample layer norm
//! over the channel axis.

use crate::graph::{Graph, Value};
use crate::{Shape, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with the provided running statistics.
    Eval,
}

impl Graph {
    /// Batch norm over (N,H,W) per channel. `gamma`/`beta` are (1,C,1,1).
    /// In `Train` mode the batch statistics are written into
    /// `batch_stats_out` (mean, biased var, unbiased var) so the caller can
    /// maintain running statistics; in `Eval` mode `running` supplies the
    /// normalization statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Value,
        gamma: Value,
        beta: Value,
        running: (&Tensor, &Tensor),
        eps: f64,
        mode: BnMode,
        batch_stats_out: Option<&mut (Tensor, Tensor, Tensor)>,
    ) -> Value {
        let s = x.shape;
        let c = s.c;
        assert_eq!(gamma.shape.numel(), c);
        assert_eq!(beta.shape.numel(), c);
        let m = (s.n * s.h * s.w) as f64;
        let plane = s.h * s.w;
        let tx = self.tensor(x).clone();
        let tg = self.tensor(gamma).clone();

        let (mean, var) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for n in 0..s.n {
                    for ci in 0..c {
                        let base = (n * c + ci) * plane;
                        mean[ci] += tx.data()[base..base + plane].iter().sum::<f64>();
                    }
                }
                for v in mean.iter_mut() {
                    *v /= m;
                }
                for n in 0..s.n {
                    for ci in 0..c {
                        let base = (n * c + ci) * plane;
                        var[ci] += tx.data()[base..base + plane]
                            .iter()
                            .map(|&v| (v - mean[ci]) * (v - mean[ci]))
                            .sum::<f64>();
                    }
                }
                for v in var.iter_mut() {
                    *v /= m;
                }
                if let Some(out) = batch_stats_out {
                    let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                    out.0 = Tensor::new(Shape::new(1, c, 1, 1), mean.clone());
                    out.1 = Tensor::new(Shape::new(1, c, 1, 1), var.clone());
                    out.2 = Tensor::new(
                        Shape::new(1, c, 1, 1),
                        var.iter().map(|&v| v * unbiased).collect(),
                    );
                }
                (mean, var)
            }
            BnMode::Eval => (running.0.data().to_vec(), running.1.data().to_vec()),
        };

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(s);
        let mut out = Tensor::zeros(s);
        {
            let xh = xhat.data_mut();
            for n in 0..s.n {
                for ci in 0..c {
                    let base = (n * c + ci) * plane;
                    for i in 0..plane {
                        xh[base + i] = (tx.data()[base + i] - mean[ci]) * inv_std[ci];
                    }
                }
            }
            let tb = self.tensor(beta);
            let od = out.data_mut();
            for n in 0..s.n {
                for ci in 0..c {
                    let base = (n * c + ci) * plane;
                    let (gm, bt) = (tg.data()[ci], tb.data()[ci]);
                    for i in 0..plane {
                        od[base + i] = gm * xh[base + i] + bt;
                    }
                }
            }
        }

        let req = x.requires_grad || gamma.requires_grad || beta.requires_grad;
        self.push_op(out, req, move |g, store| {
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for n in 0..s.n {
                for ci in 0..c {
                    let base = (n * c + ci) * plane;
                    for i in 0..plane {
                        dgamma[ci] += g.data()[base + i] * xhat.data()[base + i];
                        dbeta[ci] += g.data()[base + i];
                    }
                }
            }
            if x.requires_grad {
                let mut dx = Tensor::zeros(s);
                let d = dx.data_mut();
                match mode {
                    BnMode::Train => {
                        for n in 0..s.n {
                            for ci in 0..c {
                                let base = (n * c + ci) * plane;
                                let k = tg.data()[ci] * inv_std[ci];
                                let g_mean = dbeta[ci] / m;
                                let gx_mean = dgamma[ci] / m;
                                for i in 0..plane {
                                    d[base + i] = k
                                        * (g.data()[base + i]
                                            - g_mean
                                            - xhat.data()[base + i] * gx_mean);
                                }
                            }
                        }
                    }
                    BnMode::Eval => {
                        for n in 0..s.n {
                            for ci in 0..c {
                                let base = (n * c + ci) * plane;
                                let k = tg.data()[ci] * inv_std[ci];
                                for i in 0..plane {
                                    d[base + i] = k * g.data()[base + i];
                                }
                            }
                        }
                    }
                }
                store.accumulate(x, dx);
            }
            if gamma.requires_grad {
                store.accumulate(gamma, Tensor::new(gamma.shape, dgamma));
            }
            if beta.requires_grad {
                store.accumulate(beta, Tensor::new(beta.shape, dbeta));
            }
        })
    }

    /// Layer norm of a (N,C,1,1) vector over its channel axis.
    pub fn layer_norm_cvec(&mut self, x: Value, gamma: Value, beta: Value, eps: f64) -> Value {
        let s = x.shape;
        assert!(s.h == 1 && s.w == 1, "layer_norm_cvec expects (N,C,1,1), got {}", s);
        let c = s.c as f64;
        let tx = self.tensor(x).clone();
        let tg = self.tensor(gamma).clone();

        let mut xhat = Tensor::zeros(s);
        let mut inv_std = vec![0.0; s.n];
        {
            let xh = xhat.data_mut();
            for n in 0..s.n {
                let base = n * s.c;
                let mean = tx.data()[base..base + s.c].iter().sum::<f64>() / c;
                let var = tx.data()[base..base + s.c]
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<f64>()
                    / c;
                inv_std[n] = 1.0 / (var + eps).sqrt();
                for i in 0..s.c {
                    xh[base + i] = (tx.data()[base + i] - mean) * inv_std[n];
                }
            }
        }
        let mut out = Tensor::zeros(s);
        {
            let tb = self.tensor(beta);
            let od = out.data_mut();
            for n in 0..s.n {
                for i in 0..s.c {
                    od[n * s.c + i] = tg.data()[i] * xhat.data()[n * s.c + i] + tb.data()[i];
                }
            }
        }

        let req = x.requires_grad || gamma.requires_grad || beta.requires_grad;
        self.push_op(out, req, move |g, store| {
            if gamma.requires_grad || beta.requires_grad {
                let mut dgamma = vec![0.0; s.c];
                let mut dbeta = vec![0.0; s.c];
                for n in 0..s.n {
                    for i in 0..s.c {
                        dgamma[i] += g.data()[n * s.c + i] * xhat.data()[n * s.c + i];
                        dbeta[i] += g.data()[n * s.c + i];
                    }
                }
                store.accumulate(gamma, Tensor::new(gamma.shape, dgamma));
                store.accumulate(beta, Tensor::new(beta.shape, dbeta));
            }
            if x.requires_grad {
                let mut dx = Tensor::zeros(s);
                let d = dx.data_mut();
                for n in 0..s.n {
                    let base = n * s.c;
                    let mut gh_mean = 0.0;
                    let mut ghx_mean = 0.0;
                    for i in 0..s.c {
                        let gh = g.data()[base + i] * tg.data()[i];
                        gh_mean += gh;
                        ghx_mean += gh * xhat.data()[base + i];
                    }
                    gh_mean /= c;
                    ghx_mean /= c;
                    for i in 0..s.c {
                        let gh = g.data()[base + i] * tg.data()[i];
                        d[base + i] = inv_std[n] * (gh - gh_mean - xhat.data()[base + i] * ghx_mean);
                    }
                }
                store.accumulate(x, dx);
            }
        })
    }
}
