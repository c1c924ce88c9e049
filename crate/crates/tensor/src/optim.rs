//! Adam optimizer over a [`ParamSet`].

use crate::graph::{Grads, ParamId, ParamSet};
use crate::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every trainable parameter that received a gradient.
    pub fn step(&mut self, ps: &mut ParamSet, grads: &Grads) {
        self.step += 1;
        if self.m.len() < ps.len() {
            self.m.resize(ps.len(), None);
            self.v.resize(ps.len(), None);
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<ParamId> = ps.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            if !ps.is_trainable(id) {
                continue;
            }
            let Some(g) = grads.for_param(id) else {
                continue;
            };
            let mut w = ps.tensor(id).clone();
            let m = self
                .m[slot]
                .get_or_insert_with(|| Tensor::zeros(w.shape()));
            let v = self
                .v[slot]
                .get_or_insert_with(|| Tensor::zeros(w.shape()));
            let md = m.data_mut();
            let vd = v.data_mut();
            let wd = w.data_mut();
            for i in 0..wd.len() {
                let gi = g.data()[i] + self.weight_decay * wd[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                wd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            ps.set_tensor(id, w);
        }
    }

    /// Moment tensors by parameter slot, for checkpointing.
    pub fn state(&self) -> (u64, &[Option<Tensor>], &[Option<Tensor>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Option<Tensor>>, v: Vec<Option<Tensor>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::{Shape, Tensor};

    #[test]
    fn adam_minimizes_a_quadratic() {
        // loss = mean((w - 3)^2); w should approach 3
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::new(Shape::new(1, 1, 1, 2), vec![0.0, 10.0]));
        let mut opt = Adam::new(0.1, 0.9, 0.999, 0.0);
        for _ in 0..400 {
            let mut g = Graph::new();
            let wv = g.param(&ps, w);
            let t = g.add_const(wv, -3.0);
            let sq = g.mul(t, t);
            let loss = g.mean_all(sq);
            let grads = g.backward(loss);
            opt.step(&mut ps, &grads);
        }
        for &v in ps.tensor(w).data() {
            assert!((v - 3.0).abs() < 1e-2, "w = {v}");
        }
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::scalar(1.5));
        let mut opt = Adam::new(0.0, 0.9, 0.999, 0.0);
        let mut g = Graph::new();
        let wv = g.param(&ps, w);
        let sq = g.mul(wv, wv);
        let loss = g.sum_all(sq);
        let grads = g.backward(loss);
        opt.step(&mut ps, &grads);
        assert_eq!(ps.tensor(w).item(), 1.5);
    }
}
