//! Building blocks of the erasing network: plain/transposed convolutions
//! for the mask-prediction branch, partial convolutions with batch norm for
//! the inpainting branch, bottleneck residual blocks, and the global
//! context attention block.

use texterase_tensor::graph::{Graph, ParamId, ParamSet, Value};
use texterase_tensor::norm::BnMode;
use texterase_tensor::{Rng, Shape, Tensor};

/// Per-forward state threaded through the layers: the graph, the
/// train/eval switch, and batch-norm running-statistic updates to apply
/// after the step (forward itself never mutates the parameter set).
pub struct ForwardCtx<'g> {
    pub g: &'g mut Graph,
    pub train: bool,
    pub stat_updates: Vec<(ParamId, Tensor)>,
    /// (layer name, output shape) per layer, in execution order.
    pub trace: Vec<(String, Shape)>,
}

impl<'g> ForwardCtx<'g> {
    pub fn new(g: &'g mut Graph, train: bool) -> Self {
        ForwardCtx {
            g,
            train,
            stat_updates: Vec::new(),
            trace: Vec::new(),
        }
    }

    fn record(&mut self, name: &str, out: Value) {
        self.trace.push((name.to_string(), out.shape));
    }
}

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

fn conv_weight(ps: &mut ParamSet, name: &str, cout: usize, cin: usize, k: usize, rng: &mut Rng) -> ParamId {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    ps.add(format!("{name}.weight"), Tensor::randn(Shape::new(cout, cin, k, k), std, rng))
}

fn bias(ps: &mut ParamSet, name: &str, c: usize) -> ParamId {
    ps.add(format!("{name}.bias"), Tensor::zeros(Shape::new(1, c, 1, 1)))
}

/// Plain convolution, optional ReLU.
pub struct Conv {
    name: String,
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
    relu: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        relu: bool,
        rng: &mut Rng,
    ) -> Self {
        Conv {
            name: name.to_string(),
            w: conv_weight(ps, name, cout, cin, k, rng),
            b: bias(ps, name, cout),
            stride,
            pad: k / 2,
            relu,
        }
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, ps: &ParamSet, x: Value) -> Value {
        let w = ctx.g.param(ps, self.w);
        let b = ctx.g.param(ps, self.b);
        let y = ctx.g.conv2d(x, w, Some(b), self.stride, self.pad);
        let y = if self.relu { ctx.g.relu(y) } else { y };
        ctx.record(&self.name, y);
        y
    }
}

/// Transposed convolution doubling the spatial extent (k 3, stride 2).
pub struct Deconv {
    name: String,
    w: ParamId,
    b: ParamId,
}

impl Deconv {
    pub fn new(ps: &mut ParamSet, name: &str, cin: usize, cout: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / (cin * 9) as f64).sqrt();
        Deconv {
            name: name.to_string(),
            w: ps.add(format!("{name}.weight"), Tensor::randn(Shape::new(cin, cout, 3, 3), std, rng)),
            b: bias(ps, name, cout),
        }
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, ps: &ParamSet, x: Value) -> Value {
        let w = ctx.g.param(ps, self.w);
        let b = ctx.g.param(ps, self.b);
        let y = ctx.g.conv_transpose2d(x, w, Some(b), 2, 1, 1);
        let y = ctx.g.relu(y);
        ctx.record(&self.name, y);
        y
    }
}

/// Batch normalization with running statistics and a freeze switch.
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    rmean: ParamId,
    rvar: ParamId,
    frozen: bool,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamSet, name: &str, c: usize) -> Self {
        BatchNorm {
            gamma: ps.add(format!("{name}.gamma"), Tensor::full(Shape::new(1, c, 1, 1), 1.0)),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros(Shape::new(1, c, 1, 1))),
            rmean: ps.add_buffer(format!("{name}.running_mean"), Tensor::zeros(Shape::new(1, c, 1, 1))),
            rvar: ps.add_buffer(format!("{name}.running_var"), Tensor::full(Shape::new(1, c, 1, 1), 1.0)),
            frozen: false,
        }
    }

    /// Stop statistic updates and drop the affine params from training.
    pub fn freeze(&mut self, ps: &mut ParamSet) {
        self.frozen = true;
        ps.set_trainable(self.gamma, false);
        ps.set_trainable(self.beta, false);
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn running_stats<'p>(&self, ps: &'p ParamSet) -> (&'p Tensor, &'p Tensor) {
        (ps.tensor(self.rmean), ps.tensor(self.rvar))
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, ps: &ParamSet, x: Value) -> Value {
        let gamma = ctx.g.param(ps, self.gamma);
        let beta = ctx.g.param(ps, self.beta);
        let rmean = ps.tensor(self.rmean).clone();
        let rvar = ps.tensor(self.rvar).clone();
        if ctx.train && !self.frozen {
            let mut stats = (
                Tensor::zeros(rmean.shape()),
                Tensor::zeros(rvar.shape()),
                Tensor::zeros(rvar.shape()),
            );
            let y = ctx.g.batch_norm(
                x,
                gamma,
                beta,
                (&rmean, &rvar),
                BN_EPS,
                BnMode::Train,
                Some(&mut stats),
            );
            let new_mean = blend(&rmean, &stats.0, BN_MOMENTUM);
            let new_var = blend(&rvar, &stats.2, BN_MOMENTUM);
            ctx.stat_updates.push((self.rmean, new_mean));
            ctx.stat_updates.push((self.rvar, new_var));
            y
        } else {
            ctx.g
                .batch_norm(x, gamma, beta, (&rmean, &rvar), BN_EPS, BnMode::Eval, None)
        }
    }
}

fn blend(old: &Tensor, new: &Tensor, momentum: f64) -> Tensor {
    let mut out = old.clone();
    let d = out.data_mut();
    for (o, n) in d.iter_mut().zip(new.data()) {
        *o = (1.0 - momentum) * *o + momentum * n;
    }
    out
}

/// Partial convolution + batch norm + ReLU. The final output layer of the
/// inpainting branch uses `plain` (no norm, no activation).
pub struct PConvBlock {
    name: String,
    w: ParamId,
    b: ParamId,
    pub bn: Option<BatchNorm>,
    stride: usize,
    pad: usize,
    relu: bool,
}

impl PConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        batchnorm: bool,
        rng: &mut Rng,
    ) -> Self {
        PConvBlock {
            name: name.to_string(),
            w: conv_weight(ps, name, cout, cin, k, rng),
            b: bias(ps, name, cout),
            bn: batchnorm.then(|| BatchNorm::new(ps, &format!("{name}.bn"), cout)),
            stride,
            pad: k / 2,
            relu: batchnorm,
        }
    }

    /// (features, mask) -> (features, updated mask).
    pub fn forward(&self, ctx: &mut ForwardCtx, ps: &ParamSet, x: Value, mask: Value) -> (Value, Value) {
        let w = ctx.g.param(ps, self.w);
        let b = ctx.g.param(ps, self.b);
        let (mut y, m) = ctx.g.partial_conv2d(x, mask, w, Some(b), self.stride, self.pad);
        if let Some(bn) = &self.bn {
            y = bn.forward(ctx, ps, y);
        }
        if self.relu {
            y = ctx.g.relu(y);
        }
        ctx.record(&self.name, y);
        (y, m)
    }
}

/// Bottleneck residual block: 1×1 reduce, 3×3, 1×1 expand, identity skip.
pub struct ResBlock {
    reduce: Conv,
    mid: Conv,
    expand: Conv,
}

impl ResBlock {
    pub fn new(ps: &mut ParamSet, name: &str, c: usize, reduction: usize, rng: &mut Rng) -> Self {
        let inner = (c / reduction).max(1);
        ResBlock {
            reduce: Conv::new(ps, &format!("{name}.reduce"), c, inner, 1, 1, true, rng),
            mid: Conv::new(ps, &format!("{name}.conv"), inner, inner, 3, 1, true, rng),
            expand: Conv::new(ps, &format!("{name}.expand"), inner, c, 1, 1, false, rng),
        }
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, ps: &ParamSet, x: Value) -> Value {
        let y = self.reduce.forward(ctx, ps, x);
        let y = self.mid.forward(ctx, ps, y);
        let y = self.expand.forward(ctx, ps, y);
        let y = ctx.g.add(x, y);
        ctx.g.relu(y)
    }
}

/// Global context block: softmax-pooled context vector, bottleneck
/// transform (1×1 → LayerNorm → ReLU → 1×1), added back to every position.
/// The closing 1×1 is zero-initialized so the block starts as identity.
pub struct GcBlock {
    name: String,
    ctx_w: ParamId,
    t1_w: ParamId,
    t1_b: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
    t2_w: ParamId,
    t2_b: ParamId,
}

impl GcBlock {
    pub fn new(ps: &mut ParamSet, name: &str, c: usize, ratio: usize, rng: &mut Rng) -> Self {
        let inner = (c / ratio).max(1);
        let std = (2.0 / c as f64).sqrt();
        GcBlock {
            name: name.to_string(),
            ctx_w: ps.add(format!("{name}.context.weight"), Tensor::randn(Shape::new(1, c, 1, 1), std, rng)),
            t1_w: ps.add(format!("{name}.transform1.weight"), Tensor::randn(Shape::new(inner, c, 1, 1), std, rng)),
            t1_b: ps.add(format!("{name}.transform1.bias"), Tensor::zeros(Shape::new(1, inner, 1, 1))),
            ln_g: ps.add(format!("{name}.ln.gamma"), Tensor::full(Shape::new(1, inner, 1, 1), 1.0)),
            ln_b: ps.add(format!("{name}.ln.beta"), Tensor::zeros(Shape::new(1, inner, 1, 1))),
            t2_w: ps.add(format!("{name}.transform2.weight"), Tensor::zeros(Shape::new(c, inner, 1, 1))),
            t2_b: ps.add(format!("{name}.transform2.bias"), Tensor::zeros(Shape::new(1, c, 1, 1))),
        }
    }

    pub fn forward(&self, ctx: &mut ForwardCtx, ps: &ParamSet, x: Value) -> Value {
        let g = &mut *ctx.g;
        let cw = g.param(ps, self.ctx_w);
        let logits = g.conv2d(x, cw, None, 1, 0);
        let pooled = g.context_pool(x, logits);
        let t1w = g.param(ps, self.t1_w);
        let t1b = g.param(ps, self.t1_b);
        let t = g.conv2d(pooled, t1w, Some(t1b), 1, 0);
        let lng = g.param(ps, self.ln_g);
        let lnb = g.param(ps, self.ln_b);
        let t = g.layer_norm_cvec(t, lng, lnb, 1e-5);
        let t = g.relu(t);
        let t2w = g.param(ps, self.t2_w);
        let t2b = g.param(ps, self.t2_b);
        let t = g.conv2d(t, t2w, Some(t2b), 1, 0);
        let y = g.add_cvec(x, t);
        ctx.record(&self.name, y);
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gc_block_is_identity_at_init() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::seed_from(3);
        let gc = GcBlock::new(&mut ps, "gc", 8, 4, &mut rng);
        let mut g = Graph::new();
        let x0 = Tensor::randn(Shape::new(2, 8, 4, 6), 1.0, &mut rng);
        let x = g.constant(x0.clone());
        let mut ctx = ForwardCtx::new(&mut g, false);
        let y = gc.forward(&mut ctx, &ps, x);
        assert_eq!(g.tensor(y).max_abs_diff(&x0), 0.0);
    }

    #[test]
    fn bn_freeze_stops_stat_updates_and_training() {
        let mut ps = ParamSet::new();
        let mut bn = BatchNorm::new(&mut ps, "bn", 4);
        let trainable_before = ps.num_trainable_scalars();

        let mut rng = Rng::seed_from(4);
        let x0 = Tensor::randn(Shape::new(2, 4, 3, 3), 1.0, &mut rng);
        {
            let mut g = Graph::new();
            let x = g.constant(x0.clone());
            let mut ctx = ForwardCtx::new(&mut g, true);
            bn.forward(&mut ctx, &ps, x);
            assert_eq!(ctx.stat_updates.len(), 2);
        }
        bn.freeze(&mut ps);
        assert_eq!(ps.num_trainable_scalars(), trainable_before - 8);
        {
            let mut g = Graph::new();
            let x = g.constant(x0);
            let mut ctx = ForwardCtx::new(&mut g, true);
            bn.forward(&mut ctx, &ps, x);
            assert!(ctx.stat_updates.is_empty());
        }
    }

    #[test]
    fn resblock_preserves_shape() {
        let mut ps = ParamSet::new();
        let mut rng = Rng::seed_from(5);
        let rb = ResBlock::new(&mut ps, "rb", 16, 4, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(Shape::new(1, 16, 4, 10), 1.0, &mut rng));
        let mut ctx = ForwardCtx::new(&mut g, false);
        let y = rb.forward(&mut ctx, &ps, x);
        assert_eq!(y.shape, Shape::new(1, 16, 4, 10));
    }
}
