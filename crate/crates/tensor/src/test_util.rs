//! Finite-difference gradient checking shared by the op test suites.

use crate::graph::{Graph, Value};
use crate::{Rng, Shape, Tensor};

/// Check d(loss)/d(input) for a single random input tensor.
pub fn fd_check(shape: Shape, seed: u64, build: impl Fn(&mut Graph, Value) -> Value) {
    let mut rng = Rng::seed_from(seed);
    let x0 = Tensor::randn(shape, 1.0, &mut rng);
    fd_check_with(vec![x0], |g, vals| build(g, vals[0]));
}

/// Check d(loss)/d(input_i) against central differences for every provided
/// input. `build` must be a pure function of the inputs.
pub fn fd_check_with(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Value]) -> Value) {
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vals: Vec<Value> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &vals);
        g.tensor(loss).item()
    };

    let (analytic, loss0) = {
        let mut g = Graph::new();
        let vals: Vec<Value> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let loss = build(&mut g, &vals);
        let loss0 = g.tensor(loss).item();
        let grads = g.backward(loss);
        let a: Vec<Tensor> = vals
            .iter()
            .map(|v| grads.of(*v).cloned().unwrap_or_else(|| Tensor::zeros(v.shape)))
            .collect();
        (a, loss0)
    };
    assert!(loss0.is_finite(), "loss is not finite");

    let h = 1e-5;
    let mut checked = 0usize;
    for (ti, t) in inputs.iter().enumerate() {
        let n = t.numel();
        // probe all elements of small tensors, a deterministic subset of big ones
        let stride = (n / 48).max(1);
        for i in (0..n).step_by(stride) {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            plus[ti].data_mut()[i] += h;
            minus[ti].data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = analytic[ti].data()[i];
            let denom = an.abs().max(fd.abs()).max(1e-4);
            let rel = (an - fd).abs() / denom;
            assert!(
                rel < 1e-5,
                "fd mismatch input {ti} elem {i}: analytic {an} vs fd {fd} (rel {rel:.2e})"
            );
            checked += 1;
        }
    }
    assert!(checked > 0);
}
