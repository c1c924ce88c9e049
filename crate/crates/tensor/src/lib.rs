//! Minimal f64 tensor library with reverse-mode autodiff, sized for a
//! CNN that has to run on CPU: NCHW layout, im2col + GEMM convolutions,
//! and a tape-based graph that records one forward pass at a time.
//!
//! Double precision is deliberate: the test suites validate analytic
//! gradients against central finite differences, which f32 cannot support
//! at the required tolerances.
//!
//! With the default `parallel` feature the compute kernels fan out over
//! rayon; without it every kernel runs sequentially on the calling thread.

// Index loops over NCHW buffers mirror the math; iterator chains obscure it.
#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

pub mod attn;
pub mod conv;
pub mod graph;
pub mod norm;
pub mod ops;
pub mod optim;
pub(crate) mod par;
pub mod pconv;
pub mod pool;
pub mod rng;
#[cfg(test)]
pub(crate) mod test_util;

pub use graph::{Graph, ParamId, ParamSet, Value};
pub use rng::Rng;

/// Dimensions of a 4-D tensor in NCHW order. Lower-rank data (vectors,
/// scalars, matrices) uses size-1 trailing axes.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && h < self.h && w < self.w);
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Immutable f64 tensor. Cloning is cheap (shared storage); mutation goes
/// through [`Tensor::data_mut`], which copies on write if the buffer is
/// shared.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.numel(),
            data.len(),
            "shape {} does not match buffer of {} elements",
            shape,
            data.len()
        );
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::new(shape, vec![0.0; shape.numel()])
    }

    pub fn full(shape: Shape, v: f64) -> Self {
        Tensor::new(shape, vec![v; shape.numel()])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(Shape::scalar(), vec![v])
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor::new(shape, data)
    }

    /// Normal(0, std) init.
    pub fn randn(shape: Shape, std: f64, rng: &mut Rng) -> Self {
        let data = (0..shape.numel()).map(|_| rng.normal() * std).collect();
        Tensor::new(shape, data)
    }

    /// Uniform init over [lo, hi).
    pub fn rand_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..shape.numel())
            .map(|_| lo + (hi - lo) * rng.uniform())
            .collect();
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.shape.index(n, c, h, w);
        self.data_mut()[i] = v;
    }

    /// Single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor {}", self.shape);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn reshaped(&self, shape: Shape) -> Tensor {
        assert_eq!(shape.numel(), self.numel(), "reshape {} -> {}", self.shape, shape);
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn accumulate(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "gradient shape mismatch");
        let dst = self.data_mut();
        for (d, s) in dst.iter_mut().zip(other.data.iter()) {
            *d += s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_indexing_is_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.index(0, 0, 0, 0), 0);
        assert_eq!(s.index(0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 1, 0), 5);
        assert_eq!(s.index(0, 1, 0, 0), 20);
        assert_eq!(s.index(1, 0, 0, 0), 60);
        assert_eq!(s.numel(), 120);
    }

    #[test]
    fn clone_shares_storage_until_written() {
        let a = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let mut b = a.clone();
        b.set(0, 0, 0, 0, 1.0);
        assert_eq!(a.at(0, 0, 0, 0), 0.0);
        assert_eq!(b.at(0, 0, 0, 0), 1.0);
    }
}
