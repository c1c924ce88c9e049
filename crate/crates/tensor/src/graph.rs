//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] records one forward pass: every op pushes a node holding its
//! output tensor and a one-shot backward closure that routes the incoming
//! gradient to the op's inputs. Nodes are created in topological order, so
//! [`Graph::backward`] is a single reverse sweep.
//!
//! Trainable state lives outside the tape in a [`ParamSet`]; each training
//! step binds parameters into a fresh graph with [`Graph::param`].

use crate::{Shape, Tensor};

/// Handle to a node in the tape. Cheap to copy; only valid for the graph
/// that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Value {
    pub(crate) id: usize,
    pub shape: Shape,
    pub requires_grad: bool,
}

type BackFn = Box<dyn FnOnce(&Tensor, &mut GradStore)>;

struct Node {
    value: Tensor,
    backward: Option<BackFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound_params: Vec<(usize, ParamId)>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Insert a tensor that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Value {
        self.push(t, false, None)
    }

    /// Insert a leaf tensor, optionally tracked for gradients (used by
    /// finite-difference tests that differentiate w.r.t. inputs).
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Value {
        self.push(t, requires_grad, None)
    }

    /// Bind a parameter from `ps` into the graph. Gradients are tracked
    /// only while the parameter is marked trainable.
    pub fn param(&mut self, ps: &ParamSet, id: ParamId) -> Value {
        let entry = &ps.entries[id.0];
        let v = self.push(entry.tensor.clone(), entry.trainable, None);
        self.bound_params.push((v.id, id));
        v
    }

    /// Re-insert an existing value as a gradient-free constant.
    pub fn detach(&mut self, v: Value) -> Value {
        let t = self.tensor(v).clone();
        self.constant(t)
    }

    pub fn tensor(&self, v: Value) -> &Tensor {
        &self.nodes[v.id].value
    }

    pub(crate) fn push(&mut self, value: Tensor, requires_grad: bool, backward: Option<BackFn>) -> Value {
        let shape = value.shape();
        self.nodes.push(Node { value, backward });
        Value {
            id: self.nodes.len() - 1,
            shape,
            requires_grad,
        }
    }

    /// Record a custom op: its output tensor and the backward closure that
    /// distributes the incoming gradient to the op's inputs via
    /// [`GradStore::accumulate`]. This is the extension point downstream
    /// crates use for ops the core set does not cover.
    pub fn push_op(
        &mut self,
        value: Tensor,
        requires_grad: bool,
        backward: impl FnOnce(&Tensor, &mut GradStore) + 'static,
    ) -> Value {
        let back = if requires_grad {
            Some(Box::new(backward) as BackFn)
        } else {
            None
        };
        self.push(value, requires_grad, back)
    }

    /// Reverse sweep from a scalar loss. Consumes the recorded backward
    /// closures; values remain readable afterwards.
    pub fn backward(&mut self, loss: Value) -> Grads {
        assert_eq!(loss.shape.numel(), 1, "backward() needs a scalar loss");
        let mut store = GradStore {
            grads: vec![None; self.nodes.len()],
        };
        store.grads[loss.id] = Some(Tensor::full(loss.shape, 1.0));
        for id in (0..=loss.id).rev() {
            if store.grads[id].is_none() {
                continue;
            }
            if let Some(f) = self.nodes[id].backward.take() {
                let g = store.grads[id].clone().expect("grad present");
                f(&g, &mut store);
            }
        }
        Grads {
            grads: store.grads,
            bound_params: self.bound_params.clone(),
        }
    }
}

/// Gradient accumulator indexed by node id.
pub struct GradStore {
    grads: Vec<Option<Tensor>>,
}

impl GradStore {
    pub fn accumulate(&mut self, v: Value, g: Tensor) {
        if !v.requires_grad {
            return;
        }
        match &mut self.grads[v.id] {
            Some(existing) => existing.accumulate(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Result of a backward pass.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
    bound_params: Vec<(usize, ParamId)>,
}

impl Grads {
    pub fn of(&self, v: Value) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }

    /// Gradient for a parameter, summed over all of its bindings.
    pub fn for_param(&self, id: ParamId) -> Option<Tensor> {
        let mut acc: Option<Tensor> = None;
        for &(node, pid) in &self.bound_params {
            if pid == id {
                if let Some(g) = &self.grads[node] {
                    match &mut acc {
                        Some(a) => a.accumulate(g),
                        slot @ None => *slot = Some(g.clone()),
                    }
                }
            }
        }
        acc
    }
}

/// Identifier of a parameter or buffer slot in a [`ParamSet`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(usize);

struct ParamEntry {
    name: String,
    tensor: Tensor,
    trainable: bool,
    buffer: bool,
}

/// Named tensor store: trainable weights plus non-trainable buffers
/// (e.g. normalization running statistics). The single source of truth
/// for checkpointing.
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            trainable: true,
            buffer: false,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Non-trainable state that still belongs in checkpoints.
    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            trainable: false,
            buffer: true,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn set_tensor(&mut self, id: ParamId, t: Tensor) {
        assert_eq!(self.entries[id.0].tensor.shape(), t.shape());
        self.entries[id.0].tensor = t;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn is_buffer(&self, id: ParamId) -> bool {
        self.entries[id.0].buffer
    }

    /// Mark a weight (non-)trainable. Buffers stay non-trainable.
    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        if !self.entries[id.0].buffer {
            self.entries[id.0].trainable = trainable;
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    /// Number of scalars in trainable weights.
    pub fn num_trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Number of scalars in all weights (trainable or frozen), excluding buffers.
    pub fn num_weight_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !e.buffer)
            .map(|e| e.tensor.numel())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_through_leaf_chain() {
        // loss = mean( (x * x) ) over 4 elements; d/dx = 2x / 4
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]),
            true,
        );
        let y = g.mul(x, x);
        let loss = g.mean_all(y);
        let grads = g.backward(loss);
        let gx = grads.of(x).unwrap();
        for (i, want) in [0.5, 1.0, 1.5, 2.0].iter().enumerate() {
            assert!((gx.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn params_accumulate_over_multiple_bindings() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let a = g.param(&ps, w);
        let b = g.param(&ps, w);
        let prod = g.mul(a, b); // w^2
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);
        let gw = grads.for_param(w).unwrap();
        assert!((gw.item() - 6.0).abs() < 1e-12); // d(w^2)/dw = 2w
    }

    #[test]
    fn frozen_params_get_no_grad() {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::scalar(3.0));
        ps.set_trainable(w, false);
        let mut g = Graph::new();
        let a = g.param(&ps, w);
        let y = g.scale(a, 2.0);
        let loss = g.sum_all(y);
        let grads = g.backward(loss);
        assert!(grads.for_param(w).is_none());
    }
}
