//! Minimal dense-tensor engine with reverse-mode autodiff: 4-D row-major
//! f64 tensors, a dynamic tape recorded per forward pass, and exactly the
//! operators the detector graph needs. Backward rules consult the mutation
//! hooks so the test suite can prove the gradient oracles catch sign errors.

mod gradcheck;
mod kernels;
pub mod mutation;
mod ops;

pub use gradcheck::{grad_check, GradCheckReport};
pub use mutation::OpKind;
pub use ops::{
    add, batch_norm, broadcast_channels, concat_channels, conv2d, conv_transpose2d, mul,
    mul_scalar_param, relu, scale, sigmoid, slice_channels, sum, upsample_nearest, BnMode,
    ConvSpec,
};

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::rc::Rc;

/// Shape (batch, channels, height, width); scalars are (1,1,1,1).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn scalar() -> Shape {
        Shape([1, 1, 1, 1])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }

    pub fn c(&self) -> usize {
        self.0[1]
    }

    pub fn h(&self) -> usize {
        self.0[2]
    }

    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

/// Gradient contributions for each parent, in parent order; `None` for
/// parents that do not require grad.
type ParentGrads = Vec<Option<Vec<f64>>>;
type BackwardFn = Box<dyn Fn(&[f64]) -> ParentGrads>;

struct Inner {
    id: u64,
    shape: Shape,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    kind: OpKind,
}

/// Shared handle to an immutable tensor node. Cloning copies the handle.
/// Parameter (leaf) tensors may be mutated through `data_mut` between
/// optimizer steps; op outputs are never mutated.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Runs `f` with gradient recording disabled: ops built inside produce
/// detached tensors with no parents, keeping inference memory flat.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

impl Tensor {
    pub fn from_data(shape: Shape, data: Vec<f64>) -> Tensor {
        assert_eq!(
            data.len(),
            shape.numel(),
            "data length {} does not match shape {shape}",
            data.len()
        );
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                requires_grad: false,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
                kind: OpKind::Leaf,
            }),
        }
    }

    /// Leaf tensor participating in gradients (model parameter or a
    /// grad-checked input).
    pub fn param(shape: Shape, data: Vec<f64>) -> Tensor {
        assert_eq!(
            data.len(),
            shape.numel(),
            "data length {} does not match shape {shape}",
            data.len()
        );
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                requires_grad: true,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
                kind: OpKind::Leaf,
            }),
        }
    }

    pub fn zeros(shape: Shape) -> Tensor {
        Tensor::from_data(shape, vec![0.0; shape.numel()])
    }

    pub fn full(shape: Shape, v: f64) -> Tensor {
        Tensor::from_data(shape, vec![v; shape.numel()])
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_data(Shape::scalar(), vec![v])
    }

    pub(crate) fn from_op(
        shape: Shape,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        kind: OpKind,
        backward: BackwardFn,
    ) -> Tensor {
        assert_eq!(data.len(), shape.numel());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite values out of {kind:?}"
        );
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                requires_grad: track,
                grad: RefCell::new(None),
                parents: if track { parents } else { Vec::new() },
                backward: if track { Some(backward) } else { None },
                kind,
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> Shape {
        self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.backward.is_none() && self.inner.parents.is_empty()
    }

    pub fn kind(&self) -> OpKind {
        self.inner.kind
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    /// Mutable access to leaf data; used by the optimizer between steps.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        assert!(self.is_leaf(), "only leaf tensors may be mutated");
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() requires a scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Detached copy sharing no graph history.
    pub fn detach(&self) -> Tensor {
        Tensor::from_data(self.shape(), self.to_vec())
    }

    /// Reverse-mode pass from a scalar output. Gradients accumulate into
    /// the `grad` slot of every reachable leaf with `requires_grad`.
    pub fn backward(&self) {
        assert_eq!(self.numel(), 1, "backward() requires a scalar output");
        assert!(
            self.inner.requires_grad,
            "backward() on a tensor with no gradient path"
        );
        let order = self.topo_order();
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(grad_out) = grads.remove(&node.id()) else {
                continue;
            };
            if node.inner.requires_grad && node.is_leaf() {
                let mut slot = node.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(g) => {
                        for (a, b) in g.iter_mut().zip(&grad_out) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(grad_out.clone()),
                }
            }
            let Some(backward) = &node.inner.backward else {
                continue;
            };
            let mut parent_grads = backward(&grad_out);
            if mutation::is_flipped(node.inner.kind) {
                for g in parent_grads.iter_mut().flatten() {
                    for v in g.iter_mut() {
                        *v = -*v;
                    }
                }
            }
            assert_eq!(parent_grads.len(), node.inner.parents.len());
            for (parent, pg) in node.inner.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                debug_assert_eq!(pg.len(), parent.numel());
                match grads.entry(parent.id()) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        for (a, b) in e.get_mut().iter_mut().zip(&pg) {
                            *a += b;
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(pg);
                    }
                }
            }
        }
    }

    /// Post-order (parents before children) over the reachable graph.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // Iterative DFS with an explicit expansion marker.
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.inner.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    /// Asserts every element is finite; returns self for chaining.
    pub fn assert_finite(&self, context: &str) -> &Tensor {
        assert!(
            self.inner.data.borrow().iter().all(|v| v.is_finite()),
            "non-finite values in {context}"
        );
        self
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("kind", &self.inner.kind)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_construction_and_item() {
        let t = Tensor::scalar(2.5);
        assert_eq!(t.item(), 2.5);
        assert_eq!(t.shape(), Shape::scalar());
        assert!(!t.requires_grad());
        let p = Tensor::param(Shape([1, 2, 1, 1]), vec![1.0, 2.0]);
        assert!(p.requires_grad());
        assert!(p.is_leaf());
    }

    #[test]
    #[should_panic(expected = "does not match")]
    fn shape_mismatch_panics() {
        let _ = Tensor::from_data(Shape([1, 1, 2, 2]), vec![0.0; 3]);
    }

    #[test]
    fn backward_accumulates_through_shared_nodes() {
        // loss = sum(x + x) -> d/dx = 2 everywhere.
        let x = Tensor::param(Shape([1, 1, 2, 2]), vec![1.0, 2.0, 3.0, 4.0]);
        let y = add(&x, &x);
        let loss = sum(&y);
        loss.backward();
        assert_eq!(x.grad().unwrap(), vec![2.0; 4]);
        // Accumulation across two backward calls.
        let loss2 = sum(&add(&x, &x));
        loss2.backward();
        assert_eq!(x.grad().unwrap(), vec![4.0; 4]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn no_grad_detaches() {
        let x = Tensor::param(Shape::scalar(), vec![3.0]);
        let y = no_grad(|| relu(&x));
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
    }
}
