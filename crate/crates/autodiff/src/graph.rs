use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::{Float, Tensor};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

struct GradModeGuard(bool);

impl GradModeGuard {
    fn set(enabled: bool) -> Self {
        Self(GRAD_ENABLED.with(|c| c.replace(enabled)))
    }
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.0));
    }
}

/// Run `f` without recording operations.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = GradModeGuard::set(false);
    f()
}

/// Backward rule of a recorded operation.
///
/// Implementations must build their results from [`Var`] operations so that
/// higher-order gradients stay available.
pub trait Backward<T: Float> {
    fn name(&self) -> &'static str;

    /// Gradients for each input. `needs[i]` is false when input `i` needs no gradient,
    /// in which case `None` may be returned for it.
    fn backward(&self, inputs: &[Var<T>], output: &Var<T>, grad: &Var<T>, needs: &[bool]) -> Vec<Option<Var<T>>>;
}

struct GradFn<T: Float> {
    op: Box<dyn Backward<T>>,
    inputs: Vec<Var<T>>,
}

struct Node<T: Float> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// A tensor-valued node of the computation graph.
pub struct Var<T: Float>(Rc<Node<T>>);

impl<T: Float> Clone for Var<T> {
    fn clone(&self) -> Self {
        Self(Rc::clone(&self.0))
    }
}

impl<T: Float> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.op.name()))
            .finish()
    }
}

impl<T: Float> Var<T> {
    fn make(value: Tensor<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        Self(Rc::new(Node { id: next_id(), value, requires_grad, grad_fn }))
    }

    /// A value that never receives gradients.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, None)
    }

    /// A differentiable leaf (parameter or input being differentiated).
    pub fn leaf(value: Tensor<T>) -> Self {
        Self::make(value, true, None)
    }

    pub fn from_op(value: Tensor<T>, inputs: Vec<Var<T>>, op: impl Backward<T> + 'static) -> Self {
        if is_grad_enabled() && inputs.iter().any(|v| v.requires_grad()) {
            Self::make(value, true, Some(GradFn { op: Box::new(op), inputs }))
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.0.value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }

    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    fn inputs(&self) -> &[Var<T>] {
        self.0.grad_fn.as_ref().map(|g| g.inputs.as_slice()).unwrap_or(&[])
    }
}

/// Gradients of a scalar `output` with respect to `wrt`.
///
/// With `create_graph`, the returned gradients are themselves differentiable.
/// Inputs that do not influence `output` get zero gradients.
pub fn grad<T: Float>(output: &Var<T>, wrt: &[&Var<T>], create_graph: bool) -> Vec<Var<T>> {
    assert_eq!(output.numel(), 1, "grad() needs a scalar output, got shape {:?}", output.shape());
    let seed = Var::constant(Tensor::full(output.shape(), T::one()));
    grad_with_seed(output, seed, wrt, create_graph)
}

/// Vector-Jacobian product: gradients of `<seed, output>` with respect to `wrt`.
pub fn grad_with_seed<T: Float>(output: &Var<T>, seed: Var<T>, wrt: &[&Var<T>], create_graph: bool) -> Vec<Var<T>> {
    assert_eq!(seed.shape(), output.shape(), "seed shape must match output shape");
    let _guard = GradModeGuard::set(create_graph);

    // collect the differentiable subgraph
    let mut nodes: HashMap<u64, Var<T>> = HashMap::new();
    let mut stack = vec![output.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || nodes.contains_key(&v.id()) {
            continue;
        }
        stack.extend(v.inputs().iter().cloned());
        nodes.insert(v.id(), v);
    }

    // ids only increase, so ascending id order is a topological order
    let mut order: Vec<u64> = nodes.keys().copied().collect();
    order.sort_unstable();

    let targets: HashSet<u64> = wrt.iter().map(|v| v.id()).collect();
    let mut needed: HashSet<u64> = HashSet::new();
    for id in &order {
        let v = &nodes[id];
        if targets.contains(id) || v.inputs().iter().any(|i| needed.contains(&i.id())) {
            needed.insert(*id);
        }
    }

    let mut grads: HashMap<u64, Var<T>> = HashMap::new();
    if needed.contains(&output.id()) {
        grads.insert(output.id(), seed);
    }
    for id in order.iter().rev() {
        if !needed.contains(id) {
            continue;
        }
        let node = &nodes[id];
        let Some(grad_fn) = node.0.grad_fn.as_ref() else { continue };
        let g = if targets.contains(id) {
            match grads.get(id) {
                Some(g) => g.clone(),
                None => continue,
            }
        } else {
            match grads.remove(id) {
                Some(g) => g,
                None => continue,
            }
        };
        let needs: Vec<bool> = grad_fn.inputs.iter().map(|i| needed.contains(&i.id())).collect();
        if !needs.iter().any(|&n| n) {
            continue;
        }
        let input_grads = grad_fn.op.backward(&grad_fn.inputs, node, &g, &needs);
        debug_assert_eq!(input_grads.len(), grad_fn.inputs.len(), "{} returned wrong arity", grad_fn.op.name());
        for ((input, ig), need) in grad_fn.inputs.iter().zip(input_grads).zip(&needs) {
            if !need {
                continue;
            }
            let Some(ig) = ig else { continue };
            debug_assert_eq!(ig.shape(), input.shape(), "{} produced a mis-shaped gradient", grad_fn.op.name());
            let acc = match grads.remove(&input.id()) {
                Some(prev) => prev.add(&ig),
                None => ig,
            };
            grads.insert(input.id(), acc);
        }
    }

    wrt.iter()
        .map(|v| match grads.get(&v.id()) {
            Some(g) => g.clone(),
            None => Var::constant(Tensor::zeros(v.shape())),
        })
        .collect()
}
