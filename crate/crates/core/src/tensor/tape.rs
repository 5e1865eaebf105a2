use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::{Float, ParamId, ParamStore, Shape, Tensor};
use crate::error::{Error, Result};

/// Vector-Jacobian product of one recorded operation. Receives the gradient of
/// the operation's output and a mask of which parents need a gradient, and
/// returns one optional gradient per parent, in parent order.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
    shape: Shape,
}

/// Wengert list of the operations executed during one forward pass.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    checked: bool,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            checked: false,
        }
    }

    /// In checked mode every recorded op verifies its output is finite.
    pub fn checked(mut self, on: bool) -> Self {
        self.checked = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let id = self.push(Node {
            parents: Vec::new(),
            backward: None,
            requires_grad,
            param: None,
            shape: value.shape(),
        });
        Var {
            tape: self,
            id,
            value: Rc::new(value),
        }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub(crate) fn param_leaf(&self, value: Tensor<T>, param: ParamId) -> Var<'_, T> {
        let id = self.push(Node {
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
            param: Some(param),
            shape: value.shape(),
        });
        Var {
            tape: self,
            id,
            value: Rc::new(value),
        }
    }

    /// Records the result of an operation. `backward` is dropped when no parent
    /// requires a gradient.
    pub(crate) fn record<'t>(
        &'t self,
        op: &str,
        value: Tensor<T>,
        parents: &[&Var<'t, T>],
        backward: BackwardFn<T>,
    ) -> Result<Var<'t, T>> {
        if self.checked && !value.all_finite() {
            return Err(Error::Numeric(format!("{op} produced a non-finite value")));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let id = self.push(Node {
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            param: None,
            shape: value.shape(),
        });
        Ok(Var {
            tape: self,
            id,
            value: Rc::new(value),
        })
    }

    pub fn requires_grad(&self, var: &Var<'_, T>) -> bool {
        self.nodes.borrow()[var.id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every leaf reachable
    /// from the loss are summed over all of its uses.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {}",
                loss.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let mut pending: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
        pending[loss.id] = Some(Tensor::full(loss.shape(), T::one()));
        let mut leaves = HashMap::new();
        let mut params = Vec::new();

        for i in (0..=loss.id).rev() {
            let Some(grad) = pending[i].take() else {
                continue;
            };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = &node.backward else {
                if let Some(p) = node.param {
                    params.push((p, i));
                }
                leaves.insert(i, grad);
                continue;
            };
            let mask: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&grad, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[p].shape, "gradient shape for node {p}");
                match &mut pending[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { leaves, params })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(&var.id)
    }

    /// Gradient of `var`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|(p, i)| self.leaves.get(i).map(|g| (*p, g)))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
    value: Rc<Tensor<T>>,
}

impl<'t, T: Float> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn value_rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }
}

/// Forward-pass context: a tape plus the parameters the model reads from it.
/// Each parameter is placed on the tape once, however many times it is used.
pub struct Ctx<'t, T> {
    tape: &'t Tape<T>,
    params: &'t ParamStore<T>,
    cache: RefCell<HashMap<ParamId, Var<'t, T>>>,
}

impl<'t, T: Float> Ctx<'t, T> {
    pub fn new(tape: &'t Tape<T>, params: &'t ParamStore<T>) -> Self {
        Ctx {
            tape,
            params,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn params(&self) -> &'t ParamStore<T> {
        self.params
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        self.cache
            .borrow_mut()
            .entry(id)
            .or_insert_with(|| {
                self.tape
                    .param_leaf(self.params.get(id).tensor.clone(), id)
            })
            .clone()
    }

    pub fn input(&self, value: Tensor<T>) -> Var<'t, T> {
        self.tape.constant(value)
    }
}
