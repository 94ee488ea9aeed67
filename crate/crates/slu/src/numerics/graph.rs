//! Reverse-mode automatic differentiation over dense 2-d tensors.
//!
//! A `Graph` records every forward operation as a node holding its value,
//! its parent node ids and a backward closure. `backward` walks the nodes
//! in reverse, accumulating gradients by the chain rule. All values are
//! row-major `f64` matrices; vectors are 1xN, scalars 1x1.
//!
//! A graph is confined to one thread from forward through backward.
//! Parameters live outside the graph in a [`ParamStore`](super::ParamStore)
//! and are bound as leaf nodes once per graph.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::Array2;

use crate::error::{Result, SluError};
use crate::numerics::params::ParamStore;

/// Dense row-major matrix, the single value type of the graph.
pub type Mat = Array2<f64>;

/// Backward closure: receives the node's output gradient, returns one
/// gradient contribution per parent, in parent order.
pub(crate) type BackFn = Box<dyn Fn(&Mat) -> Vec<Mat>>;

pub(crate) struct Node {
    pub value: Rc<Mat>,
    pub parents: Vec<usize>,
    pub backward: Option<BackFn>,
    /// Name of the bound parameter when this leaf mirrors a `ParamStore` entry.
    pub param: Option<String>,
}

pub struct Graph {
    pub(crate) inner: RefCell<GraphInner>,
}

pub(crate) struct GraphInner {
    pub nodes: Vec<Node>,
    /// param name -> node id, so each parameter binds to exactly one leaf.
    pub bound: HashMap<String, usize>,
    /// Gradients from the most recent `backward` call, indexed by node id.
    pub grads: Vec<Option<Mat>>,
}

/// Handle to one node of a graph. Cheap to copy; tied to the graph's lifetime.
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) g: &'g Graph,
    pub(crate) id: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            inner: RefCell::new(GraphInner {
                nodes: Vec::new(),
                bound: HashMap::new(),
                grads: Vec::new(),
            }),
        }
    }

    pub(crate) fn push(&self, value: Mat, parents: Vec<usize>, backward: Option<BackFn>) -> Var<'_> {
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite value produced by a forward op"
        );
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
            param: None,
        });
        Var { g: self, id }
    }

    /// Leaf holding a constant; no gradient flows into it.
    pub fn constant(&self, value: Mat) -> Var<'_> {
        self.push(value, vec![], None)
    }

    /// Leaf holding a scalar constant.
    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Mat::from_elem((1, 1), value))
    }

    /// Bind a named parameter as a leaf. Binding the same name twice
    /// returns the same node, so gradient accumulation is automatic.
    pub fn param(&self, store: &ParamStore, name: &str) -> Var<'_> {
        if let Some(&id) = self.inner.borrow().bound.get(name) {
            return Var { g: self, id };
        }
        let value = store.get(name).clone();
        let v = self.push(value, vec![], None);
        let mut inner = self.inner.borrow_mut();
        inner.nodes[v.id].param = Some(name.to_string());
        inner.bound.insert(name.to_string(), v.id);
        v
    }

    /// Reverse pass from a 1x1 loss node. Gradients for every node are kept
    /// and can be read back with [`Graph::grad`] or [`Graph::param_grads`].
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        let n = inner.nodes.len();
        {
            let lv = &inner.nodes[loss.id].value;
            if lv.dim() != (1, 1) {
                return Err(SluError::InvalidArgument(format!(
                    "backward requires a 1x1 loss, got {:?}",
                    lv.dim()
                )));
            }
            if !lv[(0, 0)].is_finite() {
                return Err(SluError::Numeric("loss is not finite".into()));
            }
        }
        let mut grads: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(Mat::from_elem((1, 1), 1.0));
        for id in (0..=loss.id).rev() {
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            let node = &inner.nodes[id];
            if let Some(back) = &node.backward {
                let contributions = back(&g);
                debug_assert_eq!(contributions.len(), node.parents.len());
                let parents = node.parents.clone();
                for (pid, c) in parents.into_iter().zip(contributions) {
                    debug_assert_eq!(c.dim(), inner.nodes[pid].value.dim());
                    match &mut grads[pid] {
                        Some(acc) => *acc += &c,
                        slot => *slot = Some(c),
                    }
                }
            }
        }
        inner.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. `v`, zero if none flowed.
    pub fn grad(&self, v: Var<'_>) -> Mat {
        let inner = self.inner.borrow();
        match inner.grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Mat::zeros(inner.nodes[v.id].value.dim()),
        }
    }

    /// Gradients of all bound parameters, keyed by name. Parameters that
    /// did not participate in the loss get zero gradients.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<(String, Mat)> {
        let inner = self.inner.borrow();
        store
            .names()
            .map(|name| {
                let g = inner
                    .bound
                    .get(name)
                    .and_then(|&id| inner.grads.get(id).and_then(|g| g.clone()))
                    .unwrap_or_else(|| Mat::zeros(store.get(name).dim()));
                (name.to_string(), g)
            })
            .collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }
}

impl<'g> Var<'g> {
    pub fn value(&self) -> Rc<Mat> {
        self.g.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.value().dim()
    }

    pub fn rows(&self) -> usize {
        self.dim().0
    }

    pub fn cols(&self) -> usize {
        self.dim().1
    }

    /// Scalar value of a 1x1 node.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.dim(), (1, 1));
        v[(0, 0)]
    }

    pub fn graph(&self) -> &'g Graph {
        self.g
    }
}
