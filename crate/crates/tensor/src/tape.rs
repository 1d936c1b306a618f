//! Define-by-run recording of tensor operations and reverse-mode replay.
//!
//! Every forward op appends a node holding its output value and enough saved
//! state to apply its vector-Jacobian product. [`Tape::backward`] walks the
//! nodes in reverse recording order. A tape and its nodes live on one thread
//! for one forward/backward pass and are rebuilt for the next.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// How the right/left operand of a binary op is broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Bcast {
    Same,
    /// rhs has one element
    ScalarRhs,
    /// lhs has one element
    ScalarLhs,
    /// rhs is a row repeated over the rows of lhs
    RowRhs,
    /// lhs is a row repeated over the rows of rhs
    RowLhs,
}

/// Geometry of a square-kernel 2-D convolution over channels-last images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, T),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, T, T),
    /// mask already multiplied by 1/(1-rate)
    Dropout(Var, Vec<T>),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var, usize),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Vec<T>,
    },
    Sum(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>, usize),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Im2Col(Var, ConvGeom),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<(usize, usize)>,
        heads: usize,
        /// per segment, per head, row-major `len × len` probabilities
        probs: Vec<T>,
    },
    Attend {
        weights: Var,
        feats: Var,
        groups: Vec<usize>,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<T>>,
    pub(crate) param: Option<ParamId>,
}

/// Recording of one forward pass.
pub struct Tape<'p, T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    params: Option<&'p ParamStore<T>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            param_vars: HashMap::new(),
        }
    }

    /// Tape whose [`Tape::param`] reads from `store`.
    pub fn with_params(store: &'p ParamStore<T>) -> Self {
        Self {
            nodes: Vec::new(),
            params: Some(store),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that participates in differentiation.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self
            .params
            .expect("Tape::param called on a tape built without a ParamStore");
        let var = self.push(store.get(id).clone(), Op::Leaf, true);
        self.nodes[var.0].param = Some(id);
        self.param_vars.insert(id, var);
        var
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, if backward reached this node.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Attention probabilities saved by an attention node, laid out per
    /// segment then per head as row-major `len × len` blocks.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Gradients accumulate into each node across calls. Leaves that require
    /// grad but are unreachable from `loss` get a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.vjp(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        for node in &mut self.nodes {
            if node.requires_grad && node.grad.is_none() && matches!(node.op, Op::Leaf) {
                node.grad = Some(vec![T::zero(); node.value.len()]);
            }
        }
        Ok(())
    }

    /// Adds the gradients of every parameter leaf into `grads`, which must be
    /// aligned with the store this tape reads from.
    pub fn accumulate_param_grads(&self, grads: &mut [Vec<T>]) {
        for node in &self.nodes {
            if let (Some(id), Some(g)) = (node.param, &node.grad) {
                grads[id.0].iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            }
        }
    }

    pub(crate) fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }
}
