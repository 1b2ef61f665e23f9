//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node that owns its output [`Tensor`]. [`Graph::backward`] then walks the
//! recorded nodes once in reverse and accumulates gradients into every node
//! that requires them. Parameters enter a graph as leaves
//! ([`Graph::param`]); data and frozen tensors enter as constants
//! ([`Graph::constant`]) and never receive gradients.
//!
//! Storage is generic over [`Element`] so the same rules can be evaluated in
//! `f64` when checking them against finite differences. Training uses `f32`.

pub mod gradcheck;
pub mod kernels;
mod ops;

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Floating point storage type of a tensor.
pub trait Element:
    num_traits::Float + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    fn from_wide(v: f64) -> Self;
    fn wide(self) -> f64;
}

impl Element for f32 {
    #[inline]
    fn from_wide(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn wide(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline]
    fn from_wide(v: f64) -> Self {
        v
    }
    #[inline]
    fn wide(self) -> f64 {
        self
    }
}

/// Lower clamp applied inside `log`.
pub const EPS_LOG: f64 = 1e-12;

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// A rank-0 tensor (empty shape) holds a single scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
    grad: Option<Vec<E>>,
    requires_grad: bool,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Contract(format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, E::zero())
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            grad: None,
            requires_grad: false,
        }
    }

    /// Builds from `f64` values, rounding to the storage type.
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| E::from_wide(v)).collect())
    }

    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.requires_grad = on;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        self.data[0]
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[E]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &v)| *b = *b + v),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| F::from_wide(v.wide())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| F::from_wide(v.wide())).collect()),
            requires_grad: self.requires_grad,
        }
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            grad: None,
            requires_grad: false,
        })
    }

    /// Slice along the leading axis: rows `[start, start+len)`.
    pub fn narrow0(&self, start: usize, len: usize) -> Result<Self> {
        let Some(&lead) = self.shape.first() else {
            return Err(Error::Contract("narrow0 on a scalar".into()));
        };
        if start + len > lead || len == 0 {
            return Err(Error::Contract(format!(
                "narrow0 [{start}, {}) outside leading extent {lead}",
                start + len
            )));
        }
        let stride = self.numel() / lead;
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor::new(
            &shape,
            self.data[start * stride..(start + len) * stride].to_vec(),
        )
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<E>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::dim("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(&shape, data)
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Matmul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid {
        x: Var,
        temperature: f64,
    },
    Log(Var),
    Exp(Var),
    Square(Var),
    Powf(Var, f64),
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
    MeanSpatial(Var),
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    ConcatChannels(Var, Var),
    Softmax {
        x: Var,
        temperature: f64,
    },
    AddChannelBias(Var, Var),
    AddRowBias(Var, Var),
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Matmul(a, b)
            | Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | Div(a, b)
            | ConcatChannels(a, b)
            | AddChannelBias(a, b)
            | AddRowBias(a, b) => vec![*a, *b],
            Conv2d { x, w, .. } => vec![*x, *w],
            Scale(a, _)
            | AddScalar(a)
            | Relu(a)
            | Log(a)
            | Exp(a)
            | Square(a)
            | Powf(a, _)
            | Sum(a)
            | Mean(a)
            | SumPerSample(a)
            | MeanSpatial(a)
            | Reshape(a) => vec![*a],
            Sigmoid { x, .. } | MaxPool2d { x, .. } | Upsample { x, .. } | Softmax { x, .. } => {
                vec![*x]
            }
        }
    }
}

pub(crate) struct Node<E: Element> {
    pub(crate) value: Tensor<E>,
    pub(crate) op: Op,
}

/// Ordered record of the operations of one forward pass.
///
/// Node order is execution order, so it is also a topological order.
pub struct Graph<E: Element = f32> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: &Tensor<E>) -> Var {
        let mut v = t.clone();
        v.grad = None;
        v.requires_grad = true;
        self.push(v, Op::Leaf)
    }

    /// Records a constant leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor<E>) -> Var {
        let mut t = t;
        t.grad = None;
        t.requires_grad = false;
        self.push(t, Op::Leaf)
    }

    /// Copy of `v`'s current value as a constant: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    /// Clears every gradient buffer in the graph.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<E>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Creates a result node; it requires grad iff some input does.
    pub(crate) fn record(&mut self, shape: Vec<usize>, data: Vec<E>, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.requires_grad(*v));
        let value = Tensor {
            shape,
            data,
            grad: None,
            requires_grad,
        };
        self.push(value, op)
    }

    /// Reverse pass from a scalar root.
    ///
    /// Gradients are added to the existing buffers of every reachable node
    /// that requires grad, so two calls without [`Graph::zero_grad`] in
    /// between double them.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward from non-scalar root of shape {:?}",
                rv.shape
            )));
        }
        if !rv.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            let node = &mut self.nodes[idx];
            let g: Vec<E> = g.into_iter().map(E::from_wide).collect();
            node.value.accumulate_grad(&g);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
