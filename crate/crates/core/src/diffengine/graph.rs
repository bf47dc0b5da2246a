//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every vector-Jacobian product is expressed with the same recorded
//! operations used in the forward pass. Running [`Graph::grad`] with
//! `create_graph = true` therefore yields gradient variables that are
//! themselves differentiable, which is what a gradient-norm penalty needs.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::tensor::{Element, Tensor};
use super::TensorError;

#[derive(Clone, Copy, Debug)]
enum Op {
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Recip(usize),
    Sqrt(usize),
    Exp(usize),
    Tanh(usize),
    LeakyRelu(usize, f64),
    Sum(usize),
    BroadcastScalar(usize),
    SumPerSample(usize),
    BroadcastPerSample(usize),
    SumChannel(usize),
    BroadcastChannel(usize),
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
    Reshape(usize),
    SliceCols {
        x: usize,
        start: usize,
    },
    PadCols {
        x: usize,
        start: usize,
    },
    Conv {
        x: usize,
        k: usize,
        geom: ConvGeom,
    },
    ConvT {
        y: usize,
        k: usize,
        geom: ConvGeom,
    },
    ConvW {
        x: usize,
        gy: usize,
        geom: ConvGeom,
    },
}

impl Op {
    fn inputs(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Add(a, b) | Sub(a, b) | Mul(a, b) => [Some(a), Some(b)],
            MatMul { a, b, .. } => [Some(a), Some(b)],
            Conv { x, k, .. } => [Some(x), Some(k)],
            ConvT { y, k, .. } => [Some(y), Some(k)],
            ConvW { x, gy, .. } => [Some(x), Some(gy)],
            Scale(a, _) | AddScalar(a) | Recip(a) | Sqrt(a) | Exp(a) | Tanh(a) => [Some(a), None],
            LeakyRelu(a, _) | Sum(a) | BroadcastScalar(a) | SumPerSample(a) => [Some(a), None],
            BroadcastPerSample(a) | SumChannel(a) | BroadcastChannel(a) | Reshape(a) => {
                [Some(a), None]
            }
            SliceCols { x, .. } | PadCols { x, .. } => [Some(x), None],
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Option<Op>,
    requires_grad: bool,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

/// Arena of values and the operations that produced them.
///
/// A graph lives for one forward/backward cycle and is confined to the
/// thread that built it.
pub struct Graph<T: Element> {
    inner: RefCell<Inner<T>>,
}

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Element> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar with respect to every differentiable leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    by_id: HashMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_id.get(&var.id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                recording: true,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert(&self, value: Tensor<T>, op: Option<Op>, requires_grad: bool) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// A value that is never differentiated.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert(value, None, false)
    }

    /// A differentiable leaf (parameter or input under study).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert(value, None, true)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    fn push(
        &self,
        value: Tensor<T>,
        op: Op,
        name: &'static str,
    ) -> Result<Var<'_, T>, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let record = {
            let inner = self.inner.borrow();
            inner.recording
                && op
                    .inputs()
                    .iter()
                    .flatten()
                    .any(|&i| inner.nodes[i].requires_grad)
        };
        Ok(self.insert(value, record.then_some(op), record))
    }

    /// Runs `f` with recording disabled; results are constants.
    pub fn no_grad<R>(&self, f: impl FnOnce() -> R) -> R {
        let prev = std::mem::replace(&mut self.inner.borrow_mut().recording, false);
        let out = f();
        self.inner.borrow_mut().recording = prev;
        out
    }

    /// Gradients of the scalar `output` with respect to `wrt`.
    ///
    /// With `create_graph` the returned variables carry their own history and
    /// can be differentiated again; otherwise they are constants.
    pub fn grad<'g>(
        &'g self,
        output: Var<'g, T>,
        wrt: &[Var<'g, T>],
        create_graph: bool,
    ) -> Result<Vec<Var<'g, T>>, TensorError> {
        let out_val = output.value();
        if out_val.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: out_val.shape().to_vec(),
            });
        }
        if !out_val.all_finite() {
            return Err(TensorError::NonFiniteLoss);
        }
        if let Some(w) = wrt.iter().find(|w| !self.requires_grad(w.id)) {
            return Err(TensorError::NotDifferentiable(w.id));
        }
        let n = output.id + 1;
        let mut needed = vec![false; n];
        for w in wrt {
            if w.id < n {
                needed[w.id] = true;
            }
        }
        {
            let inner = self.inner.borrow();
            for i in 0..n {
                if needed[i] {
                    continue;
                }
                if let Some(op) = &inner.nodes[i].op {
                    needed[i] = op.inputs().iter().flatten().any(|&j| needed[j]);
                }
            }
        }

        let prev = std::mem::replace(&mut self.inner.borrow_mut().recording, create_graph);
        let result = self.propagate(output, n, &needed);
        self.inner.borrow_mut().recording = prev;
        let grads = result?;

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(w.value().shape())),
            })
            .collect())
    }

    fn propagate<'g>(
        &'g self,
        output: Var<'g, T>,
        n: usize,
        needed: &[bool],
    ) -> Result<Vec<Option<Var<'g, T>>>, TensorError> {
        let mut grads: Vec<Option<Var<'g, T>>> = vec![None; n];
        grads[output.id] = Some(self.constant(Tensor::full(output.value().shape(), T::one())));
        for i in (0..n).rev() {
            if !needed[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.inner.borrow().nodes[i].op;
            let Some(op) = op else { continue };
            for (input, contribution) in self.vjp(i, op, g, needed)? {
                grads[input] = Some(match grads[input] {
                    Some(acc) => acc.add(contribution)?,
                    None => contribution,
                });
            }
        }
        Ok(grads)
    }

    /// Gradients of a scalar with respect to all differentiable leaves.
    pub fn backward(&self, output: Var<'_, T>) -> Result<Gradients<T>, TensorError> {
        let leaves: Vec<Var<'_, T>> = {
            let inner = self.inner.borrow();
            (0..=output.id)
                .filter(|&i| inner.nodes[i].requires_grad && inner.nodes[i].op.is_none())
                .map(|id| Var { graph: self, id })
                .collect()
        };
        let grads = self.grad(output, &leaves, false)?;
        Ok(Gradients {
            by_id: leaves
                .iter()
                .zip(grads)
                .map(|(l, g)| (l.id, (*g.value()).clone()))
                .collect(),
        })
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { graph: self, id }
    }

    fn vjp<'g>(
        &'g self,
        node: usize,
        op: Op,
        g: Var<'g, T>,
        needed: &[bool],
    ) -> Result<Vec<(usize, Var<'g, T>)>, TensorError> {
        let want = |i: usize| needed[i];
        let y = self.var(node);
        let shape_of = |i: usize| self.value_of(i).shape().to_vec();
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Add(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    out.push((b, g.scale(-1.0)?));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    out.push((a, g.mul(self.var(b))?));
                }
                if want(b) {
                    out.push((b, g.mul(self.var(a))?));
                }
            }
            Op::Scale(a, c) => out.push((a, g.scale(c)?)),
            Op::AddScalar(a) => out.push((a, g)),
            Op::Recip(a) => out.push((a, g.mul(y)?.mul(y)?.scale(-1.0)?)),
            Op::Sqrt(a) => out.push((a, g.mul(y.recip()?)?.scale(0.5)?)),
            Op::Exp(a) => out.push((a, g.mul(y)?)),
            Op::Tanh(a) => {
                let slope = y.mul(y)?.scale(-1.0)?.add_scalar(1.0)?;
                out.push((a, g.mul(slope)?));
            }
            Op::LeakyRelu(a, s) => {
                let mask = self
                    .value_of(a)
                    .map(|v| if v > T::zero() { T::one() } else { T::lit(s) });
                out.push((a, g.mul(self.constant(mask))?));
            }
            Op::Sum(a) => out.push((a, g.broadcast_scalar(&shape_of(a))?)),
            Op::BroadcastScalar(a) => out.push((a, g.sum()?)),
            Op::SumPerSample(a) => out.push((a, g.broadcast_per_sample(&shape_of(a))?)),
            Op::BroadcastPerSample(a) => out.push((a, g.sum_per_sample()?)),
            Op::SumChannel(a) => out.push((a, g.broadcast_channel(&shape_of(a))?)),
            Op::BroadcastChannel(a) => out.push((a, g.sum_channel()?)),
            Op::MatMul { a, b, ta, tb } => {
                let (va, vb) = (self.var(a), self.var(b));
                if want(a) {
                    let ga = if ta {
                        vb.matmul_t(g, tb, true)?
                    } else {
                        g.matmul_t(vb, false, !tb)?
                    };
                    out.push((a, ga));
                }
                if want(b) {
                    let gb = if tb {
                        g.matmul_t(va, true, ta)?
                    } else {
                        va.matmul_t(g, !ta, false)?
                    };
                    out.push((b, gb));
                }
            }
            Op::Reshape(a) => out.push((a, g.reshape(&shape_of(a))?)),
            Op::SliceCols { x, start } => {
                let total = shape_of(x)[1];
                out.push((x, g.pad_cols(start, total)?));
            }
            Op::PadCols { x, start } => {
                let width = shape_of(x)[1];
                out.push((x, g.slice_cols(start, width)?));
            }
            Op::Conv { x, k, geom } => {
                let xs = shape_of(x);
                let ks = shape_of(k);
                if want(x) {
                    out.push((x, g.conv_transpose(self.var(k), geom, (xs[2], xs[3]))?));
                }
                if want(k) {
                    out.push((k, self.var(x).conv_kernel_grad(g, geom, (ks[2], ks[3]))?));
                }
            }
            Op::ConvT { y: src, k, geom } => {
                let ks = shape_of(k);
                if want(src) {
                    out.push((src, g.conv2d_geom(self.var(k), geom)?));
                }
                if want(k) {
                    out.push((k, g.conv_kernel_grad(self.var(src), geom, (ks[2], ks[3]))?));
                }
            }
            Op::ConvW { x, gy, geom } => {
                let xs = shape_of(x);
                if want(x) {
                    out.push((x, self.var(gy).conv_transpose(g, geom, (xs[2], xs[3]))?));
                }
                if want(gy) {
                    out.push((gy, self.var(x).conv2d_geom(g, geom)?));
                }
            }
        }
        Ok(out)
    }
}

fn same_shape<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(), TensorError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn leading_two(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize), TensorError> {
    if shape.len() < 2 {
        return Err(TensorError::Rank {
            op,
            expected: 2,
            shape: shape.to_vec(),
        });
    }
    let inner: usize = shape[2..].iter().product();
    Ok((shape[0], shape[1], inner))
}

impl<'g, T: Element> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Scalar value, if this is a one-element tensor.
    pub fn item(&self) -> Option<T> {
        self.value().item()
    }

    /// The same value as a constant, cut from the history.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.constant((*self.value()).clone())
    }

    fn unary(
        &self,
        name: &'static str,
        op: Op,
        f: impl Fn(T) -> T,
    ) -> Result<Var<'g, T>, TensorError> {
        let v = self.value().map(f);
        self.graph.push(v, op, name)
    }

    fn binary(
        &self,
        other: Var<'g, T>,
        name: &'static str,
        op: Op,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var<'g, T>, TensorError> {
        let (a, b) = (self.value(), other.value());
        same_shape(name, &a, &b)?;
        let v = a.zip_map(&b, f)?;
        self.graph.push(v, op, name)
    }

    pub fn add(&self, other: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn square(&self) -> Result<Var<'g, T>, TensorError> {
        self.mul(*self)
    }

    pub fn scale(&self, c: f64) -> Result<Var<'g, T>, TensorError> {
        let ct = T::lit(c);
        self.unary("scale", Op::Scale(self.id, c), |v| v * ct)
    }

    pub fn neg(&self) -> Result<Var<'g, T>, TensorError> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'g, T>, TensorError> {
        let ct = T::lit(c);
        self.unary("add_scalar", Op::AddScalar(self.id), |v| v + ct)
    }

    /// Reciprocal with `1/0 := 0`, the subgradient convention used where a
    /// norm vanishes.
    pub fn recip(&self) -> Result<Var<'g, T>, TensorError> {
        self.unary("recip", Op::Recip(self.id), |v| {
            if v == T::zero() {
                T::zero()
            } else {
                T::one() / v
            }
        })
    }

    pub fn sqrt(&self) -> Result<Var<'g, T>, TensorError> {
        if self.value().data().iter().any(|&v| v < T::zero()) {
            return Err(TensorError::NonFinite { op: "sqrt" });
        }
        self.unary("sqrt", Op::Sqrt(self.id), |v| v.sqrt())
    }

    pub fn exp(&self) -> Result<Var<'g, T>, TensorError> {
        self.unary("exp", Op::Exp(self.id), |v| v.exp())
    }

    pub fn tanh(&self) -> Result<Var<'g, T>, TensorError> {
        self.unary("tanh", Op::Tanh(self.id), |v| v.tanh())
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Var<'g, T>, TensorError> {
        let s = T::lit(slope);
        self.unary("leaky_relu", Op::LeakyRelu(self.id, slope), |v| {
            if v > T::zero() {
                v
            } else {
                v * s
            }
        })
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(&self) -> Result<Var<'g, T>, TensorError> {
        let v = Tensor::scalar(self.value().sum());
        self.graph.push(v, Op::Sum(self.id), "sum")
    }

    pub fn mean(&self) -> Result<Var<'g, T>, TensorError> {
        let n = self.value().len().max(1);
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Sum of squares of all entries.
    pub fn sq_norm(&self) -> Result<Var<'g, T>, TensorError> {
        self.square()?.sum()
    }

    pub fn broadcast_scalar(&self, shape: &[usize]) -> Result<Var<'g, T>, TensorError> {
        let value = self.value();
        let Some(s) = value.item() else {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_scalar",
                lhs: value.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        };
        self.graph.push(
            Tensor::full(shape, s),
            Op::BroadcastScalar(self.id),
            "broadcast_scalar",
        )
    }

    /// Reduces `[N, ...]` to `[N]`.
    pub fn sum_per_sample(&self) -> Result<Var<'g, T>, TensorError> {
        let value = self.value();
        let Some(&n) = value.shape().first() else {
            return Err(TensorError::Rank {
                op: "sum_per_sample",
                expected: 1,
                shape: Vec::new(),
            });
        };
        let per = value.len() / n.max(1);
        let data = (0..n)
            .map(|i| value.data()[i * per..(i + 1) * per].iter().copied().sum())
            .collect();
        self.graph.push(
            Tensor::new(vec![n], data)?,
            Op::SumPerSample(self.id),
            "sum_per_sample",
        )
    }

    /// Expands `[N]` to `shape = [N, ...]`.
    pub fn broadcast_per_sample(&self, shape: &[usize]) -> Result<Var<'g, T>, TensorError> {
        let value = self.value();
        if value.ndim() != 1 || shape.first() != Some(&value.len()) {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_per_sample",
                lhs: value.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let n = value.len();
        let per: usize = shape[1..].iter().product();
        let mut data = Vec::with_capacity(n * per);
        for &v in value.data() {
            data.extend(std::iter::repeat_n(v, per));
        }
        self.graph.push(
            Tensor::new(shape.to_vec(), data)?,
            Op::BroadcastPerSample(self.id),
            "broadcast_per_sample",
        )
    }

    /// Reduces `[N, C, ...]` to `[C]`.
    pub fn sum_channel(&self) -> Result<Var<'g, T>, TensorError> {
        let value = self.value();
        let (n, c, inner) = leading_two("sum_channel", value.shape())?;
        let d = value.data();
        let mut data = vec![T::zero(); c];
        for b in 0..n {
            for (ch, acc) in data.iter_mut().enumerate() {
                let start = (b * c + ch) * inner;
                *acc = *acc + d[start..start + inner].iter().copied().sum::<T>();
            }
        }
        self.graph.push(
            Tensor::new(vec![c], data)?,
            Op::SumChannel(self.id),
            "sum_channel",
        )
    }

    /// Expands `[C]` along axis 1 of `shape = [N, C, ...]`.
    pub fn broadcast_channel(&self, shape: &[usize]) -> Result<Var<'g, T>, TensorError> {
        let value = self.value();
        let (n, c, inner) = leading_two("broadcast_channel", shape)?;
        if value.ndim() != 1 || value.len() != c {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_channel",
                lhs: value.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let mut data = Vec::with_capacity(n * c * inner);
        for _ in 0..n {
            for &v in value.data() {
                data.extend(std::iter::repeat_n(v, inner));
            }
        }
        self.graph.push(
            Tensor::new(shape.to_vec(), data)?,
            Op::BroadcastChannel(self.id),
            "broadcast_channel",
        )
    }

    /// `self + bias` with `bias: [C]` broadcast along axis 1.
    pub fn add_channel(&self, bias: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.add(bias.broadcast_channel(&self.shape())?)
    }

    /// `self * scale` with `scale: [C]` broadcast along axis 1.
    pub fn mul_channel(&self, scale: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.mul(scale.broadcast_channel(&self.shape())?)
    }

    pub fn matmul(&self, other: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) * op(other)` where `op` transposes when the flag is set.
    pub fn matmul_t(
        &self,
        other: Var<'g, T>,
        trans_self: bool,
        trans_other: bool,
    ) -> Result<Var<'g, T>, TensorError> {
        let v = kernels::matmul(&self.value(), &other.value(), trans_self, trans_other)?;
        self.graph.push(
            v,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta: trans_self,
                tb: trans_other,
            },
            "matmul",
        )
    }

    /// Fully-connected layer: `x[N,K] * w[K,M] + b[M]`.
    pub fn dense(&self, weight: Var<'g, T>, bias: Var<'g, T>) -> Result<Var<'g, T>, TensorError> {
        self.matmul(weight)?.add_channel(bias)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>, TensorError> {
        let v = (*self.value()).clone().reshaped(shape.to_vec())?;
        self.graph.push(v, Op::Reshape(self.id), "reshape")
    }

    /// Flattens `[N, ...]` to `[N, prod(...)]`.
    pub fn flatten(&self) -> Result<Var<'g, T>, TensorError> {
        let shape = self.shape();
        let n = shape.first().copied().unwrap_or(1);
        let rest: usize = shape.iter().skip(1).product();
        self.reshape(&[n, rest])
    }

    /// Columns `start..start+width` of a `[N, M]` matrix.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Var<'g, T>, TensorError> {
        let value = self.value();
        let &[n, m] = value.shape() else {
            return Err(TensorError::Rank {
                op: "slice_cols",
                expected: 2,
                shape: value.shape().to_vec(),
            });
        };
        if start + width > m {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                lhs: value.shape().to_vec(),
                rhs: vec![start, width],
            });
        }
        let mut data = Vec::with_capacity(n * width);
        for r in 0..n {
            data.extend_from_slice(&value.data()[r * m + start..r * m + start + width]);
        }
        self.graph.push(
            Tensor::new(vec![n, width], data)?,
            Op::SliceCols { x: self.id, start },
            "slice_cols",
        )
    }

    /// Embeds `[N, W]` into zero `[N, total]` at column `start`.
    pub fn pad_cols(&self, start: usize, total: usize) -> Result<Var<'g, T>, TensorError> {
        let value = self.value();
        let &[n, w] = value.shape() else {
            return Err(TensorError::Rank {
                op: "pad_cols",
                expected: 2,
                shape: value.shape().to_vec(),
            });
        };
        if start + w > total {
            return Err(TensorError::ShapeMismatch {
                op: "pad_cols",
                lhs: value.shape().to_vec(),
                rhs: vec![start, total],
            });
        }
        let mut data = vec![T::zero(); n * total];
        for r in 0..n {
            data[r * total + start..r * total + start + w]
                .copy_from_slice(&value.data()[r * w..(r + 1) * w]);
        }
        self.graph.push(
            Tensor::new(vec![n, total], data)?,
            Op::PadCols { x: self.id, start },
            "pad_cols",
        )
    }

    /// Cross-correlation with kernel `[O, C, kh, kw]`.
    pub fn conv2d(
        &self,
        kernel: Var<'g, T>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g, T>, TensorError> {
        self.conv2d_geom(kernel, ConvGeom::new(stride, pad))
    }

    fn conv2d_geom(&self, kernel: Var<'g, T>, geom: ConvGeom) -> Result<Var<'g, T>, TensorError> {
        let v = kernels::conv2d(&self.value(), &kernel.value(), geom)?;
        self.graph.push(
            v,
            Op::Conv {
                x: self.id,
                k: kernel.id,
                geom,
            },
            "conv2d",
        )
    }

    /// Adjoint of `conv2d` (kernel `[O, C, kh, kw]`, output `[N, C, h, w]`).
    pub fn conv_transpose(
        &self,
        kernel: Var<'g, T>,
        geom: ConvGeom,
        out_hw: (usize, usize),
    ) -> Result<Var<'g, T>, TensorError> {
        let v = kernels::conv2d_transpose(&self.value(), &kernel.value(), geom, out_hw)?;
        self.graph.push(
            v,
            Op::ConvT {
                y: self.id,
                k: kernel.id,
                geom,
            },
            "conv_transpose",
        )
    }

    /// Transposed-convolution layer with kernel `[C_in, C_out, kh, kw]`;
    /// output extent `(h - 1) * stride - 2 * pad + k`.
    pub fn deconv2d(
        &self,
        kernel: Var<'g, T>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g, T>, TensorError> {
        let geom = ConvGeom::new(stride, pad);
        let xs = self.shape();
        let ks = kernel.shape();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "deconv2d",
                lhs: xs,
                rhs: ks,
            });
        }
        match (
            geom.transposed_extent(xs[2], ks[2]),
            geom.transposed_extent(xs[3], ks[3]),
        ) {
            (Some(h), Some(w)) => self.conv_transpose(kernel, geom, (h, w)),
            _ => Err(TensorError::ShapeMismatch {
                op: "deconv2d (empty output)",
                lhs: xs,
                rhs: ks,
            }),
        }
    }

    /// Kernel gradient of `conv2d(self, k)` given output gradient `gy`.
    pub fn conv_kernel_grad(
        &self,
        gy: Var<'g, T>,
        geom: ConvGeom,
        kernel_hw: (usize, usize),
    ) -> Result<Var<'g, T>, TensorError> {
        let v = kernels::conv2d_kernel_grad(&self.value(), &gy.value(), geom, kernel_hw)?;
        self.graph.push(
            v,
            Op::ConvW {
                x: self.id,
                gy: gy.id,
                geom,
            },
            "conv_kernel_grad",
        )
    }
}
