//! Named parameter collections and the batch-normalisation layer.

use std::collections::HashMap;

use super::graph::{Graph, Var};
use super::tensor::{Element, Tensor};
use super::TensorError;

/// Ordered, named tensors. Order is insertion order and is what optimiser
/// state and gradient lists are aligned with.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Inserts or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        match self.names.iter().position(|n| *n == name) {
            Some(i) => self.tensors[i] = tensor,
            None => {
                self.names.push(name);
                self.tensors.push(tensor);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Registers every tensor as a differentiable leaf of `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph<T>) -> Bound<'g, T> {
        self.bind_with(graph, true)
    }

    /// Registers every tensor as a constant of `graph`.
    pub fn bind_frozen<'g>(&self, graph: &'g Graph<T>) -> Bound<'g, T> {
        self.bind_with(graph, false)
    }

    fn bind_with<'g>(&self, graph: &'g Graph<T>, trainable: bool) -> Bound<'g, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.leaf(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        Bound {
            vars,
            index: self
                .names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i))
                .collect(),
        }
    }
}

/// A [`ParamSet`] materialised inside one graph.
pub struct Bound<'g, T: Element> {
    vars: Vec<Var<'g, T>>,
    index: HashMap<String, usize>,
}

impl<'g, T: Element> Bound<'g, T> {
    /// Pairs existing variables with names.
    pub fn from_vars(names: &[String], vars: &[Var<'g, T>]) -> Self {
        assert_eq!(names.len(), vars.len(), "one name per variable");
        Self {
            vars: vars.to_vec(),
            index: names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), i))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<'g, T>, TensorError> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| TensorError::MissingParam(name.to_string()))
    }

    /// Variables in the owning set's order.
    pub fn vars(&self) -> &[Var<'g, T>] {
        &self.vars
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Whether batch normalisation uses batch statistics or running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; running estimates are refreshed when `update` is set.
    Train { update: bool },
    /// Running estimates only.
    Eval,
}

/// Batch normalisation over axis 1 of `[N, C, ...]`.
///
/// `running` holds `(mean, var)` of shape `[C]`; the variance estimate is the
/// unbiased batch variance.
pub fn batch_norm<'g, T: Element>(
    x: Var<'g, T>,
    gamma: Var<'g, T>,
    beta: Var<'g, T>,
    running: (&mut Tensor<T>, &mut Tensor<T>),
    mode: NormMode,
) -> Result<Var<'g, T>, TensorError> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(TensorError::Rank {
            op: "batch_norm",
            expected: 2,
            shape,
        });
    }
    let graph = x.graph();
    let (running_mean, running_var) = running;
    match mode {
        NormMode::Train { update } => {
            let count = x.value().len() / shape[1];
            let inv_count = 1.0 / count as f64;
            let mean = x.sum_channel()?.scale(inv_count)?;
            let centred = x.sub(mean.broadcast_channel(&shape)?)?;
            let var = centred.square()?.sum_channel()?.scale(inv_count)?;
            let inv_std = var.add_scalar(BN_EPS)?.sqrt()?.recip()?;
            let y = centred
                .mul_channel(inv_std.mul(gamma)?)?
                .add_channel(beta)?;
            if update {
                let m = T::lit(BN_MOMENTUM);
                let keep = T::one() - m;
                let unbias = T::lit(count as f64 / (count.max(2) - 1) as f64);
                for ((rm, rv), (&bm, &bv)) in running_mean
                    .data_mut()
                    .iter_mut()
                    .zip(running_var.data_mut().iter_mut())
                    .zip(mean.value().data().iter().zip(var.value().data()))
                {
                    *rm = m * *rm + keep * bm;
                    *rv = m * *rv + keep * bv * unbias;
                }
            }
            Ok(y)
        }
        NormMode::Eval => {
            let neg_mean = graph.constant(running_mean.map(|v| -v));
            let inv_std =
                graph.constant(running_var.map(|v| T::one() / (v + T::lit(BN_EPS)).sqrt()));
            x.add_channel(neg_mean)?
                .mul_channel(inv_std.mul(gamma)?)?
                .add_channel(beta)
        }
    }
}
