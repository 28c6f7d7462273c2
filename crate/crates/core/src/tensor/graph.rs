use std::collections::HashMap;

use super::{attention, conv, ops, Real, Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Sum of element counts over parameters whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|(_, n, _)| n.starts_with(prefix)).map(|(_, _, t)| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Overwrite values from another store with identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (_, name, t) in other.iter() {
            let mine = self.id(name).ok_or_else(|| TensorError::Contract(format!("unknown parameter {name}")))?;
            if self.get(mine).shape() != t.shape() {
                return Err(TensorError::Shape {
                    op: "copy_from",
                    detail: format!("{name}: {:?} vs {:?}", self.get(mine).shape(), t.shape()),
                });
            }
            *self.get_mut(mine) = t.clone();
        }
        Ok(())
    }
}

#[derive(Debug)]
pub(super) enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, geom: conv::Geometry },
    Depthwise { input: Var, kernel: Var, bias: Option<Var>, geom: conv::Geometry },
    MatMul { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Embedding { table: Var, ids: Vec<usize> },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    InstanceNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Relu { x: Var },
    Gelu { x: Var },
    Dropout { x: Var, mask: Vec<T> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Sum { x: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape { x: Var },
    Permute { x: Var, axes: Vec<usize> },
    MaxPoolVertical { x: Var, argmax: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, ignore: Option<usize>, probs: Vec<T>, scale: T },
    Ctc { x: Var, grad: Vec<T> },
    Attention { q: Var, k: Var, v: Var, heads: usize, causal: bool, probs: Vec<T> },
}

impl<T> Op<T> {
    pub(super) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Depthwise { .. } => "depthwise_conv2d",
            Op::MatMul { .. } => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Embedding { .. } => "embedding",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::InstanceNorm { .. } => "instance_norm",
            Op::Relu { .. } => "relu",
            Op::Gelu { .. } => "gelu",
            Op::Dropout { .. } => "dropout",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Concat { .. } => "concat",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::MaxPoolVertical { .. } => "adaptive_max_pool_vertical",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Ctc { .. } => "ctc_loss",
            Op::Attention { .. } => "attention",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias, .. } | Op::Depthwise { input, kernel, bias, .. } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::AddBias { x, bias } => vec![*x, *bias],
            Op::Embedding { table, .. } => vec![*table],
            Op::LayerNorm { x, gamma, beta, .. } | Op::InstanceNorm { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::Softmax { x }
            | Op::LogSoftmax { x }
            | Op::Relu { x }
            | Op::Gelu { x }
            | Op::Dropout { x, .. }
            | Op::Scale { x, .. }
            | Op::Sum { x }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::MaxPoolVertical { x, .. }
            | Op::Ctc { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

pub(super) struct Node<T> {
    pub(super) value: Tensor<T>,
    pub(super) op: Op<T>,
    pub(super) requires_grad: bool,
}

/// Forward tape. Nodes are appended in execution order, so the node list is
/// already topologically sorted.
pub struct Graph<T> {
    pub(super) nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    training: bool,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), training: false, backward_done: false }
    }

    /// A tape in training mode (dropout active).
    pub fn training() -> Self {
        Self { training: true, ..Self::new() }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// Leaf input whose gradient is tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Binds a stored parameter as a leaf. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.input(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Parameters bound on this tape together with their leaf nodes.
    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub(super) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    /// Reverse sweep from a scalar loss. A tape supports exactly one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(TensorError::NotScalar { shape: loss_value.shape().to_vec() });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let contributions = self.backward_node(idx, &g)?;
            for (input, dg) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if !dg.is_finite() {
                    return Err(TensorError::NonFiniteGradient { op: node.op.name(), node: idx });
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&dg),
                    slot @ None => *slot = Some(dg),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn backward_node(&self, idx: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[idx];
        let val = |v: &Var| &self.nodes[v.0].value;
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias, geom } => {
                conv::conv2d_backward(*input, val(input), *kernel, val(kernel), *bias, geom, g)
            }
            Op::Depthwise { input, kernel, bias, geom } => {
                conv::depthwise_backward(*input, val(input), *kernel, val(kernel), *bias, geom, g)
            }
            Op::MatMul { a, b } => ops::matmul_backward(*a, val(a), *b, val(b), g),
            Op::AddBias { x, bias } => ops::add_bias_backward(*x, *bias, val(bias), g),
            Op::Embedding { table, ids } => ops::embedding_backward(*table, val(table), ids, g),
            Op::Softmax { x } => vec![(*x, ops::softmax_backward(out, g))],
            Op::LogSoftmax { x } => vec![(*x, ops::log_softmax_backward(out, g))],
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                ops::layer_norm_backward(*x, *gamma, val(gamma), *beta, xhat, rstd, g)
            }
            Op::InstanceNorm { x, gamma, beta, xhat, rstd } => {
                ops::instance_norm_backward(*x, *gamma, val(gamma), *beta, xhat, rstd, g)
            }
            Op::Relu { x } => vec![(*x, ops::relu_backward(val(x), g))],
            Op::Gelu { x } => vec![(*x, ops::gelu_backward(val(x), g))],
            Op::Dropout { x, mask } => vec![(*x, ops::zip_map(g, mask, |a, m| a * m))],
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul { a, b } => vec![
                (*a, ops::zip_map(g, val(b).data(), |d, y| d * y)),
                (*b, ops::zip_map(g, val(a).data(), |d, x| d * x)),
            ],
            Op::Scale { x, factor } => {
                let f = *factor;
                vec![(*x, ops::map(g, |d| d * f))]
            }
            Op::Sum { x } => vec![(*x, Tensor::full(val(x).shape().to_vec(), g.item()))],
            Op::Concat { inputs, axis } => {
                let shapes: Vec<&[usize]> = inputs.iter().map(|v| val(v).shape()).collect();
                inputs.iter().copied().zip(ops::concat_backward(&shapes, *axis, g)).collect()
            }
            Op::Reshape { x } => {
                vec![(*x, g.clone().reshaped(val(x).shape().to_vec())?)]
            }
            Op::Permute { x, axes } => vec![(*x, ops::permute_backward(g, axes))],
            Op::MaxPoolVertical { x, argmax } => {
                vec![(*x, ops::max_pool_vertical_backward(val(x).shape(), argmax, g))]
            }
            Op::CrossEntropy { logits, targets, ignore, probs, scale } => {
                let dx = ops::cross_entropy_backward(val(logits).shape(), targets, *ignore, probs, *scale, g);
                vec![(*logits, dx)]
            }
            Op::Ctc { x, grad } => {
                let s = g.item();
                vec![(*x, Tensor::new(val(x).shape().to_vec(), grad.iter().map(|&d| d * s).collect())?)]
            }
            Op::Attention { q, k, v, heads, causal, probs } => {
                attention::attention_backward(*q, val(q), *k, val(k), *v, val(v), *heads, *causal, probs, g)
            }
        })
    }
}

/// Result of one reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every bound parameter, ordered by parameter id.
    pub fn into_param_grads(mut self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> =
            self.params.iter().filter_map(|(&p, &v)| self.grads[v.0].take().map(|g| (p, g))).collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(vec![2, 3], |i| i as f64));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::ones(vec![2, 3]));
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut g = Graph::<f64>::new();
        let data = Tensor::from_fn(vec![4], |i| i as f64 - 1.5);
        let x = g.input(data.clone());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        let want: Vec<f64> = data.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(grads.get(x).unwrap().data(), &want[..]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::ones(vec![1]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.backward(s).err(), Some(TensorError::BackwardTwice));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::ones(vec![2]));
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::ones(vec![3]));
        let x = g.input(Tensor::ones(vec![3]));
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(x).is_some());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::full(vec![1], f32::MAX));
        assert_eq!(g.scale(x, 10.0).err(), Some(TensorError::NonFinite { op: "scale" }));
    }

    #[test]
    fn shared_parameter_binds_once() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::ones(vec![2])).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap().into_param_grads();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].1.data(), &[2.0, 2.0]);
    }

    #[test]
    fn duplicate_param_names_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::ones(vec![1])).unwrap();
        assert!(store.add("w", Tensor::ones(vec![1])).is_err());
    }
}
