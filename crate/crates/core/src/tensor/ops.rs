//! Elementwise, reduction, normalization and layout ops.

use rand::Rng;

use super::graph::Op;
use super::linalg::matmul;
use super::{Graph, Real, Result, Tensor, TensorError, Var};

const NORM_EPS: f64 = 1e-5;

/// How a loss is reduced over its valid positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

pub(super) fn map<T: Real>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_fn(t.shape().to_vec(), |i| f(t.data()[i]))
}

pub(super) fn zip_map<T: Real>(t: &Tensor<T>, other: &[T], f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_fn(t.shape().to_vec(), |i| f(t.data()[i], other[i]))
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().expect("tensors have at least one axis")
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x);
    (y, dy)
}

/// GELU value, tanh approximation, as used by [`Graph::gelu`].
pub fn gelu_value<T: Real>(x: T) -> T {
    gelu_parts(x).0
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_tensor<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let in_shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let in_strides = strides(in_shape);
    // stride in the input for each output axis
    let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.numel());
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..x.numel() {
        let off: usize = idx.iter().zip(&gather).map(|(i, s)| i * s).sum();
        out.push(x.data()[off]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permutation preserves size")
}

/// Row-wise mean/rstd normalization shared by layer and instance norm.
pub fn normalize_rows<T: Real>(data: &[T], row: usize) -> (Vec<T>, Vec<T>) {
    let eps = T::lit(NORM_EPS);
    let n = T::from_usize(row).unwrap();
    let mut xhat = vec![T::zero(); data.len()];
    let mut rstd = Vec::with_capacity(data.len() / row);
    for (chunk, out) in data.chunks(row).zip(xhat.chunks_mut(row)) {
        let mean = chunk.iter().copied().sum::<T>() / n;
        let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = T::one() / (var + eps).sqrt();
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o = (v - mean) * r;
        }
        rstd.push(r);
    }
    (xhat, rstd)
}

/// Gradient of row normalization given `dxhat`.
fn normalize_rows_backward<T: Real>(dxhat: &[T], xhat: &[T], rstd: &[T], row: usize) -> Vec<T> {
    let n = T::from_usize(row).unwrap();
    let mut dx = vec![T::zero(); dxhat.len()];
    for (r, ((dh, xh), out)) in dxhat.chunks(row).zip(xhat.chunks(row)).zip(dx.chunks_mut(row)).enumerate() {
        let mean_d = dh.iter().copied().sum::<T>() / n;
        let mean_dx = dh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
        for i in 0..row {
            out[i] = rstd[r] * (dh[i] - mean_d - xh[i] * mean_dx);
        }
    }
    dx
}

impl<T: Real> Graph<T> {
    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul(self.value(a).data(), false, self.value(b).data(), false, &mut out, m, k, n, false);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b })
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = last_dim(self.shape(x));
        if self.shape(bias) != [d] {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", self.shape(x), self.shape(bias))));
        }
        let b = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let out = Tensor::from_fn(xv.shape().to_vec(), |i| xv.data()[i] + b[i % d]);
        self.push(out, Op::AddBias { x, bias })
    }

    /// `x · w + b` for `x: [m,k]`, `w: [k,n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    /// Rows of `table: [v,d]` selected by `ids`, giving `[len(ids), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 || ids.is_empty() {
            return Err(shape_err("embedding", format!("table {shape:?}, {} ids", ids.len())));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::Domain { op: "embedding", detail: format!("id {bad} >= vocabulary {v}") });
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        self.push(Tensor::new(vec![ids.len(), d], out)?, Op::Embedding { table, ids: ids.to_vec() })
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = last_dim(xv.shape());
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(out, Op::Softmax { x })
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = last_dim(xv.shape());
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(d) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(out, Op::LogSoftmax { x })
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = last_dim(&shape);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", format!("input {shape:?}, affine {:?}", self.shape(gamma))));
        }
        let (xhat, rstd) = normalize_rows(self.value(x).data(), d);
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let out = Tensor::from_fn(shape, |i| xhat[i] * gv[i % d] + bv[i % d]);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    /// Per-sample, per-channel normalization of an NCHW tensor with a
    /// per-channel affine transform.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 || self.shape(gamma) != [shape[1]] || self.shape(beta) != [shape[1]] {
            return Err(shape_err("instance_norm", format!("input {shape:?}, affine {:?}", self.shape(gamma))));
        }
        let (c, plane) = (shape[1], shape[2] * shape[3]);
        let (xhat, rstd) = normalize_rows(self.value(x).data(), plane);
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let out = Tensor::from_fn(shape, |i| {
            let ch = (i / plane) % c;
            xhat[i] * gv[ch] + bv[ch]
        });
        self.push(out, Op::InstanceNorm { x, gamma, beta, xhat, rstd })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu { x })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), |v| gelu_parts(v).0);
        self.push(out, Op::Gelu { x })
    }

    /// Inverted dropout. Identity outside training mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Domain { op: "dropout", detail: format!("rate {p} outside [0,1)") });
        }
        if !self.is_training() || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> =
            (0..self.value(x).numel()).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let out = zip_map(self.value(x), &mask, |a, m| a * m);
        self.push(out, Op::Dropout { x, mask })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let out = zip_map(self.value(a), self.value(b).data(), |x, y| x + y);
        self.push(out, Op::Add { a, b })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", format!("{:?} * {:?}", self.shape(a), self.shape(b))));
        }
        let out = zip_map(self.value(a), self.value(b).data(), |x, y| x * y);
        self.push(out, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = map(self.value(x), |v| v * factor);
        self.push(out, Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::from_usize(self.value(x).numel()).unwrap();
        let s = self.sum(x)?;
        self.scale(s, T::one() / n)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*inputs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?).to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} for rank {}", first.len())));
        }
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} vs {first:?} along axis {axis}")));
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out_shape = first.clone();
        out_shape[axis] = inputs.iter().map(|&v| self.shape(v)[axis]).sum();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let block = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * block..(o + 1) * block]);
            }
        }
        self.push(Tensor::new(out_shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        self.push(out, Op::Reshape { x })
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let rank = self.shape(x).len();
        let mut seen = vec![false; rank];
        let valid = axes.len() == rank && axes.iter().all(|&a| a < rank && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(shape_err("permute", format!("axes {axes:?} for rank {rank}")));
        }
        let out = permute_tensor(self.value(x), axes);
        self.push(out, Op::Permute { x, axes: axes.to_vec() })
    }

    /// Collapses the height axis of an NCHW tensor by a column-wise max.
    pub fn adaptive_max_pool_vertical(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(shape_err("adaptive_max_pool_vertical", format!("expected NCHW, got {shape:?}")));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * w);
        let mut argmax = Vec::with_capacity(n * c * w);
        for plane in 0..n * c {
            let base = plane * h * w;
            for col in 0..w {
                let mut best = 0;
                for row in 1..h {
                    if xv[base + row * w + col] > xv[base + best * w + col] {
                        best = row;
                    }
                }
                out.push(xv[base + best * w + col]);
                argmax.push(base + best * w + col);
            }
        }
        self.push(Tensor::new(vec![n, c, 1, w], out)?, Op::MaxPoolVertical { x, argmax })
    }

    /// Softmax cross-entropy of `logits: [n,v]` against `targets`.
    /// Positions whose target equals `ignore` do not contribute.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
        reduction: Reduction,
    ) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(shape_err("cross_entropy", format!("logits {shape:?}, {} targets", targets.len())));
        }
        let v = shape[1];
        if let Some(i) = ignore {
            if i >= v {
                return Err(TensorError::Domain {
                    op: "cross_entropy",
                    detail: format!("ignore id {i} outside vocabulary of {v}"),
                });
            }
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v && Some(t) != ignore) {
            return Err(TensorError::Domain { op: "cross_entropy", detail: format!("target {bad} >= {v}") });
        }
        let xv = self.value(logits).data();
        let mut probs = xv.to_vec();
        let mut total = T::zero();
        let mut count = 0usize;
        for (row, &t) in probs.chunks_mut(v).zip(targets) {
            let lse = log_sum_exp(row);
            if Some(t) != ignore {
                total += lse - row[t];
                count += 1;
            }
            row.iter_mut().for_each(|p| *p = (*p - lse).exp());
        }
        let scale = match (reduction, count) {
            (_, 0) => T::zero(),
            (Reduction::Mean, c) => T::one() / T::from_usize(c).unwrap(),
            (Reduction::Sum, _) => T::one(),
        };
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), ignore, probs, scale };
        self.push(Tensor::scalar(total * scale), op)
    }
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

pub fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

pub(super) fn matmul_backward<T: Real>(
    a: Var,
    av: &Tensor<T>,
    b: Var,
    bv: &Tensor<T>,
    g: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
    let mut da = vec![T::zero(); m * k];
    matmul(g.data(), false, bv.data(), true, &mut da, m, n, k, false);
    let mut db = vec![T::zero(); k * n];
    matmul(av.data(), true, g.data(), false, &mut db, k, m, n, false);
    vec![(a, Tensor::new(vec![m, k], da).unwrap()), (b, Tensor::new(vec![k, n], db).unwrap())]
}

pub(super) fn add_bias_backward<T: Real>(x: Var, bias: Var, bv: &Tensor<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let d = bv.numel();
    let mut db = vec![T::zero(); d];
    for row in g.data().chunks(d) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    vec![(x, g.clone()), (bias, Tensor::new(vec![d], db).unwrap())]
}

pub(super) fn embedding_backward<T: Real>(
    table: Var,
    tv: &Tensor<T>,
    ids: &[usize],
    g: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let d = tv.shape()[1];
    let mut dt = Tensor::zeros(tv.shape().to_vec());
    for (row, &i) in g.data().chunks(d).zip(ids) {
        for (acc, &v) in dt.data_mut()[i * d..(i + 1) * d].iter_mut().zip(row) {
            *acc += v;
        }
    }
    vec![(table, dt)]
}

pub(super) fn softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let d = last_dim(y.shape());
    let mut dx = vec![T::zero(); y.numel()];
    for ((yr, gr), out) in y.data().chunks(d).zip(g.data().chunks(d)).zip(dx.chunks_mut(d)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for i in 0..d {
            out[i] = yr[i] * (gr[i] - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), dx).unwrap()
}

pub(super) fn log_softmax_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let d = last_dim(y.shape());
    let mut dx = vec![T::zero(); y.numel()];
    for ((yr, gr), out) in y.data().chunks(d).zip(g.data().chunks(d)).zip(dx.chunks_mut(d)) {
        let total: T = gr.iter().copied().sum();
        for i in 0..d {
            out[i] = gr[i] - yr[i].exp() * total;
        }
    }
    Tensor::new(y.shape().to_vec(), dx).unwrap()
}

#[allow(clippy::too_many_arguments)]
pub(super) fn layer_norm_backward<T: Real>(
    x: Var,
    gamma: Var,
    gv: &Tensor<T>,
    beta: Var,
    xhat: &[T],
    rstd: &[T],
    g: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let d = gv.numel();
    let gd = g.data();
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); gd.len()];
    for i in 0..gd.len() {
        let c = i % d;
        dgamma[c] += gd[i] * xhat[i];
        dbeta[c] += gd[i];
        dxhat[i] = gd[i] * gv.data()[c];
    }
    let dx = normalize_rows_backward(&dxhat, xhat, rstd, d);
    vec![
        (x, Tensor::new(g.shape().to_vec(), dx).unwrap()),
        (gamma, Tensor::new(vec![d], dgamma).unwrap()),
        (beta, Tensor::new(vec![d], dbeta).unwrap()),
    ]
}

#[allow(clippy::too_many_arguments)]
pub(super) fn instance_norm_backward<T: Real>(
    x: Var,
    gamma: Var,
    gv: &Tensor<T>,
    beta: Var,
    xhat: &[T],
    rstd: &[T],
    g: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let shape = g.shape();
    let (c, plane) = (shape[1], shape[2] * shape[3]);
    let gd = g.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dxhat = vec![T::zero(); gd.len()];
    for i in 0..gd.len() {
        let ch = (i / plane) % c;
        dgamma[ch] += gd[i] * xhat[i];
        dbeta[ch] += gd[i];
        dxhat[i] = gd[i] * gv.data()[ch];
    }
    let dx = normalize_rows_backward(&dxhat, xhat, rstd, plane);
    vec![
        (x, Tensor::new(shape.to_vec(), dx).unwrap()),
        (gamma, Tensor::new(vec![c], dgamma).unwrap()),
        (beta, Tensor::new(vec![c], dbeta).unwrap()),
    ]
}

pub(super) fn relu_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    zip_map(g, x.data(), |d, v| if v > T::zero() { d } else { T::zero() })
}

pub(super) fn gelu_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    zip_map(g, x.data(), |d, v| d * gelu_parts(v).1)
}

pub(super) fn concat_backward<T: Real>(shapes: &[&[usize]], axis: usize, g: &Tensor<T>) -> Vec<Tensor<T>> {
    let first = shapes[0];
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let mut parts: Vec<Vec<T>> = shapes.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
    let mut off = 0;
    for _ in 0..outer {
        for (part, s) in parts.iter_mut().zip(shapes) {
            let block = s[axis] * inner;
            part.extend_from_slice(&g.data()[off..off + block]);
            off += block;
        }
    }
    parts.into_iter().zip(shapes).map(|(p, s)| Tensor::new(s.to_vec(), p).unwrap()).collect()
}

pub(super) fn permute_backward<T: Real>(g: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let mut inverse = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    permute_tensor(g, &inverse)
}

pub(super) fn max_pool_vertical_backward<T: Real>(shape: &[usize], argmax: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(shape.to_vec());
    for (&src, &d) in argmax.iter().zip(g.data()) {
        dx.data_mut()[src] += d;
    }
    dx
}

pub(super) fn cross_entropy_backward<T: Real>(
    shape: &[usize],
    targets: &[usize],
    ignore: Option<usize>,
    probs: &[T],
    scale: T,
    g: &Tensor<T>,
) -> Tensor<T> {
    let v = shape[1];
    let s = g.item() * scale;
    let mut dx = vec![T::zero(); probs.len()];
    for (r, &t) in targets.iter().enumerate() {
        if Some(t) == ignore {
            continue;
        }
        for j in 0..v {
            dx[r * v + j] = probs[r * v + j] * s;
        }
        dx[r * v + t] -= s;
    }
    Tensor::new(shape.to_vec(), dx).unwrap()
}
