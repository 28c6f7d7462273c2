//! Multi-head scaled dot-product attention as a single tape op.

use super::graph::Op;
use super::ops::softmax_in_place;
use super::{Graph, Real, Result, Tensor, TensorError, Var};

/// Plain forward pass shared by the tape op and incremental decoding.
///
/// `q: [lq,d]`, `k,v: [lk,d]`. With `causal`, query `i` sees keys
/// `0..=i + (lk - lq)`. Returns the output `[lq,d]` and the attention
/// weights `[heads,lq,lk]` (zero where masked).
#[allow(clippy::too_many_arguments)]
pub fn attention_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    lq: usize,
    lk: usize,
    d: usize,
    heads: usize,
    causal: bool,
) -> (Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let offset = if causal { lk - lq } else { 0 };
    let mut out = vec![T::zero(); lq * d];
    let mut probs = vec![T::zero(); heads * lq * lk];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..lq {
            let visible = if causal { i + offset + 1 } else { lk };
            let qi = &q[i * d..][cols.clone()];
            let row = &mut probs[(h * lq + i) * lk..][..visible];
            for (j, s) in row.iter_mut().enumerate() {
                let kj = &k[j * d..][cols.clone()];
                *s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
            }
            softmax_in_place(row);
            let oi = &mut out[i * d..][cols.clone()];
            for (j, &p) in row.iter().enumerate() {
                let vj = &v[j * d..][cols.clone()];
                for (o, &x) in oi.iter_mut().zip(vj) {
                    *o += p * x;
                }
            }
        }
    }
    (out, probs)
}

impl<T: Real> Graph<T> {
    /// Multi-head attention over pre-projected queries, keys and values.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        let ok = sq.len() == 2 && sk.len() == 2 && sk == sv && sq[1] == sk[1];
        if !ok {
            return Err(TensorError::Shape { op: "attention", detail: format!("q {sq:?}, k {sk:?}, v {sv:?}") });
        }
        let (lq, lk, d) = (sq[0], sk[0], sq[1]);
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Domain { op: "attention", detail: format!("{heads} heads do not divide {d}") });
        }
        if causal && lk < lq {
            return Err(TensorError::Shape {
                op: "attention",
                detail: format!("causal with {lk} keys < {lq} queries"),
            });
        }
        let (out, probs) = attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            lq,
            lk,
            d,
            heads,
            causal,
        );
        self.push(Tensor::new(vec![lq, d], out)?, Op::Attention { q, k, v, heads, causal, probs })
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn attention_backward<T: Real>(
    q: Var,
    qv: &Tensor<T>,
    k: Var,
    kv: &Tensor<T>,
    v: Var,
    vv: &Tensor<T>,
    heads: usize,
    causal: bool,
    probs: &[T],
    g: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let (lq, d) = (qv.shape()[0], qv.shape()[1]);
    let lk = kv.shape()[0];
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let offset = if causal { lk - lq } else { 0 };
    let (qd, kd, vd, gd) = (qv.data(), kv.data(), vv.data(), g.data());
    let mut dq = vec![T::zero(); lq * d];
    let mut dk = vec![T::zero(); lk * d];
    let mut dv = vec![T::zero(); lk * d];
    let mut dp = vec![T::zero(); lk];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..lq {
            let visible = if causal { i + offset + 1 } else { lk };
            let p = &probs[(h * lq + i) * lk..][..visible];
            let gi = &gd[i * d + c0..][..dh];
            for j in 0..visible {
                let vj = &vd[j * d + c0..][..dh];
                dp[j] = gi.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                for (acc, &x) in dv[j * d + c0..][..dh].iter_mut().zip(gi) {
                    *acc += p[j] * x;
                }
            }
            let dot: T = p.iter().zip(&dp[..visible]).map(|(&a, &b)| a * b).sum();
            for j in 0..visible {
                let ds = p[j] * (dp[j] - dot) * scale;
                for c in 0..dh {
                    dq[i * d + c0 + c] += ds * kd[j * d + c0 + c];
                    dk[j * d + c0 + c] += ds * qd[i * d + c0 + c];
                }
            }
        }
    }
    vec![
        (q, Tensor::new(vec![lq, d], dq).unwrap()),
        (k, Tensor::new(vec![lk, d], dk).unwrap()),
        (v, Tensor::new(vec![lk, d], dv).unwrap()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_returns_its_value() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::from_fn(vec![3, 4], |i| i as f64));
        let k = g.constant(Tensor::from_fn(vec![1, 4], |i| -(i as f64)));
        let v = g.constant(Tensor::from_fn(vec![1, 4], |i| 10.0 + i as f64));
        let o = g.attention(q, k, v, 2, false).unwrap();
        for row in g.value(o).data().chunks(4) {
            assert_eq!(row, &[10.0, 11.0, 12.0, 13.0]);
        }
    }

    #[test]
    fn causal_first_position_sees_only_itself() {
        let mut g = Graph::<f64>::new();
        let x = Tensor::from_fn(vec![3, 2], |i| (i as f64 * 0.7).cos());
        let q = g.constant(x.clone());
        let v = g.constant(x.clone());
        let o = g.attention(q, q, v, 1, true).unwrap();
        assert_eq!(&g.value(o).data()[..2], &x.data()[..2]);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut g = Graph::<f32>::new();
        let q = g.constant(Tensor::zeros(vec![2, 6]));
        assert!(g.attention(q, q, q, 4, false).is_err());
    }
}
