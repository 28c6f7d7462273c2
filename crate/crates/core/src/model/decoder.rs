//! Pre-norm transformer decoder: causal self-attention, cross-attention over
//! the flattened feature map, GELU feed-forward.

use rand::Rng;

use super::{param, pos::pos1d, ModelError, ParamSpec, Result};
use crate::tensor::{attention_forward, gelu_value, matmul, normalize_rows, Graph, ParamStore, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenPositions {
    Sinusoidal,
    /// One trained vector per position up to `max_len`.
    Learned,
}

impl std::str::FromStr for TokenPositions {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoidal" => Ok(Self::Sinusoidal),
            "learned" => Ok(Self::Learned),
            other => Err(ModelError::Config(format!("unknown token positions {other:?}"))),
        }
    }
}

impl std::fmt::Display for TokenPositions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sinusoidal => "sinusoidal",
            Self::Learned => "learned",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab: usize,
    /// Longest input prefix and longest generated sequence.
    pub max_len: usize,
    pub dropout: f64,
    pub positions: TokenPositions,
}

impl DecoderConfig {
    pub fn desk(vocab: usize) -> Self {
        Self {
            blocks: 2,
            dim: 128,
            heads: 4,
            ffn: 512,
            vocab,
            max_len: 256,
            dropout: 0.0,
            positions: TokenPositions::Sinusoidal,
        }
    }

    /// Four blocks at width 1024.
    pub fn full(vocab: usize) -> Self {
        Self {
            blocks: 4,
            dim: 1024,
            heads: 16,
            ffn: 4096,
            vocab,
            max_len: 1024,
            dropout: 0.1,
            positions: TokenPositions::Sinusoidal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.blocks == 0 || self.dim == 0 || self.ffn == 0 || self.vocab == 0 || self.max_len == 0 {
            return bad(format!("decoder sizes must be positive: {self:?}"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("{} heads do not divide width {}", self.heads, self.dim));
        }
        if !self.dim.is_multiple_of(2) {
            return bad(format!("decoder width {} must be even", self.dim));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("decoder dropout {} outside [0,1)", self.dropout));
        }
        Ok(())
    }

    pub(super) fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        let d = self.dim;
        out.push(ParamSpec::embedding("dec.embed".into(), vec![self.vocab, d]));
        if self.positions == TokenPositions::Learned {
            out.push(ParamSpec::embedding("dec.pos".into(), vec![self.max_len, d]));
        }
        for l in 0..self.blocks {
            for part in ["self", "cross"] {
                for w in ["q", "k", "v", "o"] {
                    out.push(ParamSpec::linear(format!("dec.{l}.{part}.{w}.w"), d, d));
                    out.push(ParamSpec::zeros(format!("dec.{l}.{part}.{w}.b"), vec![d]));
                }
            }
            for n in 0..3 {
                out.push(ParamSpec::ones(format!("dec.{l}.ln{n}.g"), vec![d]));
                out.push(ParamSpec::zeros(format!("dec.{l}.ln{n}.b"), vec![d]));
            }
            out.push(ParamSpec::linear(format!("dec.{l}.ffn.w1"), d, self.ffn));
            out.push(ParamSpec::zeros(format!("dec.{l}.ffn.b1"), vec![self.ffn]));
            out.push(ParamSpec::linear(format!("dec.{l}.ffn.w2"), self.ffn, d));
            out.push(ParamSpec::zeros(format!("dec.{l}.ffn.b2"), vec![d]));
        }
        out.push(ParamSpec::ones("dec.ln.g".into(), vec![d]));
        out.push(ParamSpec::zeros("dec.ln.b".into(), vec![d]));
        out.push(ParamSpec::linear("dec.out.w".into(), d, self.vocab));
    }
}

fn token_input<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, config: &DecoderConfig, ids: &[usize]) -> Result<Var> {
    if ids.is_empty() || ids.len() > config.max_len {
        return Err(ModelError::Length { len: ids.len(), max: config.max_len });
    }
    let table = param(g, store, "dec.embed")?;
    let x = g.embedding(table, ids)?;
    let pos = match config.positions {
        TokenPositions::Sinusoidal => g.constant(pos1d(ids.len(), config.dim)?),
        TokenPositions::Learned => {
            let table = param(g, store, "dec.pos")?;
            let idx: Vec<usize> = (0..ids.len()).collect();
            g.embedding(table, &idx)?
        }
    };
    Ok(g.add(x, pos)?)
}

fn attend<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    pre: &str,
    x: Var,
    memory: Var,
    heads: usize,
    causal: bool,
) -> Result<Var> {
    let proj = |g: &mut Graph<T>, w: &str, input: Var| -> Result<Var> {
        let (wt, b) = (param(g, store, &format!("{pre}.{w}.w"))?, param(g, store, &format!("{pre}.{w}.b"))?);
        Ok(g.linear(input, wt, Some(b))?)
    };
    let q = proj(g, "q", x)?;
    let k = proj(g, "k", memory)?;
    let v = proj(g, "v", memory)?;
    let a = g.attention(q, k, v, heads, causal)?;
    proj(g, "o", a)
}

fn norm<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, pre: &str, x: Var) -> Result<Var> {
    let (gamma, beta) = (param(g, store, &format!("{pre}.g"))?, param(g, store, &format!("{pre}.b"))?);
    Ok(g.layer_norm(x, gamma, beta)?)
}

/// Teacher-forced logits `[len(ids), vocab]`; row `i` sees `ids[..=i]` and all of `f1d`.
pub(super) fn forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    config: &DecoderConfig,
    f1d: Var,
    ids: &[usize],
    rng: &mut impl Rng,
) -> Result<Var> {
    let mut x = token_input(g, store, config, ids)?;
    x = g.dropout(x, config.dropout, rng)?;
    for l in 0..config.blocks {
        let h = norm(g, store, &format!("dec.{l}.ln0"), x)?;
        let a = attend(g, store, &format!("dec.{l}.self"), h, h, config.heads, true)?;
        let a = g.dropout(a, config.dropout, rng)?;
        x = g.add(x, a)?;
        let h = norm(g, store, &format!("dec.{l}.ln1"), x)?;
        let a = attend(g, store, &format!("dec.{l}.cross"), h, f1d, config.heads, false)?;
        let a = g.dropout(a, config.dropout, rng)?;
        x = g.add(x, a)?;
        let h = norm(g, store, &format!("dec.{l}.ln2"), x)?;
        let (w1, b1) = (param(g, store, &format!("dec.{l}.ffn.w1"))?, param(g, store, &format!("dec.{l}.ffn.b1"))?);
        let (w2, b2) = (param(g, store, &format!("dec.{l}.ffn.w2"))?, param(g, store, &format!("dec.{l}.ffn.b2"))?);
        let h = g.linear(h, w1, Some(b1))?;
        let h = g.gelu(h)?;
        let h = g.linear(h, w2, Some(b2))?;
        let h = g.dropout(h, config.dropout, rng)?;
        x = g.add(x, h)?;
    }
    let x = norm(g, store, "dec.ln", x)?;
    let out = param(g, store, "dec.out.w")?;
    Ok(g.matmul(x, out)?)
}

struct Linear<'a, T> {
    w: &'a [T],
    b: Option<&'a [T]>,
    n_in: usize,
    n_out: usize,
}

impl<'a, T: Real> Linear<'a, T> {
    fn load(store: &'a ParamStore<T>, w: &str, b: Option<&str>) -> Result<Self> {
        let wt = get(store, w)?;
        let b = b.map(|b| get(store, b).map(Tensor::data)).transpose()?;
        Ok(Self { w: wt.data(), b, n_in: wt.shape()[0], n_out: wt.shape()[1] })
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        let rows = x.len() / self.n_in;
        let mut out = vec![T::zero(); rows * self.n_out];
        matmul(x, false, self.w, false, &mut out, rows, self.n_in, self.n_out, false);
        if let Some(b) = self.b {
            for row in out.chunks_mut(self.n_out) {
                row.iter_mut().zip(b).for_each(|(o, &bv)| *o += bv);
            }
        }
        out
    }
}

struct Norm<'a, T> {
    g: &'a [T],
    b: &'a [T],
}

impl<'a, T: Real> Norm<'a, T> {
    fn load(store: &'a ParamStore<T>, pre: &str) -> Result<Self> {
        Ok(Self { g: get(store, &format!("{pre}.g"))?.data(), b: get(store, &format!("{pre}.b"))?.data() })
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        let (mut xhat, _) = normalize_rows(x, self.g.len());
        for row in xhat.chunks_mut(self.g.len()) {
            for ((v, &g), &b) in row.iter_mut().zip(self.g).zip(self.b) {
                *v = *v * g + b;
            }
        }
        xhat
    }
}

fn get<'a, T: Real>(store: &'a ParamStore<T>, name: &str) -> Result<&'a Tensor<T>> {
    store.id(name).map(|id| store.get(id)).ok_or_else(|| ModelError::MissingParam(name.to_string()))
}

struct Attn<'a, T> {
    q: Linear<'a, T>,
    k: Linear<'a, T>,
    v: Linear<'a, T>,
    o: Linear<'a, T>,
}

impl<'a, T: Real> Attn<'a, T> {
    fn load(store: &'a ParamStore<T>, pre: &str) -> Result<Self> {
        let lin = |w: &str| Linear::load(store, &format!("{pre}.{w}.w"), Some(&format!("{pre}.{w}.b")));
        Ok(Self { q: lin("q")?, k: lin("k")?, v: lin("v")?, o: lin("o")? })
    }
}

struct Layer<'a, T> {
    ln: [Norm<'a, T>; 3],
    self_attn: Attn<'a, T>,
    cross: Attn<'a, T>,
    ffn1: Linear<'a, T>,
    ffn2: Linear<'a, T>,
    /// Cross-attention keys and values of the feature map.
    mem_k: Vec<T>,
    mem_v: Vec<T>,
    /// Self-attention keys and values of the tokens seen so far.
    cache_k: Vec<T>,
    cache_v: Vec<T>,
}

/// Incremental decoding state for one image: cross-attention projections are
/// computed once, self-attention keys and values grow by one row per step.
pub struct Session<'a, T> {
    config: &'a DecoderConfig,
    embed: &'a [T],
    learned_pos: Option<&'a [T]>,
    layers: Vec<Layer<'a, T>>,
    final_norm: Norm<'a, T>,
    out: Linear<'a, T>,
    mem_len: usize,
    steps: usize,
}

impl<'a, T: Real> Session<'a, T> {
    pub(super) fn new(store: &'a ParamStore<T>, config: &'a DecoderConfig, f1d: &Tensor<T>) -> Result<Self> {
        let d = config.dim;
        if f1d.shape().len() != 2 || f1d.shape()[1] != d {
            return Err(ModelError::Config(format!("feature map {:?} does not match decoder width {d}", f1d.shape())));
        }
        let mut layers = Vec::with_capacity(config.blocks);
        for l in 0..config.blocks {
            let cross = Attn::load(store, &format!("dec.{l}.cross"))?;
            let mem_k = cross.k.apply(f1d.data());
            let mem_v = cross.v.apply(f1d.data());
            layers.push(Layer {
                ln: [
                    Norm::load(store, &format!("dec.{l}.ln0"))?,
                    Norm::load(store, &format!("dec.{l}.ln1"))?,
                    Norm::load(store, &format!("dec.{l}.ln2"))?,
                ],
                self_attn: Attn::load(store, &format!("dec.{l}.self"))?,
                cross,
                ffn1: Linear::load(store, &format!("dec.{l}.ffn.w1"), Some(&format!("dec.{l}.ffn.b1")))?,
                ffn2: Linear::load(store, &format!("dec.{l}.ffn.w2"), Some(&format!("dec.{l}.ffn.b2")))?,
                mem_k,
                mem_v,
                cache_k: Vec::new(),
                cache_v: Vec::new(),
            });
        }
        let learned_pos = match config.positions {
            TokenPositions::Learned => Some(get(store, "dec.pos")?.data()),
            TokenPositions::Sinusoidal => None,
        };
        Ok(Self {
            config,
            embed: get(store, "dec.embed")?.data(),
            learned_pos,
            layers,
            final_norm: Norm::load(store, "dec.ln")?,
            out: Linear::load(store, "dec.out.w", None)?,
            mem_len: f1d.shape()[0],
            steps: 0,
        })
    }

    /// Tokens consumed so far.
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    /// Feeds one token and returns the logits for the next one.
    pub fn step(&mut self, token: usize) -> Result<Vec<T>> {
        let (d, heads) = (self.config.dim, self.config.heads);
        if self.steps >= self.config.max_len {
            return Err(ModelError::Length { len: self.steps + 1, max: self.config.max_len });
        }
        if token >= self.config.vocab {
            return Err(ModelError::Config(format!("token {token} outside vocabulary of {}", self.config.vocab)));
        }
        let pos = self.steps;
        let mut x: Vec<T> = self.embed[token * d..(token + 1) * d].to_vec();
        match self.learned_pos {
            Some(p) => x.iter_mut().zip(&p[pos * d..(pos + 1) * d]).for_each(|(a, &b)| *a += b),
            None => {
                let pe: Tensor<T> = pos1d(pos + 1, d)?;
                x.iter_mut().zip(&pe.data()[pos * d..]).for_each(|(a, &b)| *a += b);
            }
        }
        let add = |x: &mut Vec<T>, y: Vec<T>| x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
        for layer in &mut self.layers {
            let h = layer.ln[0].apply(&x);
            let q = layer.self_attn.q.apply(&h);
            layer.cache_k.extend(layer.self_attn.k.apply(&h));
            layer.cache_v.extend(layer.self_attn.v.apply(&h));
            let (a, _) = attention_forward(&q, &layer.cache_k, &layer.cache_v, 1, pos + 1, d, heads, false);
            add(&mut x, layer.self_attn.o.apply(&a));
            let h = layer.ln[1].apply(&x);
            let q = layer.cross.q.apply(&h);
            let (a, _) = attention_forward(&q, &layer.mem_k, &layer.mem_v, 1, self.mem_len, d, heads, false);
            add(&mut x, layer.cross.o.apply(&a));
            let h = layer.ln[2].apply(&x);
            let h: Vec<T> = layer.ffn1.apply(&h).into_iter().map(gelu_value).collect();
            add(&mut x, layer.ffn2.apply(&h));
        }
        self.steps += 1;
        Ok(self.out.apply(&self.final_norm.apply(&x)))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
