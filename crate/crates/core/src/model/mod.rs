//! Encoder-decoder recognizer: convolutional encoder over the whole page,
//! 2D positional encoding, transformer decoder emitting subword tokens, and a
//! CTC head for encoder pretraining.

mod checkpoint;
mod decoder;
mod encoder;
mod pos;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::image::GrayImage;
use crate::tensor::{Graph, ParamStore, Real, Tensor, TensorError, Var};
use crate::Exec;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, MAGIC};
pub use decoder::{argmax, DecoderConfig, Session, TokenPositions};
pub use encoder::{BlockKind, BlockSpec, EncoderConfig, EncoderPreset, BLOCKS};
pub use pos::{pos1d, pos2d};

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input {height}x{width} is smaller than the minimum {min_height}x{min_width}")]
    InputSize { height: usize, width: usize, min_height: usize, min_width: usize },
    #[error("token sequence of length {len} exceeds the maximum {max}")]
    Length { len: usize, max: usize },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
}

/// Name, shape and initializer of one trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

impl ParamSpec {
    /// He-uniform for layers followed by a ReLU.
    pub(crate) fn fan_in(name: String, shape: Vec<usize>, fan_in: usize) -> Self {
        Self { name, shape, init: Init::Uniform((6.0 / fan_in as f64).sqrt()) }
    }

    /// Glorot-uniform weight `[n_in, n_out]`.
    pub(crate) fn linear(name: String, n_in: usize, n_out: usize) -> Self {
        Self { name, shape: vec![n_in, n_out], init: Init::Uniform((6.0 / (n_in + n_out) as f64).sqrt()) }
    }

    /// Unit-variance uniform table.
    pub(crate) fn embedding(name: String, shape: Vec<usize>) -> Self {
        Self { name, shape, init: Init::Uniform(3f64.sqrt()) }
    }

    pub(crate) fn zeros(name: String, shape: Vec<usize>) -> Self {
        Self { name, shape, init: Init::Zeros }
    }

    pub(crate) fn ones(name: String, shape: Vec<usize>) -> Self {
        Self { name, shape, init: Init::Ones }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    fn sample<T: Real>(&self, rng: &mut impl Rng) -> Tensor<T> {
        match self.init {
            Init::Zeros => Tensor::zeros(self.shape.clone()),
            Init::Ones => Tensor::ones(self.shape.clone()),
            Init::Uniform(b) => Tensor::from_fn(self.shape.clone(), |_| T::lit(rng.gen_range(-b..=b))),
        }
    }
}

pub(crate) fn param<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, name: &str) -> Result<Var> {
    let id = store.id(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
    Ok(g.param(store, id))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Characters recognised by the CTC head; the blank is index `ctc_classes`.
    pub ctc_classes: usize,
    /// Dataset statistics used to standardise pixels.
    pub pixel_mean: f32,
    pub pixel_std: f32,
}

impl ModelConfig {
    /// Small enough to train on a laptop CPU.
    pub fn desk(vocab: usize, ctc_classes: usize) -> Self {
        let encoder = EncoderConfig { dropout: 0.0, ..EncoderConfig::preset(EncoderPreset::Desk, false) };
        Self { encoder, decoder: DecoderConfig::desk(vocab), ctc_classes, pixel_mean: 0.9, pixel_std: 0.25 }
    }

    /// Base encoder with a four-block decoder of width 1024.
    pub fn full(vocab: usize, ctc_classes: usize) -> Self {
        Self {
            encoder: EncoderConfig::preset(EncoderPreset::Base, false),
            decoder: DecoderConfig::full(vocab),
            ctc_classes,
            pixel_mean: 0.9,
            pixel_std: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        let c = self.encoder.out_channels();
        if c != self.decoder.dim {
            return Err(ModelError::Config(format!(
                "encoder emits {c} channels but the decoder width is {}",
                self.decoder.dim
            )));
        }
        if !c.is_multiple_of(4) {
            return Err(ModelError::Config(format!("encoder output channels {c} must be divisible by 4")));
        }
        if self.ctc_classes == 0 {
            return Err(ModelError::Config("CTC head needs at least one class".into()));
        }
        if !(self.pixel_std > 0.0 && self.pixel_std.is_finite() && self.pixel_mean.is_finite()) {
            return Err(ModelError::Config(format!("bad pixel statistics {} / {}", self.pixel_mean, self.pixel_std)));
        }
        Ok(())
    }

    /// Every trainable tensor, in registration order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        self.encoder.param_specs(&mut out);
        self.decoder.param_specs(&mut out);
        let c = self.encoder.out_channels();
        // zero weights make the untrained head exactly uniform
        out.push(ParamSpec::zeros("ctc.w".into(), vec![c, self.ctc_classes + 1]));
        out.push(ParamSpec::zeros("ctc.b".into(), vec![self.ctc_classes + 1]));
        out
    }

    /// Flat `key=value` form used in checkpoint headers.
    pub fn entries(&self) -> Vec<(String, String)> {
        let e = &self.encoder;
        let d = &self.decoder;
        let channels: Vec<String> = e.channels.iter().map(usize::to_string).collect();
        [
            ("encoder.channels", channels.join(",")),
            ("encoder.mpopp", e.mpopp.to_string()),
            ("encoder.dropout", e.dropout.to_string()),
            ("decoder.blocks", d.blocks.to_string()),
            ("decoder.dim", d.dim.to_string()),
            ("decoder.heads", d.heads.to_string()),
            ("decoder.ffn", d.ffn.to_string()),
            ("decoder.vocab", d.vocab.to_string()),
            ("decoder.max_len", d.max_len.to_string()),
            ("decoder.dropout", d.dropout.to_string()),
            ("decoder.positions", d.positions.to_string()),
            ("ctc.classes", self.ctc_classes.to_string()),
            ("pixel.mean", self.pixel_mean.to_string()),
            ("pixel.std", self.pixel_std.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_entries(entries: &BTreeMap<String, String>) -> Result<Self> {
        fn get<'a>(m: &'a BTreeMap<String, String>, k: &str) -> Result<&'a str> {
            m.get(k).map(String::as_str).ok_or_else(|| ModelError::Config(format!("missing key {k}")))
        }
        fn num<T: std::str::FromStr>(m: &BTreeMap<String, String>, k: &str) -> Result<T> {
            let v = get(m, k)?;
            v.parse().map_err(|_| ModelError::Config(format!("bad value {v:?} for {k}")))
        }
        let channels = get(entries, "encoder.channels")?
            .split(',')
            .map(|c| c.parse().map_err(|_| ModelError::Config(format!("bad channel count {c:?}"))))
            .collect::<Result<Vec<usize>>>()?;
        let config = Self {
            encoder: EncoderConfig {
                channels,
                mpopp: num(entries, "encoder.mpopp")?,
                dropout: num(entries, "encoder.dropout")?,
            },
            decoder: DecoderConfig {
                blocks: num(entries, "decoder.blocks")?,
                dim: num(entries, "decoder.dim")?,
                heads: num(entries, "decoder.heads")?,
                ffn: num(entries, "decoder.ffn")?,
                vocab: num(entries, "decoder.vocab")?,
                max_len: num(entries, "decoder.max_len")?,
                dropout: num(entries, "decoder.dropout")?,
                positions: get(entries, "decoder.positions")?.parse()?,
            },
            ctc_classes: num(entries, "ctc.classes")?,
            pixel_mean: num(entries, "pixel.mean")?,
            pixel_std: num(entries, "pixel.std")?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parameter counts computed from the configuration alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub encoder: usize,
    pub decoder_blocks: usize,
    pub embedding: usize,
    pub decision: usize,
    /// Learned token positions and the final norm.
    pub decoder_other: usize,
    pub ctc_head: usize,
}

impl ParamCounts {
    /// Recognizer size, excluding the pretraining-only CTC head.
    pub fn total(&self) -> usize {
        self.encoder + self.decoder_blocks + self.embedding + self.decision + self.decoder_other
    }
}

impl fmt::Display for ParamCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "encoder\t{}", self.encoder)?;
        writeln!(f, "decoder_blocks\t{}", self.decoder_blocks)?;
        writeln!(f, "embedding\t{}", self.embedding)?;
        writeln!(f, "decision\t{}", self.decision)?;
        writeln!(f, "decoder_other\t{}", self.decoder_other)?;
        writeln!(f, "ctc_head\t{}", self.ctc_head)?;
        writeln!(f, "total\t{}", self.total())
    }
}

pub fn count_params(config: &ModelConfig) -> Result<ParamCounts> {
    config.validate()?;
    let mut counts =
        ParamCounts { encoder: 0, decoder_blocks: 0, embedding: 0, decision: 0, decoder_other: 0, ctc_head: 0 };
    for spec in config.param_specs() {
        let n = spec.numel();
        let name = spec.name.as_str();
        let slot = if name.starts_with("enc.") {
            &mut counts.encoder
        } else if name.starts_with("ctc.") {
            &mut counts.ctc_head
        } else if name == "dec.embed" {
            &mut counts.embedding
        } else if name == "dec.out.w" {
            &mut counts.decision
        } else if name.split('.').nth(1).is_some_and(|s| s.parse::<usize>().is_ok()) {
            &mut counts.decoder_blocks
        } else {
            &mut counts.decoder_other
        };
        *slot += n;
    }
    Ok(counts)
}

/// Configuration plus weights.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Random initialization, fully determined by `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for spec in config.param_specs() {
            let t = spec.sample::<T>(&mut rng);
            params.add(spec.name, t)?;
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        for spec in config.param_specs() {
            let id = params.id(&spec.name).ok_or_else(|| ModelError::MissingParam(spec.name.clone()))?;
            if params.get(id).shape() != spec.shape.as_slice() {
                return Err(ModelError::Config(format!(
                    "{} has shape {:?}, expected {:?}",
                    spec.name,
                    params.get(id).shape(),
                    spec.shape
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast() }
    }

    /// Standardised `[1,1,H,W]` input.
    pub fn image_tensor(&self, image: &GrayImage) -> Result<Tensor<T>> {
        let (m, s) = (self.config.pixel_mean, self.config.pixel_std);
        let data = image.pixels().iter().map(|&p| T::lit(((p - m) / s) as f64)).collect();
        Ok(Tensor::new(vec![1, 1, image.height(), image.width()], data)?)
    }

    /// `f2D: [1,C,H_f,W_f]`.
    pub fn encode(&self, g: &mut Graph<T>, image: &GrayImage, rng: &mut impl Rng) -> Result<Var> {
        let x = g.constant(self.image_tensor(image)?);
        encoder::forward(g, &self.params, &self.config.encoder, x, rng)
    }

    /// Adds the 2D positional encoding and flattens row-major to `[H_f·W_f, C]`.
    pub fn flatten(&self, g: &mut Graph<T>, f2d: Var) -> Result<Var> {
        let shape = g.shape(f2d).to_vec();
        let (c, h, w) = (shape[1], shape[2], shape[3]);
        let pe = g.constant(pos2d::<T>(h, w, c)?.reshaped(shape)?);
        let x = g.add(f2d, pe)?;
        let x = g.reshape(x, vec![c, h * w])?;
        Ok(g.permute(x, &[1, 0])?)
    }

    /// Teacher-forced logits `[len(ids), vocab]`.
    pub fn logits(&self, g: &mut Graph<T>, f1d: Var, ids: &[usize], rng: &mut impl Rng) -> Result<Var> {
        decoder::forward(g, &self.params, &self.config.decoder, f1d, ids, rng)
    }

    /// Per-column log-probabilities `[W_f, classes + 1]`.
    pub fn ctc_log_probs(&self, g: &mut Graph<T>, f2d: Var) -> Result<Var> {
        let shape = g.shape(f2d).to_vec();
        let (c, w) = (shape[1], shape[3]);
        let pooled = g.adaptive_max_pool_vertical(f2d)?;
        let cols = g.reshape(pooled, vec![c, w])?;
        let cols = g.permute(cols, &[1, 0])?;
        let (wt, b) = (param(g, &self.params, "ctc.w")?, param(g, &self.params, "ctc.b")?);
        let logits = g.linear(cols, wt, Some(b))?;
        Ok(g.log_softmax(logits)?)
    }

    /// Inference-mode `f1D` for one image.
    pub fn features(&self, image: &GrayImage) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f2d = self.encode(&mut g, image, &mut rng)?;
        let f1d = self.flatten(&mut g, f2d)?;
        Ok(g.value(f1d).clone())
    }

    /// Inference-mode teacher-forced logits.
    pub fn prefix_logits(&self, f1d: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = g.constant(f1d.clone());
        let logits = self.logits(&mut g, f, ids, &mut rng)?;
        Ok(g.value(logits).clone())
    }

    /// Logits for several prefixes at once. Shorter prefixes are right-padded
    /// with `pad` to the longest one and the padded rows dropped again.
    pub fn prefix_logits_batch(
        &self,
        f1ds: &[Tensor<T>],
        prefixes: &[Vec<usize>],
        pad: usize,
        exec: Exec,
    ) -> Result<Vec<Tensor<T>>> {
        if f1ds.len() != prefixes.len() {
            return Err(ModelError::Config(format!("{} feature maps for {} prefixes", f1ds.len(), prefixes.len())));
        }
        let longest = prefixes.iter().map(Vec::len).max().unwrap_or(0);
        let idx: Vec<usize> = (0..prefixes.len()).collect();
        exec.map(&idx, |&i| {
            let mut ids = prefixes[i].clone();
            ids.resize(longest, pad);
            let full = self.prefix_logits(&f1ds[i], &ids)?;
            let v = self.config.decoder.vocab;
            let n = prefixes[i].len();
            Ok(Tensor::new(vec![n, v], full.data()[..n * v].to_vec())?)
        })
        .into_iter()
        .collect()
    }

    /// Incremental decoder over one feature map.
    pub fn session<'a>(&'a self, f1d: &Tensor<T>) -> Result<Session<'a, T>> {
        Session::new(&self.params, &self.config.decoder, f1d)
    }

    /// Greedy decoding from `start`: appends the arg-max token (lowest id on
    /// ties) until `end` or `max_tokens` tokens. The start token is not
    /// returned; a final `end` is.
    pub fn greedy_decode(&self, f1d: &Tensor<T>, start: usize, end: usize, max_tokens: usize) -> Result<Vec<usize>> {
        let cap = max_tokens.min(self.config.decoder.max_len);
        let mut session = self.session(f1d)?;
        let mut out = Vec::with_capacity(cap);
        let mut token = start;
        while out.len() < cap {
            token = argmax(&session.step(token)?);
            out.push(token);
            if token == end {
                break;
            }
        }
        Ok(out)
    }

    /// Greedy CTC transcription of one line image.
    pub fn ctc_decode(&self, image: &GrayImage) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f2d = self.encode(&mut g, image, &mut rng)?;
        let lp = self.ctc_log_probs(&mut g, f2d)?;
        let classes = self.config.ctc_classes + 1;
        Ok(crate::tensor::ctc_greedy_decode(g.value(lp).data(), classes, self.config.ctc_classes))
    }
}
