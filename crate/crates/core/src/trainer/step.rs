//! One optimizer step over a batch of independent per-sample tapes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, TrainError};
use crate::image::GrayImage;
use crate::model::{Model, ModelError};
use crate::noise::{inject_errors_with, CandidateTable};
use crate::tensor::{Adam, AdamConfig, Graph, ParamId, Reduction, Tensor, TensorError};
use crate::tokenizer::TokenId;
use crate::Exec;

/// A page and its full serialized label, start token through end token,
/// optionally followed by padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub ids: Vec<TokenId>,
}

/// A text line and its character classes for CTC.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSample {
    pub image: GrayImage,
    pub target: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainerConfig {
    pub lr: f64,
    /// Decoder input error-injection rate.
    pub noise_rate: f64,
    pub seed: u64,
    pub pad: TokenId,
    pub exec: Exec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    /// Mean loss per target token (teacher forcing) or per line (CTC).
    pub loss: f64,
    pub tokens: usize,
    /// Batch positions left out, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub updated: bool,
}

/// Random stream for slot `slot` of step `step`.
pub fn step_rng(seed: u64, step: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(slot);
    rng
}

/// Decoder input and target for teacher forcing. Errors are injected into
/// the input only; padded target positions are ignored by the loss.
pub fn teacher_forcing_pair(
    ids: &[TokenId],
    table: &CandidateTable,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<TokenId>, Vec<TokenId>) {
    let n = ids.len();
    if n < 2 {
        return (Vec::new(), Vec::new());
    }
    (inject_errors_with(&ids[..n - 1], table, rate, rng), ids[1..].to_vec())
}

/// Pads below the encoder's minimum input size with paper white.
pub fn fit_minimum(model: &Model<f32>, image: &GrayImage) -> GrayImage {
    let (mh, mw) = model.config.encoder.downsampling();
    image.pad_to(mw, mh, 1.0)
}

type Grads = Vec<(ParamId, Tensor<f32>)>;

enum Outcome {
    Done { loss: f64, count: usize, grads: Grads },
    Skipped(String),
}

fn diverged(step: u64, e: ModelError) -> TrainError {
    match e {
        ModelError::Tensor(TensorError::NonFinite { op }) => {
            TrainError::Divergence { step, detail: format!("non-finite value in {op}") }
        }
        ModelError::Tensor(TensorError::NonFiniteGradient { op, node }) => {
            TrainError::Divergence { step, detail: format!("non-finite gradient at node {node} ({op})") }
        }
        other => TrainError::Model(other),
    }
}

pub struct Trainer {
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub config: TrainerConfig,
    step: u64,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainerConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.noise_rate) || !(config.lr.is_finite() && config.lr > 0.0) {
            return Err(TrainError::Config(format!("bad trainer config {config:?}")));
        }
        let adam = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() });
        Ok(Self { model, adam, config, step: 0 })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
        self.adam.config.lr = lr;
    }

    /// Teacher-forced next-token cross-entropy with noisy inputs, then one Adam update.
    pub fn train_step(&mut self, batch: &[Sample], table: &CandidateTable) -> Result<StepReport> {
        let (step, cfg) = (self.step, self.config);
        let max_len = self.model.config.decoder.max_len;
        let model = &self.model;
        let slots: Vec<usize> = (0..batch.len()).collect();
        let outcomes = cfg.exec.map(&slots, |&slot| -> Result<Outcome> {
            let sample = &batch[slot];
            let mut rng = step_rng(cfg.seed, step, slot as u64);
            let (input, target) = teacher_forcing_pair(&sample.ids, table, cfg.noise_rate, &mut rng);
            if input.is_empty() {
                return Ok(Outcome::Skipped("label shorter than two tokens".into()));
            }
            if input.len() > max_len {
                return Ok(Outcome::Skipped(format!(
                    "label of {} tokens exceeds the maximum {max_len}",
                    input.len() + 1
                )));
            }
            let count = target.iter().filter(|&&t| t != cfg.pad).count();
            let image = fit_minimum(model, &sample.image);
            let mut g = Graph::training();
            let run = |g: &mut Graph<f32>, rng: &mut ChaCha8Rng| -> crate::model::Result<_> {
                let f2d = model.encode(g, &image, rng)?;
                let f1d = model.flatten(g, f2d)?;
                let logits = model.logits(g, f1d, &input, rng)?;
                Ok(g.cross_entropy(logits, &target, Some(cfg.pad), Reduction::Sum)?)
            };
            let loss = run(&mut g, &mut rng).map_err(|e| diverged(step, e))?;
            let value = g.value(loss).item() as f64;
            let grads = g.backward(loss).map_err(|e| diverged(step, e.into()))?.into_param_grads();
            Ok(Outcome::Done { loss: value, count, grads })
        });
        self.apply(outcomes, true)
    }

    /// CTC loss of the encoder and CTC head, averaged over lines, then one Adam update.
    pub fn ctc_step(&mut self, batch: &[LineSample]) -> Result<StepReport> {
        let (step, cfg) = (self.step, self.config);
        let model = &self.model;
        let blank = model.config.ctc_classes;
        let slots: Vec<usize> = (0..batch.len()).collect();
        let outcomes = cfg.exec.map(&slots, |&slot| -> Result<Outcome> {
            let line = &batch[slot];
            let mut rng = step_rng(cfg.seed, step, slot as u64);
            let image = fit_minimum(model, &line.image);
            let mut g = Graph::training();
            let f2d = model.encode(&mut g, &image, &mut rng).map_err(|e| diverged(step, e))?;
            let lp = model.ctc_log_probs(&mut g, f2d).map_err(|e| diverged(step, e))?;
            let loss = match g.ctc_loss(lp, &line.target, blank) {
                Ok(l) => l,
                Err(TensorError::InfeasibleTarget { frames, required }) => {
                    return Ok(Outcome::Skipped(format!("{required} frames needed, {frames} available")));
                }
                Err(e) => return Err(diverged(step, e.into())),
            };
            let value = g.value(loss).item() as f64;
            let grads = g.backward(loss).map_err(|e| diverged(step, e.into()))?.into_param_grads();
            Ok(Outcome::Done { loss: value, count: 1, grads })
        });
        self.apply(outcomes, false)
    }

    /// Sums per-sample gradients in batch order and takes one optimizer step.
    fn apply(&mut self, outcomes: Vec<Result<Outcome>>, per_token: bool) -> Result<StepReport> {
        let step = self.step;
        let mut total: Vec<Option<Tensor<f32>>> = vec![None; self.model.params.len()];
        let (mut loss, mut count, mut skipped) = (0.0f64, 0usize, Vec::new());
        for (slot, outcome) in outcomes.into_iter().enumerate() {
            match outcome? {
                Outcome::Skipped(why) => skipped.push((slot, why)),
                Outcome::Done { loss: l, count: c, grads } => {
                    loss += l;
                    count += c;
                    for (id, g) in grads {
                        match &mut total[id.index()] {
                            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
            }
        }
        self.step += 1;
        if !loss.is_finite() {
            return Err(TrainError::Divergence { step, detail: format!("loss {loss}") });
        }
        if count == 0 {
            return Ok(StepReport { step, loss: 0.0, tokens: 0, skipped, updated: false });
        }
        let scale = 1.0 / count as f32;
        let grads: Grads = self
            .model
            .params
            .ids()
            .zip(total)
            .filter_map(|(id, g)| g.map(|g| (id, g)))
            .map(|(id, mut g)| {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
                (id, g)
            })
            .collect();
        self.adam.step(&mut self.model.params, &grads).map_err(|e| diverged(step, e.into()))?;
        let tokens = if per_token { count } else { 0 };
        Ok(StepReport { step, loss: loss / count as f64, tokens, skipped, updated: true })
    }
}
