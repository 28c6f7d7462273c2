//! Training orchestration: CTC encoder pretraining, the line-count
//! curriculum, real/synthetic mixing, noisy teacher forcing, fine-tuning
//! strategies and validation-best checkpointing.

mod eval;
mod manifest;
mod pipeline;
mod schedule;
mod step;

use thiserror::Error;

use crate::codec::CodecError;
use crate::image::ImageError;
use crate::model::ModelError;
use crate::synthgen::SynthError;

pub use eval::{transcribe, transcribe_all, validate, Score, Transcription};
pub use manifest::{Best, Record, RunManifest};
pub use pipeline::{
    char_classes, classes_text, ctc_alphabet, ctc_transcribe, line_pool, load_checkpoint, pretrain, pretrain_encoder,
    run_strategy, save_checkpoint, Context, Dataset, Example, InitSource, InitSources, RunConfig, Scope, StageOutput,
    Strategy, StrategyPreset,
};
pub use schedule::{mix_sample, Curriculum, MixingRamp, Source};
pub use step::{fit_minimum, step_rng, teacher_forcing_pair, LineSample, Sample, StepReport, Trainer, TrainerConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },
    #[error("missing prerequisite stage: {0}")]
    MissingStage(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
