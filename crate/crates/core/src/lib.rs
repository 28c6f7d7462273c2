//! Handwritten document understanding at desk scale: tensors and autodiff,
//! subword vocabularies, synthetic documents, an encoder-decoder recognizer,
//! training loops and evaluation metrics.

pub mod codec;
pub mod image;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod par;
pub mod synthgen;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;
mod util;

pub use par::Exec;
