//! Greedy transcription of pages and the validation metric used for
//! best-checkpoint selection.

use super::step::fit_minimum;
use super::Result;
use crate::codec::{self, Diagnostics, Document, TaskPrompt};
use crate::image::GrayImage;
use crate::metrics::{char_tally, entity_f1, EntityReport, Tally};
use crate::model::Model;
use crate::tokenizer::{Task, TokenId, Vocabulary};
use crate::Exec;

/// Token ids after the start token, and the parsed document.
#[derive(Clone, Debug)]
pub struct Transcription {
    pub ids: Vec<TokenId>,
    pub document: Document,
    pub diagnostics: Diagnostics,
}

pub fn transcribe(
    model: &Model<f32>,
    image: &GrayImage,
    prompt: &TaskPrompt,
    vocab: &Vocabulary,
) -> Result<Transcription> {
    let f1d = model.features(&fit_minimum(model, image))?;
    let ids = model.greedy_decode(&f1d, prompt.start_token, vocab.end(), model.config.decoder.max_len)?;
    let mut framed = Vec::with_capacity(ids.len() + 1);
    framed.push(prompt.start_token);
    framed.extend(&ids);
    let (document, diagnostics) = codec::parse(&framed, vocab);
    Ok(Transcription { ids, document, diagnostics })
}

pub fn transcribe_all(
    model: &Model<f32>,
    images: &[&GrayImage],
    prompt: &TaskPrompt,
    vocab: &Vocabulary,
    exec: Exec,
) -> Result<Vec<Transcription>> {
    exec.map(images, |img| transcribe(model, img, prompt, vocab)).into_iter().collect()
}

/// Validation score of one dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Score {
    /// Micro-averaged character error rate; lower is better.
    Cer(f64),
    /// Entity F1; higher is better.
    F1(f64),
}

impl Score {
    pub fn name(&self) -> &'static str {
        match self {
            Score::Cer(_) => "cer",
            Score::F1(_) => "f1",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Score::Cer(v) | Score::F1(v) => v,
        }
    }

    /// Whether `self` beats `other` of the same kind.
    pub fn better_than(&self, other: &Score) -> bool {
        match (self, other) {
            (Score::Cer(a), Score::Cer(b)) => a < b,
            (Score::F1(a), Score::F1(b)) => a > b,
            _ => false,
        }
    }
}

/// CER for transcription tasks, entity F1 for NER tasks.
pub fn validate(
    model: &Model<f32>,
    pages: &[(&GrayImage, &Document)],
    task: &Task,
    vocab: &Vocabulary,
    exec: Exec,
) -> Result<Score> {
    let prompt = TaskPrompt::new(vocab, task.clone())?;
    let images: Vec<&GrayImage> = pages.iter().map(|(i, _)| *i).collect();
    let preds = transcribe_all(model, &images, &prompt, vocab, exec)?;
    Ok(match task {
        Task::Htr => {
            let mut t = Tally::default();
            for (p, (_, gt)) in preds.iter().zip(pages) {
                t.add(char_tally(&p.document.plain_text(), &gt.plain_text()));
            }
            Score::Cer(t.rate().unwrap_or(0.0))
        }
        Task::Ner(_) => {
            let mut report = EntityReport::from_counts(Default::default());
            for (p, (_, gt)) in preds.iter().zip(pages) {
                report.merge(&entity_f1(&p.document, gt));
            }
            Score::F1(report.overall.score().f1)
        }
    })
}
