//! Stage drivers: encoder pretraining on text lines, synthetic pretraining
//! of the whole model, and fine-tuning strategies A to D.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use super::eval::{validate, Score};
use super::manifest::{Record, RunManifest};
use super::schedule::{mix_sample, Curriculum, MixingRamp, Source};
use super::step::{fit_minimum, step_rng, LineSample, Sample, Trainer, TrainerConfig};
use super::{Result, TrainError};
use crate::codec::{serialize, Document, TaskPrompt};
use crate::image::GrayImage;
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint, Model, ModelConfig};
use crate::noise::CandidateTable;
use crate::synthgen::{Family, Generator, PageConfig};
use crate::tokenizer::{Task, Vocabulary, LATIN_ALPHABET};
use crate::util::sha256_hex;
use crate::Exec;

const DRAW_SALT: u64 = 0x5EED_D2A3_0000_0001;
const LINE_SALT: u64 = 0x5EED_11FE_0000_0002;

/// Characters predicted by the CTC head, in class order.
pub fn ctc_alphabet() -> Vec<char> {
    LATIN_ALPHABET.chars().collect()
}

/// CTC classes of `text`, or `None` if a character is outside the alphabet.
pub fn char_classes(text: &str) -> Option<Vec<usize>> {
    let alphabet = ctc_alphabet();
    text.chars().map(|c| alphabet.iter().position(|&a| a == c)).collect()
}

pub fn classes_text(classes: &[usize]) -> String {
    let alphabet = ctc_alphabet();
    classes.iter().filter_map(|&c| alphabet.get(c)).collect()
}

/// The configured pool of rendered lines with their CTC targets.
pub fn line_pool(generator: &Generator, cfg: &RunConfig) -> Result<Vec<LineSample>> {
    let generator = generator.clone().with_size_range(cfg.line_font.0, cfg.line_font.1);
    cfg.exec
        .map_range(cfg.line_count, |i| -> Result<LineSample> {
            let line = generator.line(cfg.line_words, cfg.line_width, cfg.seed ^ LINE_SALT, i as u64)?;
            let target = char_classes(&line.text)
                .ok_or_else(|| TrainError::Config(format!("line {:?} leaves the CTC alphabet", line.text)))?;
            Ok(LineSample { image: line.image, target })
        })
        .into_iter()
        .collect()
}

pub fn save_checkpoint(path: &Path, model: &Model<f32>, meta: &BTreeMap<String, String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| TrainError::MissingStage(format!("checkpoint {}: {e}", path.display())))?;
    Ok(read_checkpoint(BufReader::new(file))?)
}

fn corpora_of(ckpt: &Checkpoint) -> BTreeSet<String> {
    ckpt.meta
        .get("corpora")
        .map(|s| s.split(',').filter(|c| !c.is_empty()).map(str::to_string).collect())
        .unwrap_or_default()
}

fn meta(stage: &str, corpora: &BTreeSet<String>, seed: u64, step: u64) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("stage".to_string(), stage.to_string()),
        ("corpora".to_string(), corpora.iter().cloned().collect::<Vec<_>>().join(",")),
        ("seed".to_string(), seed.to_string()),
        ("step".to_string(), step.to_string()),
    ])
}

/// A labelled page of a real dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub image: GrayImage,
    pub document: Document,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub id: String,
    /// Layout family of the synthetic pages that imitate this dataset.
    pub family: Family,
    pub task: Task,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
}

impl Dataset {
    /// Name of the synthetic corpus that imitates this dataset.
    pub fn corpus(&self) -> String {
        format!("synth:{}", self.id)
    }
}

/// Every tunable of the training pipeline except the model shape.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub batch: usize,
    pub encoder_steps: u64,
    pub pretrain_steps: u64,
    pub finetune_steps: u64,
    pub encoder_lr: f64,
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub noise_rate: f64,
    /// Steps between line-budget increments.
    pub curriculum_every: u64,
    pub ramp_length: u64,
    pub validate_every: u64,
    pub page_width: usize,
    pub page_height: usize,
    /// Size of the rendered line pool for encoder pretraining.
    pub line_count: usize,
    pub line_words: usize,
    pub line_width: f32,
    /// Font size range of pretraining lines, in pixels.
    pub line_font: (f32, f32),
    pub exec: Exec,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            seed: 7,
            batch: 4,
            encoder_steps: 500,
            pretrain_steps: 2000,
            finetune_steps: 2000,
            encoder_lr: 1e-3,
            pretrain_lr: 1e-4,
            finetune_lr: 1e-5,
            noise_rate: 0.3,
            curriculum_every: 50,
            ramp_length: 1000,
            validate_every: 200,
            page_width: 640,
            page_height: 900,
            line_count: 20,
            line_words: 3,
            line_width: 400.0,
            line_font: (24.0, 32.0),
            exec: Exec::Sequential,
        }
    }

    pub fn paper_full() -> Self {
        Self {
            encoder_steps: 40_000,
            encoder_lr: 1e-4,
            pretrain_steps: 300_000,
            finetune_steps: 300_000,
            ramp_length: 300_000,
            validate_every: 5_000,
            line_count: 100_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if self.curriculum_every == 0 || self.validate_every == 0 {
            return bad("curriculum_every and validate_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise_rate must lie in [0, 1]");
        }
        if !(self.line_font.0 > 0.0 && self.line_font.0 <= self.line_font.1) {
            return bad("line_font must be a positive range");
        }
        if !(self.encoder_lr > 0.0 && self.pretrain_lr > 0.0 && self.finetune_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    /// Hash of everything that influences results, including the model shape.
    pub fn fingerprint(&self, model: &ModelConfig) -> String {
        let mut text = format!(
            "seed={} batch={} steps={},{},{} lr={:e},{:e},{:e} noise={:e} every={} ramp={} validate={} page={}x{} lines={},{},{:e},{:e},{:e}\n",
            self.seed,
            self.batch,
            self.encoder_steps,
            self.pretrain_steps,
            self.finetune_steps,
            self.encoder_lr,
            self.pretrain_lr,
            self.finetune_lr,
            self.noise_rate,
            self.curriculum_every,
            self.ramp_length,
            self.validate_every,
            self.page_width,
            self.page_height,
            self.line_count,
            self.line_words,
            self.line_width,
            self.line_font.0,
            self.line_font.1,
        );
        for (k, v) in model.entries() {
            text.push_str(&format!("{k}={v}\n"));
        }
        sha256_hex(text.as_bytes())
    }

    fn trainer(&self, lr: f64, noise_rate: f64, pad: usize) -> TrainerConfig {
        TrainerConfig { lr, noise_rate, seed: self.seed, pad, exec: self.exec }
    }
}

/// Shared resources of the sequence stages.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub vocab: &'a Vocabulary,
    pub table: &'a CandidateTable,
    pub generator: &'a Generator,
}

/// What a finished stage leaves behind.
#[derive(Debug)]
pub struct StageOutput {
    pub model: Model<f32>,
    pub manifest: RunManifest,
    /// Last weights of the stage.
    pub checkpoint: PathBuf,
}

fn open_manifest(out_dir: &Path, name: &str) -> Result<RunManifest> {
    std::fs::create_dir_all(out_dir)?;
    RunManifest::create(&out_dir.join(format!("{name}.manifest")))
}

fn header(m: &mut RunManifest, stage: &str, cfg: &RunConfig, model: &ModelConfig) -> Result<()> {
    m.append(Record::Stage(stage.into()))?;
    m.append(Record::Seed(cfg.seed))?;
    m.append(Record::Config(cfg.fingerprint(model)))
}

/// Trains the encoder and CTC head on rendered lines, cycling through the pool in order.
pub fn pretrain_encoder(
    model: Model<f32>,
    pool: &[LineSample],
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<StageOutput> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(TrainError::Config("encoder pretraining needs a non-empty line pool".into()));
    }
    let mut manifest = open_manifest(out_dir, "encoder")?;
    header(&mut manifest, "pretrain-encoder", cfg, &model.config)?;
    manifest.append(Record::Corpus("lines".into()))?;
    let mut trainer = Trainer::new(model, cfg.trainer(cfg.encoder_lr, 0.0, 0))?;
    for step in 0..cfg.encoder_steps {
        let batch: Vec<LineSample> =
            (0..cfg.batch).map(|slot| pool[(step as usize * cfg.batch + slot) % pool.len()].clone()).collect();
        let report = trainer.ctc_step(&batch)?;
        for (slot, why) in &report.skipped {
            manifest.append(Record::Warning { step, message: format!("line slot {slot} skipped: {why}") })?;
        }
        manifest.append(Record::Loss { step, value: report.loss })?;
    }
    let path = out_dir.join("encoder.ckpt");
    let corpora = BTreeSet::from(["lines".to_string()]);
    save_checkpoint(&path, &trainer.model, &meta("pretrain-encoder", &corpora, cfg.seed, cfg.encoder_steps))?;
    manifest.append(Record::Steps(cfg.encoder_steps))?;
    manifest.append(Record::Checkpoint(path.display().to_string()))?;
    Ok(StageOutput { model: trainer.model, manifest, checkpoint: path })
}

/// One stream the sequence stages draw from.
struct Stream<'a> {
    corpus: String,
    family: Family,
    prompt: TaskPrompt,
    real: &'a [Example],
}

fn streams<'a>(datasets: &[&'a Dataset], vocab: &Vocabulary, with_real: bool) -> Result<Vec<Stream<'a>>> {
    datasets
        .iter()
        .map(|d| {
            Ok(Stream {
                corpus: d.corpus(),
                family: d.family,
                prompt: TaskPrompt::new(vocab, d.task.clone())?,
                real: if with_real { &d.train } else { &[] },
            })
        })
        .collect()
}

/// Draws sample `slot` of `step`: a stream uniformly, then real or synthetic.
/// Synthetic pages follow the stream's curriculum and are indexed by the
/// global sample counter, so the result does not depend on scheduling.
fn draw(
    ctx: &Context,
    streams: &[Stream],
    cfg: &RunConfig,
    ramp: &MixingRamp,
    step: u64,
    slot: usize,
) -> std::result::Result<Sample, String> {
    let mut rng = step_rng(cfg.seed ^ DRAW_SALT, step, slot as u64);
    let stream = &streams[rng.gen_range(0..streams.len())];
    let (image, doc) = match mix_sample(step, ramp, &mut rng, stream.real.len()) {
        Source::Real(i) => (stream.real[i].image.clone(), stream.real[i].document.clone()),
        Source::Synthetic => {
            let lines =
                Curriculum::new(stream.family.l_max(), cfg.curriculum_every).map_err(|e| e.to_string())?.lines(step);
            let page = PageConfig {
                annotate: matches!(stream.prompt.task, Task::Ner(_)),
                ..PageConfig::new(cfg.page_width, cfg.page_height, lines)
            };
            let index = step * cfg.batch as u64 + slot as u64;
            let s = ctx
                .generator
                .page(stream.family, &page, cfg.seed, index)
                .map_err(|e| format!("{}: {e}", stream.corpus))?;
            (s.image, s.document)
        }
    };
    let ids = serialize(&doc, &stream.prompt, ctx.vocab).map_err(|e| format!("{}: {e}", stream.corpus))?;
    Ok(Sample { image, ids })
}

/// Runs `steps` teacher-forcing steps, calling `after` once each step has been applied.
#[allow(clippy::too_many_arguments)]
fn sequence_loop(
    trainer: &mut Trainer,
    ctx: &Context,
    streams: &[Stream],
    cfg: &RunConfig,
    ramp: &MixingRamp,
    steps: u64,
    manifest: &mut RunManifest,
    mut after: impl FnMut(&Trainer, u64, &mut RunManifest) -> Result<()>,
) -> Result<()> {
    for step in 0..steps {
        let slots: Vec<usize> = (0..cfg.batch).collect();
        let drawn = cfg.exec.map(&slots, |&slot| draw(ctx, streams, cfg, ramp, step, slot));
        let mut batch = Vec::with_capacity(cfg.batch);
        for (slot, d) in drawn.into_iter().enumerate() {
            match d {
                Ok(s) => batch.push(s),
                Err(why) => {
                    manifest.append(Record::Warning { step, message: format!("slot {slot} not drawn: {why}") })?
                }
            }
        }
        let report = trainer.train_step(&batch, ctx.table)?;
        for (slot, why) in &report.skipped {
            manifest.append(Record::Warning { step, message: format!("sample {slot} skipped: {why}") })?;
        }
        manifest.append(Record::Loss { step, value: report.loss })?;
        after(trainer, step + 1, manifest)?;
    }
    Ok(())
}

/// Synthetic pretraining of the whole model on the corpora of `datasets`.
/// `name` distinguishes multilingual from monolingual runs in `out_dir`.
pub fn pretrain(
    ctx: &Context,
    init: &Path,
    datasets: &[&Dataset],
    cfg: &RunConfig,
    out_dir: &Path,
    name: &str,
) -> Result<StageOutput> {
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(TrainError::Config("pretraining needs at least one corpus".into()));
    }
    let ckpt = load_checkpoint(init)?;
    let mut corpora = corpora_of(&ckpt);
    let model: Model<f32> = ckpt.into_model()?;
    let mut manifest = open_manifest(out_dir, name)?;
    header(&mut manifest, "pretrain", cfg, &model.config)?;
    manifest.append(Record::Init { stage: "pretrain-encoder".into(), path: init.display().to_string() })?;
    corpora.extend(datasets.iter().map(|d| d.corpus()));
    for c in &corpora {
        manifest.append(Record::Corpus(c.clone()))?;
    }
    let streams = streams(datasets, ctx.vocab, false)?;
    let mut trainer = Trainer::new(model, cfg.trainer(cfg.pretrain_lr, cfg.noise_rate, ctx.vocab.pad()))?;
    let ramp = MixingRamp::new(0.0, 0.0, 1)?;
    sequence_loop(&mut trainer, ctx, &streams, cfg, &ramp, cfg.pretrain_steps, &mut manifest, |_, _, _| Ok(()))?;
    let path = out_dir.join(format!("{name}.ckpt"));
    save_checkpoint(&path, &trainer.model, &meta("pretrain", &corpora, cfg.seed, cfg.pretrain_steps))?;
    manifest.append(Record::Steps(cfg.pretrain_steps))?;
    manifest.append(Record::Checkpoint(path.display().to_string()))?;
    Ok(StageOutput { model: trainer.model, manifest, checkpoint: path })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    A,
    B,
    C,
    D,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::A => "A",
            Strategy::B => "B",
            Strategy::C => "C",
            Strategy::D => "D",
        })
    }
}

impl FromStr for Strategy {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Strategy::A),
            "B" | "b" => Ok(Strategy::B),
            "C" | "c" => Ok(Strategy::C),
            "D" | "d" => Ok(Strategy::D),
            other => Err(TrainError::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    All,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitSource {
    MultilingualPretrain,
    StrategyABest,
    MonolingualPretrain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrategyPreset {
    pub strategy: Strategy,
    /// Corpora of the pretraining the preset starts from.
    pub pretraining: Scope,
    pub finetune: Scope,
    pub init: InitSource,
    pub best_per_dataset: bool,
}

impl Strategy {
    pub fn preset(self) -> StrategyPreset {
        let (pretraining, finetune, init, best_per_dataset) = match self {
            Strategy::A => (Scope::All, Scope::All, InitSource::MultilingualPretrain, true),
            Strategy::B => (Scope::All, Scope::Target, InitSource::MultilingualPretrain, false),
            Strategy::C => (Scope::All, Scope::Target, InitSource::StrategyABest, false),
            Strategy::D => (Scope::Target, Scope::Target, InitSource::MonolingualPretrain, false),
        };
        StrategyPreset { strategy: self, pretraining, finetune, init, best_per_dataset }
    }
}

/// Where earlier stages left their results.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InitSources {
    pub multilingual: Option<PathBuf>,
    pub monolingual: Option<PathBuf>,
    /// Manifest of a finished strategy A run.
    pub strategy_a: Option<PathBuf>,
}

fn required(path: &Option<PathBuf>, stage: &str) -> Result<PathBuf> {
    match path {
        Some(p) if p.exists() => Ok(p.clone()),
        Some(p) => Err(TrainError::MissingStage(format!("{stage} ({} does not exist)", p.display()))),
        None => Err(TrainError::MissingStage(stage.into())),
    }
}

/// Resolves the initialization checkpoint of `preset` and the stage that produced it.
fn resolve_init(preset: &StrategyPreset, target: Option<&Dataset>, init: &InitSources) -> Result<(String, PathBuf)> {
    match preset.init {
        InitSource::MultilingualPretrain => {
            Ok(("pretrain-multilingual".into(), required(&init.multilingual, "multilingual pretraining")?))
        }
        InitSource::MonolingualPretrain => {
            Ok(("pretrain-monolingual".into(), required(&init.monolingual, "monolingual pretraining")?))
        }
        InitSource::StrategyABest => {
            let target = target.ok_or_else(|| TrainError::Config("strategy C needs a target dataset".into()))?;
            let manifest_path = required(&init.strategy_a, "strategy A run")?;
            let a = RunManifest::read(&manifest_path)?;
            let best = a
                .best()
                .remove(&target.id)
                .ok_or_else(|| TrainError::MissingStage(format!("strategy A best checkpoint for {}", target.id)))?;
            let path = PathBuf::from(&best.path);
            if !path.exists() {
                return Err(TrainError::MissingStage(format!("strategy A best checkpoint {}", best.path)));
            }
            Ok(("strategy-A-best".into(), path))
        }
    }
}

/// Fine-tunes according to `preset` on `datasets` (strategy A) or on the
/// dataset named `target` (B, C, D), keeping the best validation weights.
pub fn run_strategy(
    ctx: &Context,
    preset: &StrategyPreset,
    datasets: &[Dataset],
    target: Option<&str>,
    init: &InitSources,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<RunManifest> {
    cfg.validate()?;
    let target = match target {
        Some(id) => Some(
            datasets
                .iter()
                .find(|d| d.id == id)
                .ok_or_else(|| TrainError::Config(format!("target dataset {id:?} is not loaded")))?,
        ),
        None => None,
    };
    let tuned: Vec<&Dataset> =
        match preset.finetune {
            Scope::All => datasets.iter().collect(),
            Scope::Target => vec![target
                .ok_or_else(|| TrainError::Config(format!("strategy {} needs a target dataset", preset.strategy)))?],
        };
    if tuned.is_empty() {
        return Err(TrainError::Config("no dataset to fine-tune on".into()));
    }
    if let Some(d) = tuned.iter().find(|d| d.valid.is_empty() || d.train.is_empty()) {
        return Err(TrainError::Config(format!("dataset {} needs train and valid pages", d.id)));
    }

    let (init_stage, init_path) = resolve_init(preset, target, init)?;
    let ckpt = load_checkpoint(&init_path)?;
    let mut corpora = corpora_of(&ckpt);
    if preset.pretraining == Scope::Target {
        let own = target.map(|t| t.corpus());
        if let Some(other) = corpora.iter().find(|c| c.starts_with("synth:") && Some(*c) != own.as_ref()) {
            return Err(TrainError::Config(format!("monolingual initialization was trained on {other}")));
        }
    }
    corpora.extend(tuned.iter().map(|d| d.corpus()));
    let model: Model<f32> = ckpt.into_model()?;

    let name = preset.strategy.to_string();
    let mut manifest = open_manifest(out_dir, &name)?;
    header(&mut manifest, "finetune", cfg, &model.config)?;
    manifest.append(Record::Strategy(name.clone()))?;
    if let Some(t) = target {
        manifest.append(Record::Target(t.id.clone()))?;
    }
    manifest.append(Record::Init { stage: init_stage, path: init_path.display().to_string() })?;
    for c in &corpora {
        manifest.append(Record::Corpus(c.clone()))?;
    }

    let streams = streams(&tuned, ctx.vocab, true)?;
    let mut trainer = Trainer::new(model, cfg.trainer(cfg.finetune_lr, cfg.noise_rate, ctx.vocab.pad()))?;
    let ramp = MixingRamp::standard(cfg.ramp_length);
    let mut best: BTreeMap<String, Score> = BTreeMap::new();
    let steps = cfg.finetune_steps;
    let mut checkpoint = |trainer: &Trainer, step: u64, manifest: &mut RunManifest| -> Result<()> {
        if !step.is_multiple_of(cfg.validate_every) && step != steps {
            return Ok(());
        }
        for d in &tuned {
            let pages: Vec<(&GrayImage, &Document)> = d.valid.iter().map(|e| (&e.image, &e.document)).collect();
            let score = validate(&trainer.model, &pages, &d.task, ctx.vocab, cfg.exec)?;
            manifest.append(Record::Metric {
                step,
                dataset: d.id.clone(),
                metric: score.name().into(),
                value: score.value(),
            })?;
            if best.get(&d.id).is_none_or(|b| score.better_than(b)) {
                best.insert(d.id.clone(), score);
                let path = out_dir.join(format!("{name}-best-{}.ckpt", d.id));
                save_checkpoint(&path, &trainer.model, &meta(&format!("finetune-{name}"), &corpora, cfg.seed, step))?;
                manifest.append(Record::Best {
                    dataset: d.id.clone(),
                    step,
                    metric: score.name().into(),
                    value: score.value(),
                    path: path.display().to_string(),
                })?;
            }
        }
        Ok(())
    };
    sequence_loop(&mut trainer, ctx, &streams, cfg, &ramp, steps, &mut manifest, &mut checkpoint)?;
    if steps == 0 {
        checkpoint(&trainer, 0, &mut manifest)?;
    }
    let last = out_dir.join(format!("{name}-last.ckpt"));
    save_checkpoint(&last, &trainer.model, &meta(&format!("finetune-{name}"), &corpora, cfg.seed, steps))?;
    manifest.append(Record::Steps(steps))?;
    manifest.append(Record::Checkpoint(last.display().to_string()))?;
    Ok(manifest)
}

/// The page is padded to the encoder minimum before CTC decoding.
pub fn ctc_transcribe(model: &Model<f32>, image: &GrayImage) -> Result<String> {
    Ok(classes_text(&model.ctc_decode(&fit_minimum(model, image))?))
}
