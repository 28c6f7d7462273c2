use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use scribe_core::codec::{to_label, TaskPrompt};
use scribe_core::image::GrayImage;
use scribe_core::metrics::Evaluation;
use scribe_core::model::Model;
use scribe_core::noise::CandidateTable;
use scribe_core::synthgen::{Corpus, Family, Generator, PageConfig};
use scribe_core::tokenizer::{prune_vocabulary, Task, UnicodeBlockPolicy, Vocabulary};
use scribe_core::trainer::{
    ctc_alphabet, fit_minimum, line_pool, load_checkpoint, pretrain, pretrain_encoder, run_strategy, Context, Dataset,
    InitSources, Record, Strategy,
};

use crate::bench::{self, BenchConfig};
use crate::config::Config;
use crate::data::{load_datasets, load_vocab, parse_label, DataManifest, Entry, Split};
use crate::{Cli, CliError, Command, ConfigArgs};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_input(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("{what} {}: {e}", path.display())))
}

pub fn load_config(args: &ConfigArgs) -> Result<Config, CliError> {
    let mut config = Config::preset(&args.preset)?;
    if let Some(path) = &args.config {
        config.apply_text(&read_input(path, "config")?)?;
    }
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects key=value, got {kv:?}")))?;
        config.set(k.trim(), v)?;
    }
    Ok(config)
}

fn generator(config: &Config) -> Result<Generator, CliError> {
    let (lo, hi) = config.page_fonts()?;
    if !(lo > 0.0 && lo <= hi) {
        return Err(usage("synth.font_min and synth.font_max must form a positive range"));
    }
    Ok(Generator::desk().map_err(|e| CliError::Data(e.to_string()))?.with_size_range(lo, hi))
}

fn load_model(path: &Path, vocab: &Vocabulary) -> Result<Model<f32>, CliError> {
    let model: Model<f32> = load_checkpoint(path)?.into_model()?;
    if model.config.decoder.vocab != vocab.len() {
        return Err(CliError::Data(format!(
            "checkpoint {} expects a vocabulary of {} tokens, got {}",
            path.display(),
            model.config.decoder.vocab,
            vocab.len()
        )));
    }
    Ok(model)
}

fn parse_task(s: &str) -> Result<Task, CliError> {
    Task::parse(s).ok_or_else(|| usage(format!("unknown task {s:?}; expected htr or ner:<name>")))
}

fn prompt(vocab: &Vocabulary, task: Task) -> Result<TaskPrompt, CliError> {
    TaskPrompt::new(vocab, task).map_err(|e| CliError::Data(e.to_string()))
}

/// Greedy label string of one page.
fn decode_label(
    model: &Model<f32>,
    vocab: &Vocabulary,
    image: &GrayImage,
    prompt: &TaskPrompt,
    cap: usize,
) -> Result<String, CliError> {
    let f1d = model.features(&fit_minimum(model, image))?;
    let cap = if cap == 0 { model.config.decoder.max_len } else { cap };
    let mut ids = vec![prompt.start_token];
    ids.extend(model.greedy_decode(&f1d, prompt.start_token, vocab.end(), cap)?);
    vocab.detokenize(&ids).map_err(|e| CliError::Data(e.to_string()))
}

pub fn dispatch(cli: Cli) -> Result<String, CliError> {
    let config = load_config(&cli.config)?;
    let vocab_path = cli.config.vocab.as_deref();
    match cli.command {
        Command::PruneVocab { out, corpus, blocks } => {
            prune_vocab(&config, vocab_path, &out, corpus.as_deref(), blocks.as_deref())
        }
        Command::Gen { template, count, lines_max, seed, out, dataset, split, task, start } => {
            let family: Family =
                template.parse().map_err(|e: scribe_core::synthgen::SynthError| usage(e.to_string()))?;
            let split: Split = split.parse().map_err(|e: CliError| usage(e.to_string()))?;
            let dataset = dataset.unwrap_or_else(|| family.name().to_string());
            let seed = match seed {
                Some(s) => s,
                None => config.seed()?,
            };
            gen(
                &config,
                vocab_path,
                GenArgs { family, count, lines_max, seed, out: &out, dataset, split, task: parse_task(&task)?, start },
            )
        }
        Command::PretrainEncoder { out } => {
            let vocab = load_vocab(vocab_path, &config)?;
            let run = config.run_config()?;
            let model = Model::new(config.model_config(vocab.len(), ctc_alphabet().len())?, run.seed)?;
            let pool = line_pool(&Generator::desk().map_err(|e| CliError::Data(e.to_string()))?, &run)?;
            let stage = pretrain_encoder(model, &pool, &run, &out)?;
            Ok(stage_summary(&stage.manifest, &stage.checkpoint))
        }
        Command::Pretrain { init, out, datasets, name } => {
            let vocab = load_vocab(vocab_path, &config)?;
            let run = config.run_config()?;
            let mut specs = config.datasets()?;
            if let Some(list) = datasets {
                let wanted: Vec<&str> = list.split(',').map(str::trim).collect();
                if let Some(missing) = wanted.iter().find(|w| !specs.iter().any(|s| s.id == **w)) {
                    return Err(usage(format!("dataset {missing:?} is not declared in data.datasets")));
                }
                specs.retain(|s| wanted.contains(&s.id.as_str()));
            }
            let datasets: Vec<Dataset> = specs
                .into_iter()
                .map(|s| Dataset { id: s.id, family: s.family, task: s.task, train: Vec::new(), valid: Vec::new() })
                .collect();
            let refs: Vec<&Dataset> = datasets.iter().collect();
            let table = CandidateTable::build(&vocab, run.exec);
            let generator = generator(&config)?;
            let ctx = Context { vocab: &vocab, table: &table, generator: &generator };
            let stage = pretrain(&ctx, &init, &refs, &run, &out, &name)?;
            Ok(stage_summary(&stage.manifest, &stage.checkpoint))
        }
        Command::Finetune { strategy, manifest, out, target, init_multilingual, init_monolingual, strategy_a } => {
            let strategy: Strategy = strategy.parse()?;
            let vocab = load_vocab(vocab_path, &config)?;
            let run = config.run_config()?;
            let data = DataManifest::read(&manifest)?;
            let datasets = load_datasets(&config.datasets()?, &data, &vocab)?;
            let table = CandidateTable::build(&vocab, run.exec);
            let generator = generator(&config)?;
            let ctx = Context { vocab: &vocab, table: &table, generator: &generator };
            let init = InitSources { multilingual: init_multilingual, monolingual: init_monolingual, strategy_a };
            let m = run_strategy(&ctx, &strategy.preset(), &datasets, target.as_deref(), &init, &run, &out)?;
            let mut s = String::new();
            for (dataset, best) in m.best() {
                writeln!(s, "best\t{dataset}\t{}\t{}\t{}\t{}", best.step, best.metric, best.value, best.path).unwrap();
            }
            writeln!(s, "manifest\t{}", m.path().map(|p| p.display().to_string()).unwrap_or_default()).unwrap();
            Ok(s)
        }
        Command::Eval { task, manifest, split, checkpoint, predictions, out } => {
            let vocab = load_vocab(vocab_path, &config)?;
            let split: Split = split.parse().map_err(|e: CliError| usage(e.to_string()))?;
            let data = DataManifest::read(&manifest)?;
            let source = match (checkpoint, predictions) {
                (Some(c), None) => Predictions::Model(load_model(&c, &vocab)?),
                (None, Some(p)) => Predictions::File(read_predictions(&p)?),
                _ => return Err(usage("eval needs exactly one of --checkpoint or --predictions")),
            };
            let report = eval(&config, &vocab, &data, split, &task, &source)?;
            if let Some(path) = out {
                fs::write(path, &report)?;
            }
            Ok(report)
        }
        Command::Decode { checkpoint, image, task } => {
            let vocab = load_vocab(vocab_path, &config)?;
            let model = load_model(&checkpoint, &vocab)?;
            let file = fs::File::open(&image).map_err(|e| usage(format!("image {}: {e}", image.display())))?;
            let img = GrayImage::read_pgm(std::io::BufReader::new(file)).map_err(|e| CliError::Data(e.to_string()))?;
            let p = prompt(&vocab, parse_task(&task)?)?;
            Ok(format!("{}\n", decode_label(&model, &vocab, &img, &p, config.max_tokens()?)?))
        }
        Command::Bench { checkpoint, manifest, split, baseline_checkpoint, baseline_vocab, out } => {
            let vocab = load_vocab(vocab_path, &config)?;
            let split: Split = split.parse().map_err(|e: CliError| usage(e.to_string()))?;
            let data = DataManifest::read(&manifest)?;
            let entries: Vec<&Entry> = data.select(split).collect();
            let baseline = match (baseline_checkpoint, baseline_vocab) {
                (Some(c), Some(v)) => {
                    let bv = load_vocab(Some(&v), &config)?;
                    Some((load_model(&c, &bv)?, bv))
                }
                _ => None,
            };
            let report =
                bench_command(&config, &data, &entries, &load_model(&checkpoint, &vocab)?, &vocab, baseline.as_ref())?;
            if let Some(path) = out {
                fs::write(path, &report)?;
            }
            Ok(report)
        }
    }
}

fn stage_summary(manifest: &scribe_core::trainer::RunManifest, checkpoint: &Path) -> String {
    let mut s = String::new();
    if let Some((step, loss)) = manifest.losses().last() {
        writeln!(s, "final_loss\t{step}\t{loss}").unwrap();
    }
    let warnings = manifest.records().iter().filter(|r| matches!(r, Record::Warning { .. })).count();
    writeln!(s, "warnings\t{warnings}").unwrap();
    writeln!(s, "checkpoint\t{}", checkpoint.display()).unwrap();
    if let Some(p) = manifest.path() {
        writeln!(s, "manifest\t{}", p.display()).unwrap();
    }
    s
}

fn prune_vocab(
    config: &Config,
    vocab: Option<&Path>,
    out: &Path,
    corpus: Option<&Path>,
    blocks: Option<&Path>,
) -> Result<String, CliError> {
    let vocab = load_vocab(vocab, config)?;
    let policy = match blocks {
        Some(p) => UnicodeBlockPolicy::parse(&read_input(p, "blocks")?).map_err(|e| CliError::Data(e.to_string()))?,
        None => UnicodeBlockPolicy::default_rejected(),
    };
    let text = match corpus {
        Some(p) => read_input(p, "corpus")?,
        None => Corpus::bundled().joined(),
    };
    let (kept, report) = prune_vocabulary(&vocab, &policy, text.lines()).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(out, kept.to_text())?;
    let report = report.to_string();
    let mut report_path = out.as_os_str().to_owned();
    report_path.push(".report");
    fs::write(report_path, &report)?;
    Ok(report)
}

struct GenArgs<'a> {
    family: Family,
    count: usize,
    lines_max: usize,
    seed: u64,
    out: &'a Path,
    dataset: String,
    split: Split,
    task: Task,
    start: u64,
}

/// Pages go to `images/`; their records are appended to `manifest.tsv`.
fn gen(config: &Config, vocab: Option<&Path>, a: GenArgs) -> Result<String, CliError> {
    if a.lines_max == 0 {
        return Err(usage("--lines-max must be at least 1"));
    }
    let vocab = load_vocab(vocab, config)?;
    let prompt = prompt(&vocab, a.task.clone())?;
    let run = config.run_config()?;
    let page = PageConfig {
        annotate: matches!(a.task, Task::Ner(_)),
        ..PageConfig::new(run.page_width, run.page_height, a.lines_max)
    };
    let generator = generator(config)?;
    let samples = run.exec.map_range(a.count, |i| generator.page(a.family, &page, a.seed, a.start + i as u64));
    let images = a.out.join("images");
    fs::create_dir_all(&images)?;
    let manifest_path = a.out.join("manifest.tsv");
    let mut manifest =
        if manifest_path.exists() { DataManifest::read(&manifest_path)? } else { DataManifest::new(a.out) };
    for (i, sample) in samples.into_iter().enumerate() {
        let sample = sample.map_err(|e| CliError::Data(e.to_string()))?;
        let name = format!("images/{}-{:05}.pgm", a.dataset, a.start + i as u64);
        let mut bytes = Vec::new();
        sample.image.write_pgm(&mut bytes)?;
        fs::write(a.out.join(&name), bytes)?;
        let label = to_label(&sample.document, &prompt, &vocab).map_err(|e| CliError::Data(e.to_string()))?;
        manifest.entries.retain(|e| e.image != name);
        manifest.push(Entry { image: name, label, dataset: a.dataset.clone(), split: a.split })?;
    }
    fs::write(&manifest_path, manifest.to_text())?;
    Ok(format!("pages\t{}\nmanifest\t{}\n", a.count, manifest_path.display()))
}

enum Predictions {
    Model(Model<f32>),
    File(BTreeMap<String, String>),
}

fn read_predictions(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    read_input(path, "predictions")?
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('\t')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CliError::Data(format!("prediction line {l:?} is not image<TAB>label")))
        })
        .collect()
}

fn eval(
    config: &Config,
    vocab: &Vocabulary,
    data: &DataManifest,
    split: Split,
    task: &str,
    source: &Predictions,
) -> Result<String, CliError> {
    let wants = |t: &Task| match task {
        "htr" => Ok(*t == Task::Htr),
        "ner" => Ok(matches!(t, Task::Ner(_))),
        other => Err(usage(format!("--task must be htr or ner, got {other:?}"))),
    };
    wants(&Task::Htr)?;
    let mut selected = Vec::new();
    for e in data.select(split) {
        let (gt, t) = parse_label(&e.label, vocab)?;
        if wants(&t)? {
            selected.push((e, gt, t));
        }
    }
    if selected.is_empty() {
        return Err(CliError::Data(format!("no {task} pages in the {split} split")));
    }
    let exec = config.exec()?;
    let cap = config.max_tokens()?;
    let predicted = exec.map(&selected, |(e, _, t)| -> Result<String, CliError> {
        match source {
            Predictions::File(map) => {
                map.get(&e.image).cloned().ok_or_else(|| CliError::Data(format!("no prediction for {}", e.image)))
            }
            Predictions::Model(model) => decode_label(model, vocab, &data.image(e)?, &prompt(vocab, t.clone())?, cap),
        }
    });
    let mut items = Vec::with_capacity(selected.len());
    for ((e, gt, _), pred) in selected.into_iter().zip(predicted) {
        let (doc, _) = scribe_core::codec::from_label(&pred?, vocab)
            .map_err(|err| CliError::Data(format!("{}: {err}", e.image)))?;
        items.push((e.image.clone(), doc, gt));
    }
    Ok(Evaluation::run(&items, exec).to_string())
}

fn bench_pages(
    data: &DataManifest,
    entries: &[&Entry],
    vocab: &Vocabulary,
) -> Result<Vec<(String, GrayImage, TaskPrompt)>, CliError> {
    entries
        .iter()
        .map(|e| {
            let (_, task) = parse_label(&e.label, vocab)?;
            Ok((e.image.clone(), data.image(e)?, prompt(vocab, task)?))
        })
        .collect()
}

fn bench_command(
    config: &Config,
    data: &DataManifest,
    entries: &[&Entry],
    model: &Model<f32>,
    vocab: &Vocabulary,
    baseline: Option<&(Model<f32>, Vocabulary)>,
) -> Result<String, CliError> {
    let (warmup, repeats) = (config.warmup()?, config.repeats()?);
    let cfg = |m: &Model<f32>| -> Result<BenchConfig, CliError> {
        let max_tokens = match config.max_tokens()? {
            0 => m.config.decoder.max_len,
            n => n,
        };
        Ok(BenchConfig { warmup, repeats, max_tokens })
    };
    let report = bench::run("subword", model, vocab, &bench_pages(data, entries, vocab)?, cfg(model)?)?;
    let mut out = report.to_string();
    if let Some((bm, bv)) = baseline {
        let base = bench::run("character", bm, bv, &bench_pages(data, entries, bv)?, cfg(bm)?)?;
        out.push_str(&base.to_string());
        let reference = entries
            .iter()
            .map(|e| {
                let (doc, _) = parse_label(&e.label, vocab)?;
                Ok((
                    e.image.clone(),
                    doc.plain_text().chars().count(),
                    bench::reference_steps(&e.label, vocab)?,
                    bench::reference_steps(&e.label, bv)?,
                ))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        out.push_str(&bench::comparison(&report, &base, &reference)?);
    }
    Ok(out)
}
