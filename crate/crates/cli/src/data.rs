//! TSV dataset manifests: `image<TAB>label<TAB>dataset<TAB>split`, one record
//! per line, image paths relative to the manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use scribe_core::codec::{from_label, Document};
use scribe_core::image::GrayImage;
use scribe_core::synthgen::Corpus;
use scribe_core::tokenizer::{desk_vocabulary, SpecialSet, Task, TokenClass, Vocabulary};
use scribe_core::trainer::{Dataset, Example};

use crate::config::{Config, DatasetSpec};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(CliError::Data(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub image: String,
    pub label: String,
    pub dataset: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataManifest {
    pub root: PathBuf,
    pub entries: Vec<Entry>,
}

fn clean(field: &str, what: &str) -> Result<(), CliError> {
    if field.is_empty() || field.contains(['\t', '\n', '\r']) {
        return Err(CliError::Data(format!("{what} {field:?} is empty or holds a tab or line break")));
    }
    Ok(())
}

impl DataManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), entries: Vec::new() }
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(CliError::Data(format!(
                    "manifest line {}: expected 4 tab-separated fields, got {}",
                    i + 1,
                    f.len()
                )));
            }
            entries.push(Entry { image: f[0].into(), label: f[1].into(), dataset: f[2].into(), split: f[3].parse()? });
        }
        Ok(Self { root: root.into(), entries })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Usage(format!("manifest {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn push(&mut self, entry: Entry) -> Result<(), CliError> {
        clean(&entry.image, "image path")?;
        clean(&entry.label, "label")?;
        clean(&entry.dataset, "dataset id")?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|e| format!("{}\t{}\t{}\t{}\n", e.image, e.label, e.dataset, e.split)).collect()
    }

    pub fn resolve(&self, entry: &Entry) -> PathBuf {
        self.root.join(&entry.image)
    }

    pub fn image(&self, entry: &Entry) -> Result<GrayImage, CliError> {
        let path = self.resolve(entry);
        let file = fs::File::open(&path).map_err(|e| CliError::Data(format!("image {}: {e}", path.display())))?;
        GrayImage::read_pgm(std::io::BufReader::new(file))
            .map_err(|e| CliError::Data(format!("image {}: {e}", path.display())))
    }

    pub fn select<'a>(&'a self, split: Split) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Document and task of a label string.
pub fn parse_label(label: &str, vocab: &Vocabulary) -> Result<(Document, Task), CliError> {
    let bad = |e: String| CliError::Data(format!("label {label:?}: {e}"));
    let ids = vocab.segment_tagged(label).map_err(|e| bad(e.to_string()))?;
    let task = match ids.first().map(|&id| vocab.class(id)) {
        Some(Ok(TokenClass::Start(task))) => task.clone(),
        _ => return Err(bad("does not begin with a start tag".into())),
    };
    let (doc, _) = from_label(label, vocab).map_err(|e| bad(e.to_string()))?;
    Ok((doc, task))
}

/// The vocabulary file, or the desk vocabulary built from the bundled corpus.
pub fn load_vocab(path: Option<&Path>, config: &Config) -> Result<Vocabulary, CliError> {
    match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| CliError::Usage(format!("vocabulary {}: {e}", p.display())))?;
            Vocabulary::parse(&text).map_err(|e| CliError::Data(format!("vocabulary {}: {e}", p.display())))
        }
        None => {
            let corpus = Corpus::bundled();
            desk_vocabulary(corpus.paragraphs().iter().map(String::as_str), config.ngrams()?, &SpecialSet::default())
                .map_err(|e| CliError::Data(e.to_string()))
        }
    }
}

/// Datasets of `specs` with their train and valid pages from `manifest`.
pub fn load_datasets(
    specs: &[DatasetSpec],
    manifest: &DataManifest,
    vocab: &Vocabulary,
) -> Result<Vec<Dataset>, CliError> {
    for e in &manifest.entries {
        if !specs.iter().any(|s| s.id == e.dataset) {
            return Err(CliError::Data(format!("dataset {:?} is not declared in data.datasets", e.dataset)));
        }
    }
    let mut out = Vec::new();
    for spec in specs {
        let mut d = Dataset {
            id: spec.id.clone(),
            family: spec.family,
            task: spec.task.clone(),
            train: Vec::new(),
            valid: Vec::new(),
        };
        for e in manifest.entries.iter().filter(|e| e.dataset == spec.id && e.split != Split::Test) {
            let (document, task) = parse_label(&e.label, vocab)?;
            if task != spec.task {
                return Err(CliError::Data(format!(
                    "{}: label task {task} differs from dataset task {}",
                    e.image, spec.task
                )));
            }
            let example = Example { id: e.image.clone(), image: manifest.image(e)?, document };
            match e.split {
                Split::Train => d.train.push(example),
                _ => d.valid.push(example),
            }
        }
        if !d.train.is_empty() || !d.valid.is_empty() {
            out.push(d);
        }
    }
    Ok(out)
}
