//! Append-only run manifests. Each record is one line; a manifest attached
//! to a file writes every record as soon as it is appended.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{Result, TrainError};

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    /// Pipeline stage this manifest belongs to.
    Stage(String),
    Strategy(String),
    Target(String),
    Seed(u64),
    /// Hash of the full configuration.
    Config(String),
    /// A synthetic corpus that contributed to the weights, directly or through initialization.
    Corpus(String),
    /// Initialization source of this run.
    Init {
        stage: String,
        path: String,
    },
    Loss {
        step: u64,
        value: f64,
    },
    Metric {
        step: u64,
        dataset: String,
        metric: String,
        value: f64,
    },
    Best {
        dataset: String,
        step: u64,
        metric: String,
        value: f64,
        path: String,
    },
    Checkpoint(String),
    Steps(u64),
    Warning {
        step: u64,
        message: String,
    },
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Record::Stage(s) => write!(f, "stage\t{s}"),
            Record::Strategy(s) => write!(f, "strategy\t{s}"),
            Record::Target(s) => write!(f, "target\t{s}"),
            Record::Seed(s) => write!(f, "seed\t{s}"),
            Record::Config(h) => write!(f, "config\t{h}"),
            Record::Corpus(c) => write!(f, "corpus\t{c}"),
            Record::Init { stage, path } => write!(f, "init\t{stage}\t{path}"),
            Record::Loss { step, value } => write!(f, "loss\t{step}\t{value}"),
            Record::Metric { step, dataset, metric, value } => {
                write!(f, "metric\t{step}\t{dataset}\t{metric}\t{value}")
            }
            Record::Best { dataset, step, metric, value, path } => {
                write!(f, "best\t{dataset}\t{step}\t{metric}\t{value}\t{path}")
            }
            Record::Checkpoint(p) => write!(f, "checkpoint\t{p}"),
            Record::Steps(n) => write!(f, "steps\t{n}"),
            Record::Warning { step, message } => write!(f, "warning\t{step}\t{message}"),
        }
    }
}

fn field<T: FromStr>(parts: &[&str], i: usize, line: &str) -> Result<T> {
    parts.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| TrainError::Manifest(format!("malformed record {line:?}")))
}

impl FromStr for Record {
    type Err = TrainError;

    fn from_str(line: &str) -> Result<Self> {
        let p: Vec<&str> = line.split('\t').collect();
        let want = |n: usize| -> Result<()> {
            if p.len() == n {
                Ok(())
            } else {
                Err(TrainError::Manifest(format!("record {line:?} needs {n} fields")))
            }
        };
        let s = |i: usize| p[i].to_string();
        Ok(match p[0] {
            "stage" => (want(2)?, Record::Stage(s(1))).1,
            "strategy" => (want(2)?, Record::Strategy(s(1))).1,
            "target" => (want(2)?, Record::Target(s(1))).1,
            "seed" => (want(2)?, Record::Seed(field(&p, 1, line)?)).1,
            "config" => (want(2)?, Record::Config(s(1))).1,
            "corpus" => (want(2)?, Record::Corpus(s(1))).1,
            "init" => (want(3)?, Record::Init { stage: s(1), path: s(2) }).1,
            "loss" => (want(3)?, Record::Loss { step: field(&p, 1, line)?, value: field(&p, 2, line)? }).1,
            "metric" => {
                want(5)?;
                Record::Metric { step: field(&p, 1, line)?, dataset: s(2), metric: s(3), value: field(&p, 4, line)? }
            }
            "best" => {
                want(6)?;
                Record::Best {
                    dataset: s(1),
                    step: field(&p, 2, line)?,
                    metric: s(3),
                    value: field(&p, 4, line)?,
                    path: s(5),
                }
            }
            "checkpoint" => (want(2)?, Record::Checkpoint(s(1))).1,
            "steps" => (want(2)?, Record::Steps(field(&p, 1, line)?)).1,
            "warning" => (want(3)?, Record::Warning { step: field(&p, 1, line)?, message: s(2) }).1,
            other => return Err(TrainError::Manifest(format!("unknown record kind {other:?}"))),
        })
    }
}

/// Best validation checkpoint of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Best {
    pub step: u64,
    pub metric: String,
    pub value: f64,
    pub path: String,
}

#[derive(Debug, Default)]
pub struct RunManifest {
    records: Vec<Record>,
    sink: Option<(PathBuf, File)>,
}

impl RunManifest {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Creates (truncating) `path` and appends every later record to it.
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self { records: Vec::new(), sink: Some((path.to_path_buf(), file)) })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let records = text.lines().filter(|l| !l.is_empty()).map(str::parse).collect::<Result<Vec<_>>>()?;
        Ok(Self { records, sink: None })
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn append(&mut self, record: Record) -> Result<()> {
        if let Some((_, file)) = &mut self.sink {
            writeln!(file, "{record}")?;
            file.flush()?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Latest best record per dataset.
    pub fn best(&self) -> BTreeMap<String, Best> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            if let Record::Best { dataset, step, metric, value, path } = r {
                out.insert(
                    dataset.clone(),
                    Best { step: *step, metric: metric.clone(), value: *value, path: path.clone() },
                );
            }
        }
        out
    }

    pub fn corpora(&self) -> BTreeSet<String> {
        self.records.iter().filter_map(|r| if let Record::Corpus(c) = r { Some(c.clone()) } else { None }).collect()
    }

    pub fn losses(&self) -> Vec<(u64, f64)> {
        self.records
            .iter()
            .filter_map(|r| if let Record::Loss { step, value } = r { Some((*step, *value)) } else { None })
            .collect()
    }

    pub fn metrics(&self) -> Vec<(u64, String, String, f64)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Metric { step, dataset, metric, value } => {
                    Some((*step, dataset.clone(), metric.clone(), *value))
                }
                _ => None,
            })
            .collect()
    }

    pub fn inits(&self) -> Vec<(String, String)> {
        self.records
            .iter()
            .filter_map(
                |r| if let Record::Init { stage, path } = r { Some((stage.clone(), path.clone())) } else { None },
            )
            .collect()
    }

    pub fn stage(&self) -> Option<&str> {
        self.records.iter().find_map(|r| if let Record::Stage(s) = r { Some(s.as_str()) } else { None })
    }

    pub fn to_text(&self) -> String {
        self.records.iter().map(|r| format!("{r}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_through_text() {
        let mut m = RunManifest::in_memory();
        for r in [
            Record::Stage("finetune".into()),
            Record::Seed(7),
            Record::Corpus("synth:iam".into()),
            Record::Init { stage: "pretrain".into(), path: "p.ckpt".into() },
            Record::Loss { step: 3, value: 1.25 },
            Record::Metric { step: 4, dataset: "iam".into(), metric: "cer".into(), value: 0.5 },
            Record::Best { dataset: "iam".into(), step: 4, metric: "cer".into(), value: 0.5, path: "b.ckpt".into() },
            Record::Warning { step: 2, message: "skipped".into() },
        ] {
            m.append(r).unwrap();
        }
        let back: Vec<Record> = m.to_text().lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(back, m.records());
        assert_eq!(m.best()["iam"].step, 4);
        assert!("bogus\t1".parse::<Record>().is_err());
    }
}
