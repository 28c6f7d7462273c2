//! Flat `key=value` configuration with the `desk` and `paper-full` presets.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use scribe_core::model::ModelConfig;
use scribe_core::synthgen::Family;
use scribe_core::tokenizer::Task;
use scribe_core::trainer::RunConfig;
use scribe_core::Exec;

use crate::CliError;

pub struct Key {
    pub name: &'static str,
    pub doc: &'static str,
}

const fn key(name: &'static str, doc: &'static str) -> Key {
    Key { name, doc }
}

/// Every accepted key.
pub const KEYS: &[Key] = &[
    key("seed", "master seed for initialization, sampling and generation"),
    key("exec", "per-sample work: parallel or sequential"),
    key("vocab.ngrams", "frequent n-grams added to the alphabet when no vocabulary file is given"),
    key("encoder.channels", "output channels of the ten encoder blocks, comma-separated"),
    key("encoder.mpopp", "halve the vertical downsampling (true/false)"),
    key("encoder.dropout", "encoder dropout probability"),
    key("decoder.blocks", "transformer decoder blocks"),
    key("decoder.dim", "decoder width, equal to the last encoder channel count"),
    key("decoder.heads", "attention heads"),
    key("decoder.ffn", "feed-forward width"),
    key("decoder.max_len", "longest decoder sequence m"),
    key("decoder.dropout", "decoder dropout probability"),
    key("decoder.positions", "token positions: sinusoidal or learned"),
    key("pixel.mean", "pixel standardization mean"),
    key("pixel.std", "pixel standardization deviation"),
    key("train.batch", "samples per optimizer step"),
    key("train.encoder_steps", "CTC encoder pretraining steps"),
    key("train.pretrain_steps", "synthetic pretraining steps"),
    key("train.finetune_steps", "fine-tuning steps"),
    key("train.encoder_lr", "Adam learning rate of encoder pretraining"),
    key("train.pretrain_lr", "Adam learning rate of synthetic pretraining"),
    key("train.finetune_lr", "Adam learning rate of fine-tuning"),
    key("train.noise_rate", "decoder input error-injection rate"),
    key("train.curriculum_every", "steps between line-budget increments"),
    key("train.ramp_length", "steps over which the real-sample probability grows from 0 to 0.8"),
    key("train.validate_every", "steps between validations"),
    key("synth.page_width", "synthetic page width in pixels"),
    key("synth.page_height", "synthetic page height in pixels"),
    key("synth.font_min", "smallest synthetic page font size"),
    key("synth.font_max", "largest synthetic page font size"),
    key("lines.count", "rendered lines in the encoder pretraining pool"),
    key("lines.words", "most words per pretraining line"),
    key("lines.width", "widest pretraining line in pixels"),
    key("lines.font_min", "smallest pretraining line font size"),
    key("lines.font_max", "largest pretraining line font size"),
    key("data.datasets", "datasets as id:family:task, comma-separated (task is htr or ner:<name>)"),
    key("decode.max_tokens", "greedy decoding cap, 0 for decoder.max_len"),
    key("bench.warmup", "leading images timed but excluded from the bench mean"),
    key("bench.repeats", "decodes per bench image; the fastest is reported"),
];

pub const PRESETS: [&str; 2] = ["desk", "paper-full"];

/// Help text listing every key.
pub fn keys_help() -> String {
    let mut s = String::from("Configuration keys (set with --config FILE or --set key=value):\n");
    for k in KEYS {
        writeln!(s, "  {:<24} {}", k.name, k.doc).unwrap();
    }
    s
}

/// A dataset as declared in `data.datasets`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub id: String,
    pub family: Family,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl Config {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let (run, model) = match name {
            "desk" => (RunConfig::desk(), ModelConfig::desk(0, 0)),
            "paper-full" => (RunConfig::paper_full(), ModelConfig::full(0, 0)),
            other => return Err(usage(format!("unknown preset {other:?}; expected one of {PRESETS:?}"))),
        };
        let mut values = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            values.insert(k.to_string(), v);
        };
        put("seed", run.seed.to_string());
        put("exec", "parallel".into());
        put("vocab.ngrams", "256".into());
        for (k, v) in model.entries() {
            if k != "decoder.vocab" && k != "ctc.classes" {
                put(&k, v);
            }
        }
        put("train.batch", run.batch.to_string());
        put("train.encoder_steps", run.encoder_steps.to_string());
        put("train.pretrain_steps", run.pretrain_steps.to_string());
        put("train.finetune_steps", run.finetune_steps.to_string());
        put("train.encoder_lr", run.encoder_lr.to_string());
        put("train.pretrain_lr", run.pretrain_lr.to_string());
        put("train.finetune_lr", run.finetune_lr.to_string());
        put("train.noise_rate", run.noise_rate.to_string());
        put("train.curriculum_every", run.curriculum_every.to_string());
        put("train.ramp_length", run.ramp_length.to_string());
        put("train.validate_every", run.validate_every.to_string());
        put("synth.page_width", run.page_width.to_string());
        put("synth.page_height", run.page_height.to_string());
        put("synth.font_min", "14".into());
        put("synth.font_max", "22".into());
        put("lines.count", run.line_count.to_string());
        put("lines.words", run.line_words.to_string());
        put("lines.width", run.line_width.to_string());
        put("lines.font_min", run.line_font.0.to_string());
        put("lines.font_max", run.line_font.1.to_string());
        put(
            "data.datasets",
            "iam:paragraph:htr,iam-ner:paragraph:ner:iam,rimes:mail:htr,read:nested:htr,mpopp:margin:htr".into(),
        );
        put("decode.max_tokens", "0".into());
        put("bench.warmup", "2".into());
        put("bench.repeats", "3".into());
        debug_assert!(values.keys().all(|k| KEYS.iter().any(|key| key.name == k)));
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KEYS.iter().any(|k| k.name == key) {
            return Err(usage(format!("unknown configuration key {key:?}")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| usage(format!("config line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key).parse().map_err(|_| usage(format!("invalid value {:?} for {key}", self.get(key))))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse("seed")
    }

    pub fn exec(&self) -> Result<Exec, CliError> {
        match self.get("exec") {
            "parallel" => Ok(Exec::Parallel.available()),
            "sequential" => Ok(Exec::Sequential),
            other => Err(usage(format!("exec must be parallel or sequential, got {other:?}"))),
        }
    }

    pub fn ngrams(&self) -> Result<usize, CliError> {
        self.parse("vocab.ngrams")
    }

    pub fn page_fonts(&self) -> Result<(f32, f32), CliError> {
        Ok((self.parse("synth.font_min")?, self.parse("synth.font_max")?))
    }

    pub fn max_tokens(&self) -> Result<usize, CliError> {
        self.parse("decode.max_tokens")
    }

    pub fn warmup(&self) -> Result<usize, CliError> {
        self.parse("bench.warmup")
    }

    pub fn repeats(&self) -> Result<usize, CliError> {
        self.parse("bench.repeats")
    }

    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let run = RunConfig {
            seed: self.seed()?,
            batch: self.parse("train.batch")?,
            encoder_steps: self.parse("train.encoder_steps")?,
            pretrain_steps: self.parse("train.pretrain_steps")?,
            finetune_steps: self.parse("train.finetune_steps")?,
            encoder_lr: self.parse("train.encoder_lr")?,
            pretrain_lr: self.parse("train.pretrain_lr")?,
            finetune_lr: self.parse("train.finetune_lr")?,
            noise_rate: self.parse("train.noise_rate")?,
            curriculum_every: self.parse("train.curriculum_every")?,
            ramp_length: self.parse("train.ramp_length")?,
            validate_every: self.parse("train.validate_every")?,
            page_width: self.parse("synth.page_width")?,
            page_height: self.parse("synth.page_height")?,
            line_count: self.parse("lines.count")?,
            line_words: self.parse("lines.words")?,
            line_width: self.parse("lines.width")?,
            line_font: (self.parse("lines.font_min")?, self.parse("lines.font_max")?),
            exec: self.exec()?,
        };
        run.validate().map_err(|e| usage(e.to_string()))?;
        Ok(run)
    }

    pub fn model_config(&self, vocab: usize, ctc_classes: usize) -> Result<ModelConfig, CliError> {
        let mut entries: BTreeMap<String, String> = ModelConfig::desk(0, 0)
            .entries()
            .into_iter()
            .map(|(k, _)| {
                let v = match k.as_str() {
                    "decoder.vocab" => vocab.to_string(),
                    "ctc.classes" => ctc_classes.to_string(),
                    other => self.get(other).to_string(),
                };
                (k, v)
            })
            .collect();
        entries.retain(|_, v| !v.is_empty());
        let config = ModelConfig::from_entries(&entries).map_err(|e| usage(e.to_string()))?;
        config.validate().map_err(|e| usage(e.to_string()))?;
        Ok(config)
    }

    pub fn datasets(&self) -> Result<Vec<DatasetSpec>, CliError> {
        self.get("data.datasets")
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|item| {
                let mut parts = item.trim().splitn(3, ':');
                let (Some(id), Some(family), Some(task)) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(usage(format!("dataset {item:?} is not id:family:task")));
                };
                let family = family.parse().map_err(|_| usage(format!("unknown family {family:?} in {item:?}")))?;
                let task = Task::parse(task).ok_or_else(|| usage(format!("unknown task {task:?} in {item:?}")))?;
                Ok(DatasetSpec { id: id.to_string(), family, task })
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_define_exactly_the_schema() {
        for p in PRESETS {
            let c = Config::preset(p).unwrap();
            let keys: Vec<&str> = c.values.keys().map(String::as_str).collect();
            let mut schema: Vec<&str> = KEYS.iter().map(|k| k.name).collect();
            schema.sort_unstable();
            assert_eq!(keys, schema, "{p}");
            c.run_config().unwrap();
            c.model_config(300, 157).unwrap();
            assert_eq!(c.datasets().unwrap().len(), 5);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = Config::preset("desk").unwrap();
        assert!(matches!(c.apply_text("train.batch=2\nbogus=1\n"), Err(CliError::Usage(_))));
        assert!(c.apply_text("# comment\n\ntrain.batch = 3").is_ok());
        assert_eq!(c.run_config().unwrap().batch, 3);
    }

    #[test]
    fn full_preset_builds_the_full_model() {
        let c = Config::preset("paper-full").unwrap();
        assert_eq!(c.model_config(32153, 157).unwrap(), ModelConfig::full(32153, 157));
        assert_eq!(c.run_config().unwrap().encoder_steps, 40_000);
    }
}
