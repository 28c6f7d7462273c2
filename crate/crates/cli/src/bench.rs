//! Batch-1 inference timing and the subword/character speed comparison.

use std::fmt::{self, Write};
use std::time::Instant;

use scribe_core::codec::TaskPrompt;
use scribe_core::image::GrayImage;
use scribe_core::model::Model;
use scribe_core::tokenizer::Vocabulary;
use scribe_core::trainer::fit_minimum;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    pub id: String,
    pub seconds: f64,
    /// Decoder steps, the end token included.
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub label: String,
    /// Each image is decoded this many times and its fastest run kept.
    pub repeats: usize,
    pub warmup: Vec<Timing>,
    pub timed: Vec<Timing>,
    pub environment: String,
}

impl BenchReport {
    pub fn mean_seconds(&self) -> f64 {
        self.timed.iter().map(|t| t.seconds).sum::<f64>() / self.timed.len().max(1) as f64
    }

    pub fn total_steps(&self) -> usize {
        self.timed.iter().map(|t| t.steps).sum()
    }

    pub fn tokens_per_second(&self) -> f64 {
        let secs: f64 = self.timed.iter().map(|t| t.seconds).sum();
        if secs > 0.0 {
            self.total_steps() as f64 / secs
        } else {
            0.0
        }
    }

    /// Reads a report back and checks that its aggregates match its rows.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |m: String| CliError::Data(format!("bench report: {m}"));
        let mut report = BenchReport {
            label: String::new(),
            repeats: 0,
            warmup: Vec::new(),
            timed: Vec::new(),
            environment: String::new(),
        };
        let (mut mean, mut images, mut batch) = (None, None, None);
        for line in text.lines() {
            let f: Vec<&str> = line.split('\t').collect();
            let num = |i: usize| {
                f.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(format!("bad line {line:?}")))
            };
            match f[0] {
                "bench" => report.label = f.get(1).unwrap_or(&"").to_string(),
                "batch" => batch = Some(num(1)?),
                "repeats" => report.repeats = num(1)? as usize,
                "image" | "warmup" => {
                    let t =
                        Timing { id: f.get(1).unwrap_or(&"").to_string(), seconds: num(2)?, steps: num(3)? as usize };
                    if f[0] == "image" {
                        report.timed.push(t)
                    } else {
                        report.warmup.push(t)
                    }
                }
                "images" => images = Some(num(1)? as usize),
                "mean_seconds_per_image" => mean = Some(num(1)?),
                "environment" => report.environment = f[1..].join("\t"),
                _ => {}
            }
        }
        if batch != Some(1.0) {
            return Err(bad("batch size must be recorded as 1".into()));
        }
        if report.repeats == 0 {
            return Err(bad("missing repeat count".into()));
        }
        if images != Some(report.timed.len()) || report.timed.is_empty() {
            return Err(bad(format!("image count {images:?} does not match {} rows", report.timed.len())));
        }
        let m = mean.ok_or_else(|| bad("missing mean".into()))?;
        if (m - report.mean_seconds()).abs() > 1e-9 * m.abs().max(1.0) {
            return Err(bad(format!("mean {m} is not the mean of the rows ({})", report.mean_seconds())));
        }
        Ok(report)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bench\t{}", self.label)?;
        writeln!(f, "batch\t1")?;
        writeln!(f, "repeats\t{}", self.repeats)?;
        writeln!(f, "note\tseconds per image are the fastest of {} decodes", self.repeats)?;
        writeln!(f, "note\tthe first {} images are warm-up: timed, listed, excluded from the mean", self.warmup.len())?;
        for t in &self.warmup {
            writeln!(f, "warmup\t{}\t{:e}\t{}", t.id, t.seconds, t.steps)?;
        }
        for t in &self.timed {
            writeln!(f, "image\t{}\t{:e}\t{}", t.id, t.seconds, t.steps)?;
        }
        writeln!(f, "images\t{}", self.timed.len())?;
        writeln!(f, "mean_seconds_per_image\t{:e}", self.mean_seconds())?;
        writeln!(f, "decode_steps\t{}", self.total_steps())?;
        writeln!(f, "tokens_per_second\t{:.2}", self.tokens_per_second())?;
        writeln!(f, "environment\t{}", self.environment)
    }
}

pub fn environment() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{} {} threads={threads} parallel_feature={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cfg!(feature = "parallel")
    )
}

#[derive(Clone, Copy, Debug)]
pub struct BenchConfig {
    pub warmup: usize,
    pub repeats: usize,
    pub max_tokens: usize,
}

/// Times greedy decoding of each page at batch 1, in order; the first `warmup` are set aside.
pub fn run(
    label: &str,
    model: &Model<f32>,
    vocab: &Vocabulary,
    pages: &[(String, GrayImage, TaskPrompt)],
    cfg: BenchConfig,
) -> Result<BenchReport, CliError> {
    if pages.len() <= cfg.warmup {
        return Err(CliError::Data(format!("bench needs more than {} images, got {}", cfg.warmup, pages.len())));
    }
    if cfg.repeats == 0 {
        return Err(CliError::Usage("bench.repeats must be at least 1".into()));
    }
    let data = |e: scribe_core::model::ModelError| CliError::Data(e.to_string());
    let mut timings = Vec::with_capacity(pages.len());
    for (id, image, prompt) in pages {
        let mut best = Timing { id: id.clone(), seconds: f64::INFINITY, steps: 0 };
        for _ in 0..cfg.repeats {
            let t0 = Instant::now();
            let f1d = model.features(&fit_minimum(model, image)).map_err(data)?;
            let ids = model.greedy_decode(&f1d, prompt.start_token, vocab.end(), cfg.max_tokens).map_err(data)?;
            best.seconds = best.seconds.min(t0.elapsed().as_secs_f64());
            best.steps = ids.len();
        }
        timings.push(best);
    }
    let timed = timings.split_off(cfg.warmup);
    Ok(BenchReport { label: label.into(), repeats: cfg.repeats, warmup: timings, timed, environment: environment() })
}

/// Decoder steps a vocabulary needs for a label: its tokens after the start token.
pub fn reference_steps(label: &str, vocab: &Vocabulary) -> Result<usize, CliError> {
    let ids = vocab.segment_tagged(label).map_err(|e| CliError::Data(format!("label {label:?}: {e}")))?;
    Ok(ids.len().saturating_sub(1))
}

/// Side-by-side comparison of a subword model and its character baseline on the same pages.
pub fn comparison(
    subword: &BenchReport,
    baseline: &BenchReport,
    reference: &[(String, usize, usize, usize)],
) -> Result<String, CliError> {
    let ids = |r: &BenchReport| r.warmup.iter().chain(&r.timed).map(|t| t.id.clone()).collect::<Vec<_>>();
    if ids(subword) != ids(baseline) {
        return Err(CliError::Data("subword and baseline benches cover different pages".into()));
    }
    let mut s = String::new();
    writeln!(s, "compare\tpage\tchars\tsubword_ref\tchar_ref\tsubword_decoded\tchar_decoded").unwrap();
    let decoded =
        |r: &BenchReport, id: &str| r.warmup.iter().chain(&r.timed).find(|t| t.id == id).map_or(0, |t| t.steps);
    let mut fewer = true;
    for (id, chars, sub_ref, char_ref) in reference {
        let (sd, cd) = (decoded(subword, id), decoded(baseline, id));
        if *chars > 1 && (sub_ref >= char_ref || sd >= cd) {
            fewer = false;
        }
        writeln!(s, "compare\t{id}\t{chars}\t{sub_ref}\t{char_ref}\t{sd}\t{cd}").unwrap();
    }
    writeln!(s, "summary\tsubword_steps\t{}", subword.total_steps()).unwrap();
    writeln!(s, "summary\tchar_steps\t{}", baseline.total_steps()).unwrap();
    writeln!(s, "summary\tsubword_mean_seconds\t{:e}", subword.mean_seconds()).unwrap();
    writeln!(s, "summary\tchar_mean_seconds\t{:e}", baseline.mean_seconds()).unwrap();
    writeln!(s, "summary\tfewer_steps_on_every_multichar_page\t{fewer}").unwrap();
    writeln!(s, "summary\tfaster\t{}", subword.mean_seconds() < baseline.mean_seconds()).unwrap();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use scribe_core::tokenizer::{char_vocabulary, desk_vocabulary, SpecialSet};

    fn timing(id: &str, seconds: f64, steps: usize) -> Timing {
        Timing { id: id.into(), seconds, steps }
    }

    #[test]
    fn report_mean_is_the_row_mean_and_round_trips() {
        let r = BenchReport {
            label: "m".into(),
            repeats: 3,
            warmup: vec![timing("w0", 9.0, 3), timing("w1", 8.0, 3)],
            timed: vec![timing("a", 0.25, 4), timing("b", 0.5, 6), timing("c", 0.75, 2)],
            environment: environment(),
        };
        assert_eq!(r.mean_seconds(), 0.5);
        let back = BenchReport::parse(&r.to_string()).unwrap();
        assert_eq!(back, r);
        let tampered = r.to_string().replace("mean_seconds_per_image\t5e-1", "mean_seconds_per_image\t6e-1");
        assert!(BenchReport::parse(&tampered).is_err());
    }

    #[test]
    fn hello_world_needs_fewer_subword_steps() {
        let v = desk_vocabulary(["hello world hello world"], 200, &SpecialSet::default()).unwrap();
        let c = char_vocabulary(&SpecialSet::default()).unwrap();
        let label = "⟨s:htr⟩⟨body⟩hello world⟨/body⟩⟨end⟩";
        let sub = reference_steps(label, &v).unwrap();
        let chars = reference_steps(label, &c).unwrap();
        // body tags and the end token are shared
        assert!(sub - 3 < 11, "{sub}");
        assert_eq!(chars - 3, 11);
        let empty = "⟨s:htr⟩⟨end⟩";
        assert_eq!(reference_steps(empty, &v).unwrap(), reference_steps(empty, &c).unwrap());
    }
}
