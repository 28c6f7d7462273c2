//! Recognition and understanding metrics: CER, WER, layout ordering error,
//! mAP over CER thresholds and entity F1.

mod edit;
mod entity;
mod map;
mod matching;
mod tree;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

pub use edit::{align, char_distance, levenshtein};
pub use entity::{entity_counts, entity_f1, EntityCounts, EntityReport, EntityScore};
pub use map::{map_cer, map_cer_pages, THRESHOLD_STEPS};
pub use matching::max_matching;
pub use tree::{loer, loer_parts, tree_edit_distance};

use crate::codec::{layout_tree, Document};
use crate::par::Exec;

/// Edit errors against a reference length.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub errors: usize,
    pub total: usize,
}

impl Tally {
    pub fn add(&mut self, other: Tally) {
        self.errors += other.errors;
        self.total += other.total;
    }

    /// `None` when the reference is empty.
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.errors as f64 / self.total as f64)
    }
}

pub fn char_tally(pred: &str, gt: &str) -> Tally {
    Tally { errors: char_distance(pred, gt), total: gt.chars().count() }
}

pub fn word_tally(pred: &str, gt: &str) -> Tally {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gt.split_whitespace().collect();
    Tally { errors: levenshtein(&p, &g), total: g.len() }
}

/// Page CER; `None` for an empty reference.
pub fn cer(pred: &str, gt: &str) -> Option<f64> {
    char_tally(pred, gt).rate()
}

/// Page WER over whitespace-separated words; `None` for an empty reference.
pub fn wer(pred: &str, gt: &str) -> Option<f64> {
    word_tally(pred, gt).rate()
}

/// Micro-averaged CER over pages. Pages with empty references are skipped
/// and counted in the second value.
pub fn dataset_cer<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> (Option<f64>, usize) {
    let mut total = Tally::default();
    let mut skipped = 0;
    for (p, g) in pairs {
        let t = char_tally(p, g);
        if t.total == 0 {
            skipped += 1;
        } else {
            total.add(t);
        }
    }
    (total.rate(), skipped)
}

/// Per-page scores.
#[derive(Clone, Debug, PartialEq)]
pub struct PageEval {
    pub id: String,
    pub cer: Tally,
    pub wer: Tally,
    pub loer: Tally,
    pub map_cer: f64,
    pub entities: EntityReport,
}

pub fn evaluate_page(id: &str, pred: &Document, gt: &Document) -> PageEval {
    let (pt, gtext) = (pred.plain_text(), gt.plain_text());
    let (d, norm) = loer_parts(&layout_tree(pred), &layout_tree(gt));
    PageEval {
        id: id.to_string(),
        cer: char_tally(&pt, &gtext),
        wer: word_tally(&pt, &gtext),
        loer: Tally { errors: d, total: norm },
        map_cer: map_cer(pred, gt),
        entities: entity_f1(pred, gt),
    }
}

/// Dataset-level evaluation with micro-averaged aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub pages: Vec<PageEval>,
    pub cer: Tally,
    pub wer: Tally,
    pub loer: Tally,
    pub map_cer: f64,
    pub entities: EntityReport,
    /// Pages whose reference text is empty; excluded from CER and WER.
    pub skipped: Vec<String>,
}

impl Evaluation {
    /// Scores `(id, prediction, ground truth)` triples; per-page work runs under `exec`.
    pub fn run(items: &[(String, Document, Document)], exec: Exec) -> Self {
        let pages = exec.map(items, |(id, p, g)| evaluate_page(id, p, g));
        let mut cer = Tally::default();
        let mut wer = Tally::default();
        let mut loer = Tally::default();
        let mut entities = EntityReport::from_counts(BTreeMap::new());
        let mut skipped = Vec::new();
        for page in &pages {
            if page.cer.total == 0 {
                skipped.push(page.id.clone());
            } else {
                cer.add(page.cer);
                wer.add(page.wer);
            }
            loer.add(page.loer);
            entities.merge(&page.entities);
        }
        let pairs: Vec<(&Document, &Document)> = items.iter().map(|(_, p, g)| (p, g)).collect();
        let map_cer = map_cer_pages(&pairs);
        Self { pages, cer, wer, loer, map_cer, entities, skipped }
    }
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v))
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        writeln!(s, "page\tcer\twer\tloer\tmap_cer\tentity_f1").unwrap();
        for p in &self.pages {
            let f1 = p.entities.overall.score().f1;
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.2}\t{:.2}",
                p.id,
                pct(p.cer.rate()),
                pct(p.wer.rate()),
                pct(p.loer.rate().or(Some(0.0))),
                p.map_cer,
                100.0 * f1
            )
            .unwrap();
        }
        let e = self.entities.overall.score();
        writeln!(s, "total\tcer\t{}", pct(self.cer.rate())).unwrap();
        writeln!(s, "total\twer\t{}", pct(self.wer.rate())).unwrap();
        writeln!(s, "total\tloer\t{}", pct(self.loer.rate().or(Some(0.0)))).unwrap();
        writeln!(s, "total\tmap_cer\t{:.2}", self.map_cer).unwrap();
        writeln!(
            s,
            "total\tentity\tprecision {:.2}\trecall {:.2}\tf1 {:.2}",
            100.0 * e.precision,
            100.0 * e.recall,
            100.0 * e.f1
        )
        .unwrap();
        for (cat, c) in &self.entities.per_category {
            let sc = c.score();
            writeln!(
                s,
                "category\t{cat}\tprecision {:.2}\trecall {:.2}\tf1 {:.2}\tsupport {}",
                100.0 * sc.precision,
                100.0 * sc.recall,
                100.0 * sc.f1,
                c.gold
            )
            .unwrap();
        }
        for id in &self.skipped {
            writeln!(s, "warning\tpage {id} has an empty reference and is excluded from cer/wer").unwrap();
        }
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_examples() {
        assert!((cer("the bat", "the cat").unwrap() - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(cer("same", "same"), Some(0.0));
        assert_eq!(cer("x", ""), None);
        assert!((wer("a b c", "a x c").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(wer("", "a b"), Some(1.0));
        assert_eq!(wer("a  b", "a b"), Some(0.0));
    }

    #[test]
    fn micro_average() {
        let (rate, skipped) = dataset_cer([("abcdefghij", "abcdefghiX"), ("abcdefgXYZ", "abcdefghij"), ("x", "")]);
        assert!((rate.unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(skipped, 1);
    }
}
