use std::collections::BTreeMap;

use super::edit::{align, levenshtein};
use super::matching::max_matching;
use crate::codec::Document;

/// Match, prediction and ground-truth counts for one category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EntityCounts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl EntityCounts {
    pub fn add(&mut self, other: EntityCounts) {
        self.matched += other.matched;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    pub fn score(&self) -> EntityScore {
        let ratio = |den: usize, other: usize| match (den, other) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            _ => self.matched as f64 / den as f64,
        };
        let precision = ratio(self.predicted, self.gold);
        let recall = ratio(self.gold, self.predicted);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        EntityScore { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntityScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

struct PageEntity {
    category: String,
    start: usize,
    end: usize,
    text: Vec<char>,
}

fn page_entities(doc: &Document) -> Vec<PageEntity> {
    let offsets = doc.block_offsets();
    doc.entities
        .iter()
        .map(|e| PageEntity {
            category: e.category.clone(),
            start: offsets[e.block] + e.start,
            end: offsets[e.block] + e.end,
            text: doc.entity_text(e).chars().collect(),
        })
        .collect()
}

/// Surface CER at most 30%, normalised by the longer surface so the test
/// is symmetric.
fn surfaces_match(a: &[char], b: &[char]) -> bool {
    10 * levenshtein(a, b) <= 3 * a.len().max(b.len())
}

/// Per-category counts for one page.
///
/// Page texts are aligned character by character. A predicted entity is a
/// candidate for a ground-truth entity of the same category when some aligned
/// character pair falls inside both spans and their surfaces match. Counts use
/// a maximum one-to-one matching over the candidates.
pub fn entity_counts(pred: &Document, gt: &Document) -> BTreeMap<String, EntityCounts> {
    let (pe, ge) = (page_entities(pred), page_entities(gt));
    let pt: Vec<char> = pred.plain_text().chars().collect();
    let gtext: Vec<char> = gt.plain_text().chars().collect();
    let mut to_gt: Vec<Option<usize>> = vec![None; pt.len()];
    for (i, j) in align(&pt, &gtext) {
        to_gt[i] = Some(j);
    }
    let mut out: BTreeMap<String, EntityCounts> = BTreeMap::new();
    for e in &pe {
        out.entry(e.category.clone()).or_default().predicted += 1;
    }
    for e in &ge {
        out.entry(e.category.clone()).or_default().gold += 1;
    }
    let adj: Vec<Vec<usize>> = pe
        .iter()
        .map(|p| {
            let mut c: Vec<(usize, usize)> = ge
                .iter()
                .enumerate()
                .filter(|(_, g)| {
                    g.category == p.category
                        && to_gt[p.start..p.end].iter().flatten().any(|&j| (g.start..g.end).contains(&j))
                        && surfaces_match(&p.text, &g.text)
                })
                .map(|(k, g)| (levenshtein(&p.text, &g.text) * 1000 / p.text.len().max(g.text.len()).max(1), k))
                .collect();
            c.sort_unstable();
            c.into_iter().map(|(_, k)| k).collect()
        })
        .collect();
    for (p, _) in max_matching(&adj, ge.len()) {
        out.get_mut(&pe[p].category).expect("counted above").matched += 1;
    }
    out
}

/// Aggregate and per-category scores.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityReport {
    pub overall: EntityCounts,
    pub per_category: BTreeMap<String, EntityCounts>,
}

impl EntityReport {
    pub fn from_counts(per_category: BTreeMap<String, EntityCounts>) -> Self {
        let mut overall = EntityCounts::default();
        per_category.values().for_each(|c| overall.add(*c));
        Self { overall, per_category }
    }

    pub fn merge(&mut self, other: &EntityReport) {
        for (k, v) in &other.per_category {
            self.per_category.entry(k.clone()).or_default().add(*v);
        }
        self.overall.add(other.overall);
    }
}

pub fn entity_f1(pred: &Document, gt: &Document) -> EntityReport {
    EntityReport::from_counts(entity_counts(pred, gt))
}
