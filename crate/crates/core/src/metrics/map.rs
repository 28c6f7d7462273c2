use std::collections::BTreeMap;

use super::edit::levenshtein;
use super::matching::max_matching;
use crate::codec::Document;

/// CER thresholds 5%, 10%, …, 50% as multiples of 5%.
pub const THRESHOLD_STEPS: std::ops::RangeInclusive<usize> = 1..=10;

#[derive(Clone, Debug, Default)]
struct ClassTally {
    gt_blocks: usize,
    gt_chars: usize,
    /// True positives per threshold step.
    hits: [usize; 10],
}

fn blocks_by_class(doc: &Document) -> BTreeMap<&str, Vec<Vec<char>>> {
    let mut out: BTreeMap<&str, Vec<Vec<char>>> = BTreeMap::new();
    for b in &doc.blocks {
        out.entry(b.class.as_str()).or_default().push(b.text().chars().collect());
    }
    out
}

fn tally_page(pred: &Document, gt: &Document, tallies: &mut BTreeMap<String, ClassTally>) {
    let pred_blocks = blocks_by_class(pred);
    for (class, gts) in blocks_by_class(gt) {
        let gts: Vec<&Vec<char>> = gts.iter().filter(|g| !g.is_empty()).collect();
        if gts.is_empty() {
            continue;
        }
        let t = tallies.entry(class.to_string()).or_default();
        t.gt_blocks += gts.len();
        t.gt_chars += gts.iter().map(|g| g.len()).sum::<usize>();
        let Some(preds) = pred_blocks.get(class) else { continue };
        // lev[p][g]
        let lev: Vec<Vec<usize>> = preds.iter().map(|p| gts.iter().map(|g| levenshtein(p, g)).collect()).collect();
        for (slot, k) in THRESHOLD_STEPS.enumerate() {
            let adj: Vec<Vec<usize>> = lev
                .iter()
                .map(|row| {
                    let mut ok: Vec<usize> = (0..gts.len()).filter(|&g| 100 * row[g] <= 5 * k * gts[g].len()).collect();
                    // ascending CER first, so the greedy pass already takes the closest pairs
                    ok.sort_by(|&x, &y| (row[x] * gts[y].len()).cmp(&(row[y] * gts[x].len())).then(x.cmp(&y)));
                    ok
                })
                .collect();
            t.hits[slot] += max_matching(&adj, gts.len()).len();
        }
    }
}

/// mAP over CER thresholds for a set of pages, in percent.
///
/// Per class and threshold, predicted blocks are matched one-to-one to
/// ground-truth blocks of the same page with CER at or below the threshold,
/// maximising the number of matches. Ranked by CER, every match precedes every
/// miss, so average precision reduces to matches over ground-truth blocks.
/// Class scores are weighted by ground-truth characters; blocks without text
/// carry no weight.
pub fn map_cer_pages(pages: &[(&Document, &Document)]) -> f64 {
    let mut tallies: BTreeMap<String, ClassTally> = BTreeMap::new();
    for (pred, gt) in pages {
        tally_page(pred, gt, &mut tallies);
    }
    let weight: usize = tallies.values().map(|t| t.gt_chars).sum();
    if weight == 0 {
        let predicted_text = pages.iter().any(|(p, _)| p.blocks.iter().any(|b| !b.lines.is_empty()));
        return if predicted_text { 0.0 } else { 100.0 };
    }
    let mut total = 0.0;
    for slot in 0..THRESHOLD_STEPS.count() {
        let mut at_threshold = 0.0;
        for t in tallies.values() {
            at_threshold += t.gt_chars as f64 * (t.hits[slot] as f64 / t.gt_blocks as f64);
        }
        total += at_threshold / weight as f64;
    }
    100.0 * total / THRESHOLD_STEPS.count() as f64
}

pub fn map_cer(pred: &Document, gt: &Document) -> f64 {
    map_cer_pages(&[(pred, gt)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Block;

    fn doc(blocks: &[(&str, &str)]) -> Document {
        Document {
            blocks: blocks.iter().map(|(c, t)| Block::new(*c, None, vec![t.to_string()])).collect(),
            entities: vec![],
        }
    }

    #[test]
    fn examples() {
        assert_eq!(map_cer(&doc(&[("body", "abc")]), &doc(&[("body", "abc")])), 100.0);
        assert!((map_cer(&doc(&[("body", "abX")]), &doc(&[("body", "abc")])) - 40.0).abs() < 1e-9);
        assert_eq!(map_cer(&doc(&[("date", "abc")]), &doc(&[("body", "abc")])), 0.0);
        assert_eq!(map_cer(&doc(&[]), &doc(&[])), 100.0);
    }

    #[test]
    fn character_weighting() {
        // perfect on a 9-char class, nothing on a 1-char class
        let gt = doc(&[("body", "abcdefghi"), ("date", "x")]);
        let pred = doc(&[("body", "abcdefghi")]);
        assert!((map_cer(&pred, &gt) - 90.0).abs() < 1e-9);
    }
}
