use std::fmt;

use super::{Result, TokenizerError, Vocabulary};

/// Inclusive code-point range with a display name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeRange {
    pub start: u32,
    pub end: u32,
    pub name: String,
}

/// Sorted, non-overlapping list of rejected Unicode blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnicodeBlockPolicy {
    blocks: Vec<CodeRange>,
}

impl UnicodeBlockPolicy {
    pub fn new(mut blocks: Vec<CodeRange>) -> Result<Self> {
        blocks.sort_by_key(|b| b.start);
        for b in &blocks {
            if b.start > b.end {
                return Err(TokenizerError::Config(format!("block {} has start after end", b.name)));
            }
        }
        for w in blocks.windows(2) {
            if w[1].start <= w[0].end {
                return Err(TokenizerError::Config(format!("blocks {} and {} overlap", w[0].name, w[1].name)));
            }
        }
        Ok(Self { blocks })
    }

    /// Scripts outside the Latin family.
    pub fn default_rejected() -> Self {
        let b = |start, end, name: &str| CodeRange { start, end, name: name.to_string() };
        Self::new(vec![
            b(0x0400, 0x04FF, "Cyrillic"),
            b(0x0590, 0x05FF, "Hebrew"),
            b(0x0600, 0x06FF, "Arabic"),
            b(0x0900, 0x097F, "Devanagari"),
            b(0x0E00, 0x0E7F, "Thai"),
            b(0x4E00, 0x9FFF, "CJK Unified Ideographs"),
            b(0xAC00, 0xD7AF, "Hangul Syllables"),
        ])
        .expect("default blocks are disjoint")
    }

    pub fn blocks(&self) -> &[CodeRange] {
        &self.blocks
    }

    /// Lines of `U+XXXX<TAB>U+YYYY<TAB>name`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut blocks = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| TokenizerError::Parse { line: i + 1, msg };
            let mut parts = line.splitn(3, '\t');
            let (Some(a), Some(b), Some(name)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected U+XXXX<TAB>U+YYYY<TAB>name".into()));
            };
            let code = |s: &str| {
                s.trim()
                    .strip_prefix("U+")
                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                    .ok_or_else(|| err(format!("bad code point {s:?}")))
            };
            blocks.push(CodeRange { start: code(a)?, end: code(b)?, name: name.trim().to_string() });
        }
        Self::new(blocks)
    }

    pub fn to_text(&self) -> String {
        self.blocks.iter().map(|b| format!("U+{:04X}\tU+{:04X}\t{}\n", b.start, b.end, b.name)).collect()
    }

    /// Index of the block containing `c`.
    pub fn block_of(&self, c: char) -> Option<usize> {
        let cp = c as u32;
        let i = self.blocks.partition_point(|b| b.end < cp);
        (i < self.blocks.len() && self.blocks[i].start <= cp).then_some(i)
    }

    /// First rejected block touched by `surface`.
    pub fn rejects(&self, surface: &str) -> Option<usize> {
        surface.chars().find_map(|c| self.block_of(c))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PruningReport {
    pub original: usize,
    pub used: usize,
    pub rejected: usize,
    pub neutral: usize,
    pub kept: usize,
    /// Rejected subwords per block, in policy order.
    pub per_block: Vec<(String, usize)>,
}

impl PruningReport {
    /// Derives neutral and kept from the three primary counts.
    pub fn from_counts(original: usize, used: usize, rejected: usize) -> Result<Self> {
        let neutral = original
            .checked_sub(used + rejected)
            .ok_or_else(|| TokenizerError::Config(format!("{used} used + {rejected} rejected exceed {original}")))?;
        Ok(Self { original, used, rejected, neutral, kept: used + neutral, per_block: Vec::new() })
    }

    pub fn is_consistent(&self) -> bool {
        self.kept == self.used + self.neutral
            && self.used + self.rejected + self.neutral == self.original
            && (self.per_block.is_empty() || self.per_block.iter().map(|(_, n)| n).sum::<usize>() == self.rejected)
    }

    /// Fraction of the original vocabulary removed.
    pub fn reduction(&self) -> f64 {
        if self.original == 0 {
            0.0
        } else {
            (self.original - self.kept) as f64 / self.original as f64
        }
    }
}

impl fmt::Display for PruningReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "original\t{}", self.original)?;
        writeln!(f, "used\t{}", self.used)?;
        writeln!(f, "rejected\t{}", self.rejected)?;
        writeln!(f, "neutral\t{}", self.neutral)?;
        writeln!(f, "kept\t{}", self.kept)?;
        writeln!(f, "reduction\t{:.4}", self.reduction())?;
        for (name, n) in &self.per_block {
            writeln!(f, "block\t{name}\t{n}")?;
        }
        Ok(())
    }
}

/// Drops every plain subword touching a rejected block. Specials always
/// survive and count as used. Fails if the corpus needs a rejected subword.
pub fn prune_vocabulary<'a>(
    vocab: &Vocabulary,
    policy: &UnicodeBlockPolicy,
    corpus: impl IntoIterator<Item = &'a str>,
) -> Result<(Vocabulary, PruningReport)> {
    let n = vocab.len();
    let mut used = vec![false; n];
    let mut rejected_by: Vec<Option<usize>> = vec![None; n];
    for (id, e) in vocab.entries().iter().enumerate() {
        let hit = policy.rejects(&e.surface);
        if e.class.is_special() {
            if let Some(b) = hit {
                return Err(TokenizerError::Config(format!(
                    "special token {:?} falls in rejected block {}",
                    e.surface,
                    policy.blocks()[b].name
                )));
            }
            used[id] = true;
        } else {
            rejected_by[id] = hit;
        }
    }
    for line in corpus {
        for id in vocab.segment(line)? {
            if let Some(b) = rejected_by[id] {
                return Err(TokenizerError::Conflict {
                    surface: vocab.entries()[id].surface.clone(),
                    block: policy.blocks()[b].name.clone(),
                });
            }
            used[id] = true;
        }
    }
    let mut per_block = vec![0usize; policy.blocks().len()];
    for b in rejected_by.iter().flatten() {
        per_block[*b] += 1;
    }
    let rejected = per_block.iter().sum::<usize>();
    let used_count = used.iter().filter(|&&u| u).count();
    let kept_entries =
        vocab.entries().iter().zip(&rejected_by).filter(|(_, r)| r.is_none()).map(|(e, _)| e.clone()).collect();
    let kept = Vocabulary::new(kept_entries)?;
    let mut report = PruningReport::from_counts(n, used_count, rejected)?;
    report.per_block = policy.blocks().iter().map(|b| b.name.clone()).zip(per_block).collect();
    debug_assert!(report.is_consistent() && report.kept == kept.len());
    Ok((kept, report))
}
