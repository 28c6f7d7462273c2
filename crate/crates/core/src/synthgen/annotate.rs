//! Entity annotators: plain text in, character spans out.

use std::collections::HashMap;

use super::{Result, SynthError};

/// Character span `[start, end)` with its category.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub category: String,
}

impl Span {
    pub fn new(start: usize, end: usize, category: impl Into<String>) -> Self {
        Self { start, end, category: category.into() }
    }
}

pub trait Annotator {
    /// Sorted, non-overlapping spans inside `text`.
    fn annotate(&self, text: &str) -> Result<Vec<Span>>;
}

/// Rejects spans that leave the text, are empty, unsorted or overlapping.
pub fn check_spans(text: &str, spans: &[Span]) -> Result<()> {
    let len = text.chars().count();
    let mut prev_end = 0;
    for s in spans {
        if s.start >= s.end || s.end > len {
            return Err(SynthError::Annotator(format!("span [{}, {}) outside text of length {len}", s.start, s.end)));
        }
        if s.start < prev_end {
            return Err(SynthError::Annotator(format!("span [{}, {}) overlaps its predecessor", s.start, s.end)));
        }
        prev_end = s.end;
    }
    Ok(())
}

/// Dictionary lookup plus digit rules. Four-digit numbers from 1000 to 2099
/// are dates, other digit runs are cardinals.
#[derive(Clone, Debug, Default)]
pub struct Gazetteer {
    by_first: HashMap<char, Vec<(Vec<char>, String)>>,
    date_category: Option<String>,
    cardinal_category: Option<String>,
}

const BUNDLED_GAZETTEER: &str = include_str!("../../data/gazetteer.tsv");

impl Gazetteer {
    /// `category<TAB>surface` per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut g =
            Self { date_category: Some("DATE".into()), cardinal_category: Some("CARDINAL".into()), ..Self::default() };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (cat, surface) = line.split_once('\t').ok_or_else(|| {
                SynthError::Annotator(format!("gazetteer line {}: expected category<TAB>surface", i + 1))
            })?;
            if cat.is_empty() || surface.trim().is_empty() {
                return Err(SynthError::Annotator(format!("gazetteer line {}: empty field", i + 1)));
            }
            g.insert(cat, surface);
        }
        Ok(g)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_GAZETTEER).expect("bundled gazetteer is well formed")
    }

    pub fn insert(&mut self, category: &str, surface: &str) {
        let chars: Vec<char> = surface.chars().collect();
        let list = self.by_first.entry(chars[0]).or_default();
        list.push((chars, category.to_string()));
        // longest first, then lexicographic, so lookups are deterministic
        list.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        list.dedup_by(|a, b| a.0 == b.0);
    }

    /// Digit rules off; dictionary only.
    pub fn without_rules(mut self) -> Self {
        self.date_category = None;
        self.cardinal_category = None;
        self
    }

    pub fn len(&self) -> usize {
        self.by_first.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_first.is_empty()
    }

    pub fn categories(&self) -> Vec<String> {
        let mut c: Vec<String> = self.by_first.values().flatten().map(|(_, c)| c.clone()).collect();
        c.extend(self.date_category.clone());
        c.extend(self.cardinal_category.clone());
        c.sort();
        c.dedup();
        c
    }
}

fn boundary(chars: &[char], i: usize) -> bool {
    i == 0 || i == chars.len() || !chars[i].is_alphanumeric() || !chars[i - 1].is_alphanumeric()
}

impl Annotator for Gazetteer {
    fn annotate(&self, text: &str) -> Result<Vec<Span>> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if !boundary(&chars, i) || !chars[i].is_alphanumeric() {
                i += 1;
                continue;
            }
            let hit = self
                .by_first
                .get(&chars[i])
                .and_then(|list| list.iter().find(|(s, _)| chars[i..].starts_with(s) && boundary(&chars, i + s.len())));
            if let Some((s, cat)) = hit {
                out.push(Span::new(i, i + s.len(), cat.clone()));
                i += s.len();
                continue;
            }
            if chars[i].is_ascii_digit() {
                let end = (i..chars.len()).find(|&j| !chars[j].is_ascii_digit()).unwrap_or(chars.len());
                if boundary(&chars, end) {
                    let run: String = chars[i..end].iter().collect();
                    let year = run.len() == 4 && (1000..=2099).contains(&run.parse::<u32>().unwrap_or(0));
                    let cat = if year { &self.date_category } else { &self.cardinal_category };
                    if let Some(cat) = cat {
                        out.push(Span::new(i, end, cat.clone()));
                    }
                }
                i = end;
                continue;
            }
            i += 1;
        }
        check_spans(text, &out)?;
        Ok(out)
    }
}

/// Spans produced elsewhere, one `start<TAB>end<TAB>category` per line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExternalAnnotations {
    spans: Vec<Span>,
}

impl ExternalAnnotations {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spans = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad =
                || SynthError::Annotator(format!("annotation line {}: expected start<TAB>end<TAB>category", i + 1));
            let mut f = line.split('\t');
            let start = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let end = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let cat = f.next().filter(|c| !c.is_empty()).ok_or_else(bad)?;
            if f.next().is_some() {
                return Err(bad());
            }
            spans.push(Span::new(start, end, cat));
        }
        spans.sort();
        Ok(Self { spans })
    }
}

impl Annotator for ExternalAnnotations {
    fn annotate(&self, text: &str) -> Result<Vec<Span>> {
        check_spans(text, &self.spans)?;
        Ok(self.spans.clone())
    }
}

/// Annotates nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoEntities;

impl Annotator for NoEntities {
    fn annotate(&self, _text: &str) -> Result<Vec<Span>> {
        Ok(Vec::new())
    }
}
