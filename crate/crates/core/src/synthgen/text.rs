//! Corpus access and line filling. Text for a page is one contiguous excerpt
//! so consecutive lines read on from each other.

use std::collections::BTreeSet;

use rand::Rng;

use super::font::FontSpec;
use super::{Result, SynthError};

const BUNDLED_CORPUS: &str = include_str!("../../data/corpus.txt");

/// Paragraphs (blank-line separated) flattened into one word stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    words: Vec<String>,
    paragraphs: Vec<String>,
}

impl Corpus {
    pub fn parse(text: &str) -> Result<Self> {
        let paragraphs: Vec<String> = text
            .split("\n\n")
            .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
            .filter(|p| !p.is_empty())
            .collect();
        let words: Vec<String> = paragraphs.iter().flat_map(|p| p.split(' ')).map(str::to_string).collect();
        if words.is_empty() {
            return Err(SynthError::Corpus("corpus has no words".into()));
        }
        Ok(Self { words, paragraphs })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_CORPUS).expect("bundled corpus is non-empty")
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn paragraphs(&self) -> &[String] {
        &self.paragraphs
    }

    pub fn chars(&self) -> BTreeSet<char> {
        self.paragraphs.iter().flat_map(|p| p.chars()).collect()
    }

    /// The words as one space-joined string.
    pub fn joined(&self) -> String {
        self.words.join(" ")
    }
}

/// Reads words from a fixed start, wrapping at the end of the corpus.
#[derive(Clone, Debug)]
pub struct WordCursor<'a> {
    corpus: &'a Corpus,
    pos: usize,
    taken: usize,
}

impl<'a> WordCursor<'a> {
    pub fn new(corpus: &'a Corpus, start: usize) -> Self {
        Self { corpus, pos: start % corpus.words.len(), taken: 0 }
    }

    pub fn random(corpus: &'a Corpus, rng: &mut impl Rng) -> Self {
        Self::new(corpus, rng.gen_range(0..corpus.words.len()))
    }

    pub fn peek(&self) -> &'a str {
        &self.corpus.words[self.pos]
    }

    pub fn next_word(&mut self) -> &'a str {
        let w = &self.corpus.words[self.pos];
        self.pos = (self.pos + 1) % self.corpus.words.len();
        self.taken += 1;
        w
    }

    /// True once more words were read than the corpus holds from the start point.
    pub fn wrapped(&self, start: usize) -> bool {
        start % self.corpus.words.len() + self.taken > self.corpus.words.len()
    }

    pub fn taken(&self) -> usize {
        self.taken
    }
}

/// How many lines and words a block should receive.
#[derive(Clone, Debug, PartialEq)]
pub enum LineTarget {
    /// Greedy filling up to a line count.
    Fill { max_lines: usize },
    /// Exact line and word counts, words spread evenly across lines.
    Exact { lines: usize, words: usize },
    /// Fixed text on a single line, not drawn from the corpus.
    Literal(String),
}

impl LineTarget {
    pub fn max_lines(&self) -> usize {
        match self {
            LineTarget::Fill { max_lines } => *max_lines,
            LineTarget::Exact { lines, .. } => *lines,
            LineTarget::Literal(_) => 1,
        }
    }
}

/// Splits `words` into `lines` runs whose sizes differ by at most one.
pub fn spread(words: usize, lines: usize) -> Vec<usize> {
    let (base, extra) = (words / lines, words % lines);
    (0..lines).map(|i| base + usize::from(i < extra)).collect()
}

/// Fills lines for one block from `cursor`, at most `budget` lines, each at most
/// `width` pixels wide in `font`. Fails when a line cannot be made to fit.
pub fn fill_block(
    cursor: &mut WordCursor<'_>,
    target: &LineTarget,
    font: &FontSpec,
    width: f32,
    budget: usize,
) -> Result<Vec<String>> {
    let fits = |line: &str| -> Result<bool> { Ok(font.extent(line)? <= width) };
    let mut lines = Vec::new();
    match target {
        LineTarget::Literal(text) => {
            if budget > 0 {
                if !fits(text)? {
                    return Err(SynthError::Overflow(format!("{text:?} is wider than {width:.0}px")));
                }
                lines.push(text.clone());
            }
        }
        LineTarget::Exact { lines: n, words } => {
            if *n == 0 || *words < *n {
                return Err(SynthError::Config(format!("cannot spread {words} words over {n} lines")));
            }
            for count in spread(*words, *n).into_iter().take(budget) {
                let line = (0..count).map(|_| cursor.next_word()).collect::<Vec<_>>().join(" ");
                if !fits(&line)? {
                    return Err(SynthError::Overflow(format!("{line:?} is wider than {width:.0}px")));
                }
                lines.push(line);
            }
        }
        LineTarget::Fill { max_lines } => {
            for _ in 0..(*max_lines).min(budget) {
                let mut line = cursor.next_word().to_string();
                if !fits(&line)? {
                    return Err(SynthError::Overflow(format!("word {line:?} is wider than {width:.0}px")));
                }
                loop {
                    let candidate = format!("{line} {}", cursor.peek());
                    if font.extent(&candidate)? > width {
                        break;
                    }
                    cursor.next_word();
                    line = candidate;
                }
                lines.push(line);
            }
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::font::{normalize_font, Style};

    fn font() -> FontSpec {
        normalize_font(&FontSpec::builtin("t", Style::Printed, 16.0)).unwrap()
    }

    #[test]
    fn corpus_parsing() {
        let c = Corpus::parse("a b\nc\n\n\n d  e \n\n").unwrap();
        assert_eq!(c.paragraphs(), &["a b c".to_string(), "d e".to_string()]);
        assert_eq!(c.words().len(), 5);
        assert!(Corpus::parse(" \n\n ").is_err());
    }

    #[test]
    fn cursor_wraps() {
        let c = Corpus::parse("a b c").unwrap();
        let mut cur = WordCursor::new(&c, 2);
        let w: Vec<&str> = (0..4).map(|_| cur.next_word()).collect();
        assert_eq!(w, ["c", "a", "b", "c"]);
        assert!(cur.wrapped(2));
    }

    #[test]
    fn spread_is_even() {
        assert_eq!(spread(17, 3), vec![6, 6, 5]);
        assert_eq!(spread(3, 3), vec![1, 1, 1]);
    }

    #[test]
    fn exact_target_counts() {
        let c = Corpus::bundled();
        let mut cur = WordCursor::new(&c, 0);
        let lines = fill_block(&mut cur, &LineTarget::Exact { lines: 3, words: 17 }, &font(), 10_000.0, 40).unwrap();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines.iter().map(|l| l.split(' ').count()).sum::<usize>(), 17);
    }

    #[test]
    fn filled_lines_are_consecutive_in_the_corpus() {
        let c = Corpus::bundled();
        let mut cur = WordCursor::new(&c, 10);
        let lines = fill_block(&mut cur, &LineTarget::Fill { max_lines: 5 }, &font(), 300.0, 40).unwrap();
        assert_eq!(lines.len(), 5);
        assert!(c.joined().contains(&lines.join(" ")));
        assert!(lines.iter().all(|l| font().extent(l).unwrap() <= 300.0));
    }

    #[test]
    fn budget_and_overflow() {
        let c = Corpus::bundled();
        let mut cur = WordCursor::new(&c, 0);
        assert_eq!(fill_block(&mut cur, &LineTarget::Fill { max_lines: 5 }, &font(), 300.0, 1).unwrap().len(), 1);
        assert!(matches!(
            fill_block(&mut cur, &LineTarget::Fill { max_lines: 5 }, &font(), 3.0, 5),
            Err(SynthError::Overflow(_))
        ));
    }
}
