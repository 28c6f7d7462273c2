//! Subword vocabulary: greedy longest-match segmentation, special-token
//! classes, Unicode-block pruning and parameter accounting.

mod desk;
mod prune;

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

pub use desk::{char_vocabulary, desk_vocabulary, frequent_ngrams, SpecialSet, LATIN_ALPHABET};
pub use prune::{prune_vocabulary, CodeRange, PruningReport, UnicodeBlockPolicy};

pub type TokenId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenizerError {
    #[error("no token covers character {ch:?} (U+{code:04X}) at offset {offset}", code = *ch as u32)]
    Coverage { ch: char, offset: usize },
    #[error("unknown token id {0}")]
    UnknownId(usize),
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("invalid vocabulary: {0}")]
    Invalid(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("subword {surface:?} is used by the corpus but rejected by block {block}")]
    Conflict { surface: String, block: String },
}

pub type Result<T, E = TokenizerError> = std::result::Result<T, E>;

/// What a start token asks the decoder to do.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Htr,
    /// Named-entity recognition for one dataset.
    Ner(String),
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Htr => f.write_str("htr"),
            Task::Ner(d) => write!(f, "ner:{d}"),
        }
    }
}

impl Task {
    pub fn parse(s: &str) -> Option<Self> {
        match s.split_once(':') {
            None if s == "htr" => Some(Task::Htr),
            Some(("ner", d)) if !d.is_empty() => Some(Task::Ner(d.to_string())),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TokenClass {
    Plain,
    Start(Task),
    End,
    Pad,
    Blank,
    /// Line break inside a block.
    Newline,
    LayoutOpen(String),
    LayoutClose(String),
    NeOpen(String),
    NeClose(String),
}

impl TokenClass {
    pub fn is_special(&self) -> bool {
        !matches!(self, TokenClass::Plain)
    }

    /// Tag text a special token is written as in label strings.
    pub fn canonical_surface(&self) -> Option<String> {
        Some(match self {
            TokenClass::Plain => return None,
            TokenClass::Start(t) => format!("⟨s:{t}⟩"),
            TokenClass::End => "⟨end⟩".into(),
            TokenClass::Pad => "⟨pad⟩".into(),
            TokenClass::Blank => "⟨blank⟩".into(),
            TokenClass::Newline => "⟨nl⟩".into(),
            TokenClass::LayoutOpen(c) => format!("⟨{c}⟩"),
            TokenClass::LayoutClose(c) => format!("⟨/{c}⟩"),
            TokenClass::NeOpen(c) => format!("⟨ne:{c}⟩"),
            TokenClass::NeClose(c) => format!("⟨/ne:{c}⟩"),
        })
    }

    fn code(&self) -> String {
        match self {
            TokenClass::Plain => "plain".into(),
            TokenClass::Start(t) => format!("start:{t}"),
            TokenClass::End => "end".into(),
            TokenClass::Pad => "pad".into(),
            TokenClass::Blank => "blank".into(),
            TokenClass::Newline => "newline".into(),
            TokenClass::LayoutOpen(c) => format!("layout_open:{c}"),
            TokenClass::LayoutClose(c) => format!("layout_close:{c}"),
            TokenClass::NeOpen(c) => format!("ne_open:{c}"),
            TokenClass::NeClose(c) => format!("ne_close:{c}"),
        }
    }

    fn from_code(code: &str) -> Option<Self> {
        let (head, arg) = match code.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (code, None),
        };
        let named = |a: Option<&str>| a.filter(|s| !s.is_empty()).map(str::to_string);
        Some(match (head, arg) {
            ("plain", None) => TokenClass::Plain,
            ("end", None) => TokenClass::End,
            ("pad", None) => TokenClass::Pad,
            ("blank", None) => TokenClass::Blank,
            ("newline", None) => TokenClass::Newline,
            ("start", Some(a)) => TokenClass::Start(Task::parse(a)?),
            ("layout_open", a) => TokenClass::LayoutOpen(named(a)?),
            ("layout_close", a) => TokenClass::LayoutClose(named(a)?),
            ("ne_open", a) => TokenClass::NeOpen(named(a)?),
            ("ne_close", a) => TokenClass::NeClose(named(a)?),
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub surface: String,
    pub class: TokenClass,
}

/// Immutable id ↔ surface map. Ids are dense `0..len()`.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    entries: Vec<Entry>,
    by_surface: HashMap<String, TokenId>,
    by_class: HashMap<TokenClass, TokenId>,
    longest_plain: usize,
    pad: TokenId,
    end: TokenId,
    blank: TokenId,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Vocabulary {
    pub fn new(entries: Vec<Entry>) -> Result<Self> {
        let mut by_surface = HashMap::with_capacity(entries.len());
        let mut by_class = HashMap::new();
        let mut longest_plain = 0;
        for (id, e) in entries.iter().enumerate() {
            if e.surface.is_empty() || e.surface.contains(['\t', '\n', '\r']) {
                return Err(TokenizerError::Invalid(format!("entry {id} has an unusable surface {:?}", e.surface)));
            }
            if by_surface.insert(e.surface.clone(), id).is_some() {
                return Err(TokenizerError::Invalid(format!("duplicate surface {:?}", e.surface)));
            }
            match e.class.canonical_surface() {
                None => {
                    if e.surface.contains(['⟨', '⟩']) {
                        return Err(TokenizerError::Invalid(format!(
                            "plain surface {:?} uses tag brackets",
                            e.surface
                        )));
                    }
                    longest_plain = longest_plain.max(e.surface.chars().count());
                }
                Some(canon) => {
                    if canon != e.surface {
                        return Err(TokenizerError::Invalid(format!(
                            "special {} must be written {canon:?}, found {:?}",
                            e.class.code(),
                            e.surface
                        )));
                    }
                    if by_class.insert(e.class.clone(), id).is_some() {
                        return Err(TokenizerError::Invalid(format!("duplicate special {}", e.class.code())));
                    }
                }
            }
        }
        let need = |c: TokenClass| {
            by_class
                .get(&c)
                .copied()
                .ok_or_else(|| TokenizerError::Invalid(format!("missing required special {}", c.code())))
        };
        let (pad, end, blank) = (need(TokenClass::Pad)?, need(TokenClass::End)?, need(TokenClass::Blank)?);
        for class in by_class.keys() {
            let partner = match class {
                TokenClass::LayoutOpen(c) => Some(TokenClass::LayoutClose(c.clone())),
                TokenClass::LayoutClose(c) => Some(TokenClass::LayoutOpen(c.clone())),
                TokenClass::NeOpen(c) => Some(TokenClass::NeClose(c.clone())),
                TokenClass::NeClose(c) => Some(TokenClass::NeOpen(c.clone())),
                _ => None,
            };
            if let Some(p) = partner {
                if !by_class.contains_key(&p) {
                    return Err(TokenizerError::Invalid(format!("{} has no matching {}", class.code(), p.code())));
                }
            }
        }
        Ok(Self { entries, by_surface, by_class, longest_plain, pad, end, blank })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, id: TokenId) -> Result<&Entry> {
        self.entries.get(id).ok_or(TokenizerError::UnknownId(id))
    }

    pub fn surface(&self, id: TokenId) -> Result<&str> {
        self.entry(id).map(|e| e.surface.as_str())
    }

    pub fn class(&self, id: TokenId) -> Result<&TokenClass> {
        self.entry(id).map(|e| &e.class)
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.entries.get(id).is_some_and(|e| e.class.is_special())
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.by_surface.get(surface).copied()
    }

    pub fn special(&self, class: &TokenClass) -> Option<TokenId> {
        self.by_class.get(class).copied()
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn end(&self) -> TokenId {
        self.end
    }

    pub fn blank(&self) -> TokenId {
        self.blank
    }

    pub fn newline(&self) -> Option<TokenId> {
        self.special(&TokenClass::Newline)
    }

    pub fn start(&self, task: &Task) -> Option<TokenId> {
        self.special(&TokenClass::Start(task.clone()))
    }

    pub fn plain_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.entries.len()).filter(|&i| !self.entries[i].class.is_special())
    }

    pub fn tasks(&self) -> Vec<Task> {
        let mut t: Vec<Task> = self
            .entries
            .iter()
            .filter_map(|e| match &e.class {
                TokenClass::Start(t) => Some(t.clone()),
                _ => None,
            })
            .collect();
        t.sort();
        t
    }

    pub fn layout_classes(&self) -> Vec<String> {
        self.collect_names(|c| matches!(c, TokenClass::LayoutOpen(_)))
    }

    pub fn ne_categories(&self) -> Vec<String> {
        self.collect_names(|c| matches!(c, TokenClass::NeOpen(_)))
    }

    fn collect_names(&self, pick: impl Fn(&TokenClass) -> bool) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| pick(&e.class))
            .filter_map(|e| match &e.class {
                TokenClass::LayoutOpen(n) | TokenClass::NeOpen(n) => Some(n.clone()),
                _ => None,
            })
            .collect()
    }

    /// Longest plain token starting at `chars[pos]`, as (id, length in chars).
    fn longest_match(&self, chars: &[char], pos: usize, buf: &mut String) -> Option<(TokenId, usize)> {
        let max = self.longest_plain.min(chars.len() - pos);
        (1..=max).rev().find_map(|len| {
            buf.clear();
            buf.extend(&chars[pos..pos + len]);
            self.by_surface.get(buf.as_str()).filter(|&&id| !self.entries[id].class.is_special()).map(|&id| (id, len))
        })
    }

    /// Greedy left-to-right longest-match segmentation of plain text.
    pub fn segment(&self, text: &str) -> Result<Vec<TokenId>> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut pos = 0;
        let mut buf = String::new();
        while pos < chars.len() {
            let (id, len) = self
                .longest_match(&chars, pos, &mut buf)
                .ok_or(TokenizerError::Coverage { ch: chars[pos], offset: pos })?;
            out.push(id);
            pos += len;
        }
        Ok(out)
    }

    /// Segments a label string in which special tokens appear as `⟨...⟩` tags.
    pub fn segment_tagged(&self, label: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut rest = label;
        while !rest.is_empty() {
            if rest.starts_with('⟨') {
                let close = rest.find('⟩').ok_or_else(|| TokenizerError::UnknownTag(rest.to_string()))?;
                let tag = &rest[..close + '⟩'.len_utf8()];
                let id = self
                    .id(tag)
                    .filter(|&id| self.is_special(id))
                    .ok_or_else(|| TokenizerError::UnknownTag(tag.to_string()))?;
                out.push(id);
                rest = &rest[tag.len()..];
            } else {
                let cut = rest.find('⟨').unwrap_or(rest.len());
                out.extend(self.segment(&rest[..cut])?);
                rest = &rest[cut..];
            }
        }
        Ok(out)
    }

    /// Concatenated surfaces; special tokens appear as their tags.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let mut s = String::new();
        for &id in ids {
            s.push_str(self.surface(id)?);
        }
        Ok(s)
    }

    /// Mean length in characters of the plain tokens.
    pub fn mean_plain_length(&self) -> f64 {
        let (n, total) =
            self.plain_ids().fold((0usize, 0usize), |(n, t), id| (n + 1, t + self.entries[id].surface.chars().count()));
        if n == 0 {
            0.0
        } else {
            total as f64 / n as f64
        }
    }

    /// `id<TAB>class<TAB>surface`, one entry per line.
    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        for (id, e) in self.entries.iter().enumerate() {
            writeln!(w, "{id}\t{}\t{}", e.class.code(), e.surface)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("surfaces are UTF-8")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| TokenizerError::Parse { line: lineno + 1, msg };
            let mut parts = line.splitn(3, '\t');
            let (Some(id), Some(class), Some(surface)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected id<TAB>class<TAB>surface".into()));
            };
            let id: usize = id.parse().map_err(|_| err(format!("bad id {id:?}")))?;
            if id != entries.len() {
                return Err(err(format!("ids must be dense, expected {} found {id}", entries.len())));
            }
            let class = TokenClass::from_code(class).ok_or_else(|| err(format!("unknown class {class:?}")))?;
            entries.push(Entry { surface: surface.to_string(), class });
        }
        Self::new(entries)
    }

    /// Stable content hash of the vocabulary file form.
    pub fn fingerprint(&self) -> String {
        crate::util::sha256_hex(self.to_text().as_bytes())
    }
}

/// Parameters in the token embedding and in the output decision layer.
/// Each is a dense `v × d` matrix; returns `(per_layer, both_layers)`.
pub fn embedding_decision_param_count(vocab_size: u64, model_dim: u64) -> (u64, u64) {
    let per_layer = vocab_size * model_dim;
    (per_layer, 2 * per_layer)
}
