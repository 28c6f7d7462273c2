//! Documents ↔ flat token sequences with layout, entity and task tags.

use std::fmt;

use thiserror::Error;

use crate::tokenizer::{Task, TokenClass, TokenId, TokenizerError, Vocabulary};

/// Class given to blocks the parser has to invent for text found outside any block.
pub const IMPLICIT_CLASS: &str = "body";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("layout class {0:?} is not in the vocabulary")]
    UnknownLayout(String),
    #[error("entity category {0:?} is not in the vocabulary")]
    UnknownCategory(String),
    #[error("task {0} has no start token in the vocabulary")]
    UnknownTask(Task),
    #[error("invalid document: {0}")]
    Contract(String),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

pub type Result<T, E = CodecError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub class: String,
    /// Enclosing block; always an earlier index.
    pub parent: Option<usize>,
    pub lines: Vec<String>,
}

impl Block {
    pub fn new(class: impl Into<String>, parent: Option<usize>, lines: Vec<String>) -> Self {
        Self { class: class.into(), parent, lines }
    }

    /// Lines joined by `\n`; entity offsets index into this.
    pub fn text(&self) -> String {
        self.lines.join("\n")
    }

    pub fn char_len(&self) -> usize {
        self.lines.iter().map(|l| l.chars().count()).sum::<usize>() + self.lines.len().saturating_sub(1)
    }
}

/// Character span `[start, end)` in a block's text.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Entity {
    pub block: usize,
    pub start: usize,
    pub end: usize,
    pub category: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Document {
    pub blocks: Vec<Block>,
    pub entities: Vec<Entity>,
}

impl Document {
    /// Checks nesting order, span bounds and span overlap.
    pub fn validate(&self) -> Result<()> {
        let mut stack: Vec<usize> = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            match b.parent {
                None => stack.clear(),
                Some(p) => {
                    while stack.last().is_some_and(|&top| top != p) {
                        stack.pop();
                    }
                    if stack.is_empty() {
                        return Err(CodecError::Contract(format!(
                            "block {i} has parent {p}, which is not an open ancestor in reading order"
                        )));
                    }
                }
            }
            if b.lines.iter().any(|l| l.contains('\n')) {
                return Err(CodecError::Contract(format!("block {i} has a line containing a line break")));
            }
            stack.push(i);
        }
        for w in self.entities.windows(2) {
            if w[1] < w[0] {
                return Err(CodecError::Contract("entities must be sorted by block and start".into()));
            }
            if w[0].block == w[1].block && w[1].start < w[0].end {
                return Err(CodecError::Contract(format!(
                    "entities [{},{}) and [{},{}) overlap in block {}",
                    w[0].start, w[0].end, w[1].start, w[1].end, w[0].block
                )));
            }
        }
        for e in &self.entities {
            let b = self
                .blocks
                .get(e.block)
                .ok_or_else(|| CodecError::Contract(format!("entity refers to missing block {}", e.block)))?;
            if e.start >= e.end || e.end > b.char_len() {
                return Err(CodecError::Contract(format!(
                    "entity span [{},{}) outside block {} of length {}",
                    e.start,
                    e.end,
                    e.block,
                    b.char_len()
                )));
            }
        }
        Ok(())
    }

    /// Block texts in reading order joined by `\n`, tags stripped.
    pub fn plain_text(&self) -> String {
        self.blocks.iter().map(Block::text).collect::<Vec<_>>().join("\n")
    }

    /// Character offset of each block's text inside [`Document::plain_text`].
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.blocks.len());
        let mut at = 0;
        for b in &self.blocks {
            offsets.push(at);
            at += b.char_len() + 1;
        }
        offsets
    }

    /// Surface text of an entity.
    pub fn entity_text(&self, e: &Entity) -> String {
        self.blocks[e.block].text().chars().skip(e.start).take(e.end - e.start).collect()
    }

    pub fn line_count(&self) -> usize {
        self.blocks.iter().map(|b| b.lines.len()).sum()
    }

    pub fn children(&self, parent: Option<usize>) -> impl Iterator<Item = usize> + '_ {
        (0..self.blocks.len()).filter(move |&i| self.blocks[i].parent == parent)
    }
}

/// Start token plus what it asks for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskPrompt {
    pub start_token: TokenId,
    pub task: Task,
}

impl TaskPrompt {
    pub fn new(vocab: &Vocabulary, task: Task) -> Result<Self> {
        let start_token = vocab.start(&task).ok_or_else(|| CodecError::UnknownTask(task.clone()))?;
        Ok(Self { start_token, task })
    }
}

fn special(vocab: &Vocabulary, class: TokenClass) -> Result<TokenId> {
    vocab.special(&class).ok_or_else(|| match class {
        TokenClass::LayoutOpen(c) | TokenClass::LayoutClose(c) => CodecError::UnknownLayout(c),
        TokenClass::NeOpen(c) | TokenClass::NeClose(c) => CodecError::UnknownCategory(c),
        other => CodecError::Contract(format!("vocabulary lacks {other:?}")),
    })
}

/// Depth-first reading-order emission framed by the start and end tokens.
pub fn serialize(doc: &Document, task: &TaskPrompt, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
    doc.validate()?;
    let mut out = vec![task.start_token];
    let mut stack: Vec<usize> = Vec::new();
    for (i, b) in doc.blocks.iter().enumerate() {
        while let Some(&top) = stack.last() {
            if Some(top) == b.parent {
                break;
            }
            out.push(special(vocab, TokenClass::LayoutClose(doc.blocks[top].class.clone()))?);
            stack.pop();
        }
        out.push(special(vocab, TokenClass::LayoutOpen(b.class.clone()))?);
        emit_block_text(doc, i, vocab, &mut out)?;
        stack.push(i);
    }
    while let Some(top) = stack.pop() {
        out.push(special(vocab, TokenClass::LayoutClose(doc.blocks[top].class.clone()))?);
    }
    out.push(vocab.end());
    Ok(out)
}

fn emit_block_text(doc: &Document, block: usize, vocab: &Vocabulary, out: &mut Vec<TokenId>) -> Result<()> {
    let chars: Vec<char> = doc.blocks[block].text().chars().collect();
    let newline = || vocab.newline().ok_or_else(|| CodecError::Contract("vocabulary lacks a line-break token".into()));
    // cut points: entity boundaries; each piece is segmented on its own so tags land exactly
    let mut cuts: Vec<(usize, TokenId)> = Vec::new();
    for e in doc.entities.iter().filter(|e| e.block == block) {
        cuts.push((e.start, special(vocab, TokenClass::NeOpen(e.category.clone()))?));
        cuts.push((e.end, special(vocab, TokenClass::NeClose(e.category.clone()))?));
    }
    // closes sort before opens at equal offsets because entities are sorted and disjoint
    let mut pos = 0;
    let mut piece = String::new();
    let flush = |piece: &mut String, out: &mut Vec<TokenId>| -> Result<()> {
        out.extend(vocab.segment(piece)?);
        piece.clear();
        Ok(())
    };
    let mut cut_iter = cuts.into_iter().peekable();
    while pos <= chars.len() {
        while let Some(&(at, tag)) = cut_iter.peek() {
            if at != pos {
                break;
            }
            flush(&mut piece, out)?;
            out.push(tag);
            cut_iter.next();
        }
        if pos == chars.len() {
            break;
        }
        if chars[pos] == '\n' {
            flush(&mut piece, out)?;
            out.push(newline()?);
        } else {
            piece.push(chars[pos]);
        }
        pos += 1;
    }
    flush(&mut piece, out)
}

/// A change the parser made to turn a token sequence into a document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Repair {
    /// Layout block left open; closed at `at` (token index).
    ImplicitClose { class: String, at: usize },
    /// Layout close without a matching open; dropped.
    StrayClose { class: String, at: usize },
    /// Text or entity outside any block; an implicit block was opened.
    ImplicitBlock { at: usize },
    /// Entity left open; closed at `at`.
    ImplicitEntityClose { category: String, at: usize },
    /// Entity close without a matching open; dropped.
    StrayEntityClose { category: String, at: usize },
    /// Entity that covered no characters; dropped.
    EmptyEntity { category: String, at: usize },
    /// Start, pad or blank token after the first position; dropped.
    StrayToken { id: TokenId, at: usize },
    /// Sequence ended without the end token.
    MissingEnd,
}

impl fmt::Display for Repair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Repair::ImplicitClose { class, at } => write!(f, "implicit close of {class} at token {at}"),
            Repair::StrayClose { class, at } => write!(f, "dropped stray close of {class} at token {at}"),
            Repair::ImplicitBlock { at } => write!(f, "implicit block opened at token {at}"),
            Repair::ImplicitEntityClose { category, at } => {
                write!(f, "implicit close of entity {category} at token {at}")
            }
            Repair::StrayEntityClose { category, at } => {
                write!(f, "dropped stray entity close {category} at token {at}")
            }
            Repair::EmptyEntity { category, at } => write!(f, "dropped empty entity {category} at token {at}"),
            Repair::StrayToken { id, at } => write!(f, "dropped token {id} at position {at}"),
            Repair::MissingEnd => f.write_str("sequence has no end token"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub task: Option<Task>,
    pub repairs: Vec<Repair>,
}

impl Diagnostics {
    pub fn implicit_blocks(&self) -> usize {
        self.repairs.iter().filter(|r| matches!(r, Repair::ImplicitBlock { .. })).count()
    }
}

struct OpenEntity {
    category: String,
    start: usize,
}

struct Parser<'v> {
    vocab: &'v Vocabulary,
    doc: Document,
    diag: Diagnostics,
    stack: Vec<usize>,
    /// Text of the innermost open block being built, as chars.
    text: Vec<Vec<char>>,
    entity: Option<OpenEntity>,
}

impl Parser<'_> {
    fn open(&mut self, class: String) {
        let parent = self.stack.last().copied();
        self.doc.blocks.push(Block::new(class, parent, Vec::new()));
        self.stack.push(self.doc.blocks.len() - 1);
        self.text.push(Vec::new());
    }

    fn ensure_block(&mut self, at: usize) {
        if self.stack.is_empty() {
            self.diag.repairs.push(Repair::ImplicitBlock { at });
            self.open(IMPLICIT_CLASS.to_string());
        }
    }

    fn close_entity(&mut self, at: usize, implicit: bool) {
        if let Some(e) = self.entity.take() {
            let block = *self.stack.last().expect("entity inside a block");
            let end = self.text.last().map_or(0, Vec::len);
            if implicit {
                self.diag.repairs.push(Repair::ImplicitEntityClose { category: e.category.clone(), at });
            }
            if end > e.start {
                self.doc.entities.push(Entity { block, start: e.start, end, category: e.category });
            } else {
                self.diag.repairs.push(Repair::EmptyEntity { category: e.category, at });
            }
        }
    }

    fn close_top(&mut self, at: usize, implicit: bool) {
        self.close_entity(at, true);
        let idx = self.stack.pop().expect("open block");
        let chars = self.text.pop().expect("text buffer");
        let text: String = chars.into_iter().collect();
        self.doc.blocks[idx].lines =
            if text.is_empty() { Vec::new() } else { text.split('\n').map(str::to_string).collect() };
        if implicit {
            self.diag.repairs.push(Repair::ImplicitClose { class: self.doc.blocks[idx].class.clone(), at });
        }
    }

    fn push_text(&mut self, s: &str, at: usize) {
        self.ensure_block(at);
        self.text.last_mut().expect("open block").extend(s.chars());
    }
}

/// Best-effort inverse of [`serialize`]; never fails, records every repair.
pub fn parse(ids: &[TokenId], vocab: &Vocabulary) -> (Document, Diagnostics) {
    let mut p = Parser {
        vocab,
        doc: Document::default(),
        diag: Diagnostics::default(),
        stack: Vec::new(),
        text: Vec::new(),
        entity: None,
    };
    let mut end_at = None;
    for (at, &id) in ids.iter().enumerate() {
        let Ok(entry) = p.vocab.entry(id) else {
            p.diag.repairs.push(Repair::StrayToken { id, at });
            continue;
        };
        match &entry.class {
            TokenClass::Plain => p.push_text(&entry.surface, at),
            TokenClass::Newline => p.push_text("\n", at),
            TokenClass::Start(task) if at == 0 => p.diag.task = Some(task.clone()),
            TokenClass::Start(_) | TokenClass::Pad | TokenClass::Blank => {
                p.diag.repairs.push(Repair::StrayToken { id, at })
            }
            TokenClass::End => {
                end_at = Some(at);
                break;
            }
            TokenClass::LayoutOpen(c) => {
                p.close_entity(at, true);
                p.open(c.clone());
            }
            TokenClass::LayoutClose(c) => {
                let found = p.stack.iter().rposition(|&b| p.doc.blocks[b].class == *c);
                match found {
                    Some(depth) => {
                        while p.stack.len() > depth + 1 {
                            p.close_top(at, true);
                        }
                        p.close_top(at, false);
                    }
                    None => p.diag.repairs.push(Repair::StrayClose { class: c.clone(), at }),
                }
            }
            TokenClass::NeOpen(c) => {
                p.ensure_block(at);
                p.close_entity(at, true);
                let start = p.text.last().map_or(0, Vec::len);
                p.entity = Some(OpenEntity { category: c.clone(), start });
            }
            TokenClass::NeClose(c) => {
                if p.entity.as_ref().is_some_and(|e| e.category == *c) {
                    p.close_entity(at, false);
                } else {
                    p.diag.repairs.push(Repair::StrayEntityClose { category: c.clone(), at });
                }
            }
        }
    }
    while !p.stack.is_empty() {
        p.close_top(end_at.unwrap_or(ids.len()), true);
    }
    if end_at.is_none() {
        p.diag.repairs.push(Repair::MissingEnd);
    }
    p.doc.entities.sort();
    (p.doc, p.diag)
}

/// Label string: the serialized sequence with specials written as tags.
pub fn to_label(doc: &Document, task: &TaskPrompt, vocab: &Vocabulary) -> Result<String> {
    Ok(vocab.detokenize(&serialize(doc, task, vocab)?)?)
}

/// Inverse of [`to_label`]; unknown tags are an error, structure is repaired.
pub fn from_label(label: &str, vocab: &Vocabulary) -> Result<(Document, Diagnostics)> {
    let ids = vocab.segment_tagged(label)?;
    Ok(parse(&ids, vocab))
}

/// Ordered tree: synthetic root, one node per block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutTree {
    pub label: String,
    pub children: Vec<LayoutTree>,
}

impl LayoutTree {
    pub fn leaf(label: impl Into<String>) -> Self {
        Self { label: label.into(), children: Vec::new() }
    }

    pub fn node(label: impl Into<String>, children: Vec<LayoutTree>) -> Self {
        Self { label: label.into(), children }
    }

    /// Node count including this node.
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(LayoutTree::size).sum::<usize>()
    }

    /// Labels in pre-order.
    pub fn preorder(&self) -> Vec<&str> {
        let mut out = vec![self.label.as_str()];
        for c in &self.children {
            out.extend(c.preorder());
        }
        out
    }
}

pub const ROOT_LABEL: &str = "root";

pub fn layout_tree(doc: &Document) -> LayoutTree {
    fn build(doc: &Document, at: Option<usize>) -> Vec<LayoutTree> {
        doc.children(at).map(|i| LayoutTree::node(doc.blocks[i].class.clone(), build(doc, Some(i)))).collect()
    }
    LayoutTree::node(ROOT_LABEL, build(doc, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{desk_vocabulary, SpecialSet};

    fn vocab() -> Vocabulary {
        desk_vocabulary(["met Anne. the body text"], 40, &SpecialSet::default()).unwrap()
    }

    fn htr(v: &Vocabulary) -> TaskPrompt {
        TaskPrompt::new(v, Task::Htr).unwrap()
    }

    #[test]
    fn empty_document() {
        let v = vocab();
        let ids = serialize(&Document::default(), &htr(&v), &v).unwrap();
        assert_eq!(ids, vec![v.start(&Task::Htr).unwrap(), v.end()]);
        let (doc, diag) = parse(&ids, &v);
        assert_eq!(doc, Document::default());
        assert!(diag.repairs.is_empty());
        assert_eq!(layout_tree(&doc), LayoutTree::leaf(ROOT_LABEL));
    }

    #[test]
    fn single_block() {
        let v = vocab();
        let doc = Document { blocks: vec![Block::new("body", None, vec!["hi".into()])], entities: vec![] };
        let ids = serialize(&doc, &htr(&v), &v).unwrap();
        let open = v.special(&TokenClass::LayoutOpen("body".into())).unwrap();
        let close = v.special(&TokenClass::LayoutClose("body".into())).unwrap();
        let mut expected = vec![v.start(&Task::Htr).unwrap(), open];
        expected.extend(v.segment("hi").unwrap());
        expected.extend([close, v.end()]);
        assert_eq!(ids, expected);
        assert_eq!(to_label(&doc, &htr(&v), &v).unwrap(), "⟨s:htr⟩⟨body⟩hi⟨/body⟩⟨end⟩");
    }

    #[test]
    fn entity_tags_bracket_the_span() {
        let v = vocab();
        let doc = Document {
            blocks: vec![Block::new("body", None, vec!["met Anne.".into()])],
            entities: vec![Entity { block: 0, start: 4, end: 8, category: "PERSON".into() }],
        };
        let label = to_label(&doc, &htr(&v), &v).unwrap();
        assert_eq!(label, "⟨s:htr⟩⟨body⟩met ⟨ne:PERSON⟩Anne⟨/ne:PERSON⟩.⟨/body⟩⟨end⟩");
        let (back, diag) = from_label(&label, &v).unwrap();
        assert_eq!(back, doc);
        assert!(diag.repairs.is_empty());
        assert_eq!(back.entity_text(&back.entities[0]), "Anne");
    }

    #[test]
    fn nested_blocks_round_trip() {
        let v = vocab();
        let doc = Document {
            blocks: vec![
                Block::new("section", None, vec![]),
                Block::new("annotation", Some(0), vec!["a".into()]),
                Block::new("body", Some(0), vec!["b c".into(), "d".into()]),
                Block::new("number", None, vec!["7".into()]),
            ],
            entities: vec![Entity { block: 2, start: 2, end: 5, category: "DATE".into() }],
        };
        let ids = serialize(&doc, &htr(&v), &v).unwrap();
        let (back, diag) = parse(&ids, &v);
        assert_eq!(back, doc);
        assert!(diag.repairs.is_empty());
        let tree = layout_tree(&doc);
        assert_eq!(tree.children.len(), 2);
        assert_eq!(tree.children[0].children.len(), 2);
        assert_eq!(tree.preorder(), ["root", "section", "annotation", "body", "number"]);
    }

    #[test]
    fn missing_close_is_repaired() {
        let v = vocab();
        let (doc, diag) = from_label("⟨s:htr⟩⟨body⟩hi⟨end⟩", &v).unwrap();
        assert_eq!(doc.blocks, vec![Block::new("body", None, vec!["hi".into()])]);
        assert_eq!(diag.repairs, vec![Repair::ImplicitClose { class: "body".into(), at: 4 }]);
    }

    #[test]
    fn stray_close_is_dropped() {
        let v = vocab();
        let (doc, diag) = from_label("⟨s:htr⟩⟨/date⟩⟨body⟩x⟨/body⟩⟨end⟩", &v).unwrap();
        assert_eq!(doc.blocks.len(), 1);
        assert_eq!(diag.repairs, vec![Repair::StrayClose { class: "date".into(), at: 1 }]);
    }

    #[test]
    fn text_outside_blocks_gets_an_implicit_block() {
        let v = vocab();
        let (doc, diag) = from_label("⟨s:htr⟩hi⟨end⟩", &v).unwrap();
        assert_eq!(doc.blocks[0].class, IMPLICIT_CLASS);
        assert_eq!(diag.implicit_blocks(), 1);
    }

    #[test]
    fn overlapping_entities_are_a_contract_error() {
        let v = vocab();
        let doc = Document {
            blocks: vec![Block::new("body", None, vec!["abcdef".into()])],
            entities: vec![
                Entity { block: 0, start: 0, end: 3, category: "PERSON".into() },
                Entity { block: 0, start: 2, end: 5, category: "DATE".into() },
            ],
        };
        assert!(matches!(serialize(&doc, &htr(&v), &v), Err(CodecError::Contract(_))));
    }

    #[test]
    fn unknown_class_is_a_vocabulary_error() {
        let v = vocab();
        let doc = Document { blocks: vec![Block::new("footer", None, vec![])], entities: vec![] };
        assert_eq!(serialize(&doc, &htr(&v), &v), Err(CodecError::UnknownLayout("footer".into())));
    }
}
