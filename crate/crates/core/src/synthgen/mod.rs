//! Synthetic pages and lines: layout templates for four document families,
//! stroke-font rendering, corpus text and gazetteer entities. Every sample is
//! a pure function of `(family, config, seed, index)`.

pub mod annotate;
pub mod augment;
pub mod font;
mod glyphs;
pub mod text;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use annotate::{Annotator, ExternalAnnotations, Gazetteer, NoEntities, Span};
pub use augment::{augment, AugmentPolicy};
pub use font::{normalize_font, BitmapFont, FontPool, FontSpec, GlyphSource, Style};
pub use text::{Corpus, LineTarget};

use crate::codec::{Block, CodecError, Document, Entity};
use crate::image::GrayImage;
use crate::par::Exec;
use text::{fill_block, WordCursor};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("font: {0}")]
    Font(String),
    #[error("font {font} has no glyph for {ch:?}")]
    MissingGlyph { ch: char, font: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("text does not fit: {0}")]
    Overflow(String),
    #[error("lines must not be empty")]
    EmptyText,
    #[error("annotator: {0}")]
    Annotator(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    /// One paragraph with varying side margins.
    Paragraph,
    /// Letters with sender, recipient, date, subject, opening, body and postscript blocks.
    Mail,
    /// Sections holding a margin annotation and a body, under a page number.
    Nested,
    /// Margin block A, body B and an optional margin block C.
    Margin,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Paragraph, Family::Mail, Family::Nested, Family::Margin];

    pub fn name(self) -> &'static str {
        match self {
            Family::Paragraph => "paragraph",
            Family::Mail => "mail",
            Family::Nested => "nested",
            Family::Margin => "margin",
        }
    }

    /// Final curriculum line budget.
    pub fn l_max(self) -> usize {
        match self {
            Family::Paragraph => 15,
            Family::Mail => 40,
            Family::Nested => 30,
            Family::Margin => 80,
        }
    }

    /// Layout classes this family emits.
    pub fn classes(self) -> &'static [&'static str] {
        match self {
            Family::Paragraph => &["body"],
            Family::Mail => &["sender", "recipient", "date", "subject", "opening", "body", "ps"],
            Family::Nested => &["number", "section", "annotation", "body"],
            Family::Margin => &["A", "B", "C"],
        }
    }

    /// Whether entity labels are generated by default.
    pub fn annotates(self) -> bool {
        self != Family::Margin
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            SynthError::Config(format!("unknown template {s:?}; expected paragraph, mail, nested or margin"))
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Rect {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl Rect {
    pub fn right(&self) -> f32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f32 {
        self.y + self.h
    }

    /// Interiors intersect.
    pub fn overlaps(&self, o: &Rect) -> bool {
        self.x < o.right() && o.x < self.right() && self.y < o.bottom() && o.y < self.bottom()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PageConfig {
    pub width: usize,
    pub height: usize,
    /// Maximum number of text lines on the page.
    pub l_max: usize,
    /// Generate entity labels; ignored for families that never annotate.
    pub annotate: bool,
    /// Layout attempts before giving up on overflowing text.
    pub retries: usize,
}

impl PageConfig {
    pub fn new(width: usize, height: usize, l_max: usize) -> Self {
        Self { width, height, l_max, annotate: false, retries: 8 }
    }

    pub fn desk(family: Family) -> Self {
        Self::new(640, 900, family.l_max())
    }
}

/// Inclusion probability and size ranges for one mail block class.
#[derive(Clone, Debug, PartialEq)]
pub struct MailBlockPrior {
    pub class: String,
    pub prob: f64,
    pub lines: (usize, usize),
    pub words_per_line: (usize, usize),
}

/// Categorical prior over mail blocks, in reading order.
#[derive(Clone, Debug, PartialEq)]
pub struct MailPrior {
    pub blocks: Vec<MailBlockPrior>,
}

impl Default for MailPrior {
    fn default() -> Self {
        let b = |class: &str, prob, lines, words_per_line| MailBlockPrior {
            class: class.into(),
            prob,
            lines,
            words_per_line,
        };
        Self {
            blocks: vec![
                b("sender", 0.8, (2, 4), (1, 3)),
                b("recipient", 0.8, (2, 4), (1, 3)),
                b("date", 0.7, (1, 1), (2, 4)),
                b("subject", 0.6, (1, 2), (3, 6)),
                b("opening", 0.7, (1, 1), (1, 3)),
                b("body", 1.0, (3, 12), (4, 8)),
                b("ps", 0.3, (1, 3), (3, 7)),
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Top {
    At(f32),
    /// Below every listed block (containers include their descendants).
    After(Vec<usize>),
    /// Same top as another block, plus a number of line heights.
    Beside(usize, f32),
}

#[derive(Clone, Debug, PartialEq)]
struct Planned {
    class: String,
    parent: Option<usize>,
    x: f32,
    w: f32,
    top: Top,
    target: LineTarget,
    container: bool,
}

fn leaf(class: &str, parent: Option<usize>, (x, w): (f32, f32), top: Top, target: LineTarget) -> Planned {
    Planned { class: class.into(), parent, x, w, top, target, container: false }
}

/// Layout geometry for one page of a family.
fn plan(family: Family, page: &PageConfig, mail: &MailPrior, lh: f32, rng: &mut impl Rng) -> Vec<Planned> {
    let (w, h) = (page.width as f32, page.height as f32);
    let ml = w * rng.gen_range(0.03..0.08);
    let mr = w * rng.gen_range(0.03..0.08);
    let mt = h * rng.gen_range(0.02..0.06);
    let full = (ml, w - ml - mr);
    let fill_rows = |from: f32| (((h - from - mt) / lh).floor().max(1.0)) as usize;
    match family {
        Family::Paragraph => {
            let top = mt + rng.gen_range(0.0..(2.0 * lh).min(h * 0.1));
            vec![leaf("body", None, full, Top::At(top), LineTarget::Fill { max_lines: fill_rows(top) })]
        }
        Family::Mail => {
            let half = full.1 / 2.0;
            let left = (ml, half - 0.02 * w);
            let right = (ml + half + 0.02 * w, half - 0.02 * w);
            let mut out: Vec<Planned> = Vec::new();
            for prior in &mail.blocks {
                if prior.class != "body" && !rng.gen_bool(prior.prob) {
                    continue;
                }
                let lines = rng.gen_range(prior.lines.0..=prior.lines.1);
                let words = (0..lines).map(|_| rng.gen_range(prior.words_per_line.0..=prior.words_per_line.1)).sum();
                let target = LineTarget::Exact { lines, words };
                let all_before: Vec<usize> = (0..out.len()).collect();
                let idx = |c: &str, out: &[Planned]| out.iter().position(|p| p.class == c);
                let (col, top) = match prior.class.as_str() {
                    "sender" => (left, Top::At(mt)),
                    "recipient" => match idx("sender", &out) {
                        Some(s) => (right, Top::Beside(s, 1.0)),
                        None => (right, Top::At(mt)),
                    },
                    "date" => (right, if out.is_empty() { Top::At(mt) } else { Top::After(all_before) }),
                    _ => {
                        let col = if prior.class == "subject" { left } else { full };
                        (col, if out.is_empty() { Top::At(mt) } else { Top::After(all_before) })
                    }
                };
                out.push(leaf(&prior.class, None, col, top, target));
            }
            out
        }
        Family::Nested => {
            let margin_w = full.1 * 0.24;
            let margin = (ml, margin_w);
            let body = (ml + margin_w + 0.03 * w, full.1 - margin_w - 0.03 * w);
            let mut out = Vec::new();
            if rng.gen_bool(0.7) {
                let n = rng.gen_range(1..400).to_string();
                let nw = (w * 0.12).max(lh * 3.0);
                out.push(leaf("number", None, (w - mr - nw, nw), Top::At(mt), LineTarget::Literal(n)));
            }
            let sections = rng.gen_range(1..=3);
            let mut prev: Vec<usize> = (0..out.len()).collect();
            for _ in 0..sections {
                let s = out.len();
                let top = if prev.is_empty() { Top::At(mt) } else { Top::After(prev.clone()) };
                out.push(Planned {
                    class: "section".into(),
                    parent: None,
                    x: full.0,
                    w: full.1,
                    top,
                    target: LineTarget::Fill { max_lines: 0 },
                    container: true,
                });
                if rng.gen_bool(0.6) {
                    let n = rng.gen_range(1..=3);
                    out.push(leaf(
                        "annotation",
                        Some(s),
                        margin,
                        Top::Beside(s, 0.0),
                        LineTarget::Fill { max_lines: n },
                    ));
                }
                let n = rng.gen_range(2..=6);
                out.push(leaf("body", Some(s), body, Top::Beside(s, 0.0), LineTarget::Fill { max_lines: n }));
                prev = vec![s];
            }
            out
        }
        Family::Margin => {
            let margin_w = full.1 * 0.22;
            let margin = (ml, margin_w);
            let body = (ml + margin_w + 0.04 * w, full.1 - margin_w - 0.04 * w);
            let a_lines = rng.gen_range(2..=3);
            let mut out = vec![
                leaf("A", None, margin, Top::At(mt), LineTarget::Fill { max_lines: a_lines }),
                leaf("B", None, body, Top::Beside(0, 0.0), LineTarget::Fill { max_lines: fill_rows(mt) }),
            ];
            if rng.gen_bool(0.5) {
                let n = rng.gen_range(1..=3);
                let top = Top::After(vec![0]);
                out.push(leaf("C", None, margin, top, LineTarget::Fill { max_lines: n }));
            }
            out
        }
    }
}

/// Metadata recorded with each sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub family: Family,
    pub seed: u64,
    pub index: u64,
    pub fonts: Vec<String>,
    pub line_count: usize,
    /// Bounding box of each label block, in the cropped image.
    pub boxes: Vec<Rect>,
    /// The corpus ran out and restarted from its beginning.
    pub wrapped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub image: GrayImage,
    pub document: Document,
    pub meta: SampleMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSample {
    pub image: GrayImage,
    pub text: String,
    pub font: String,
}

/// Random stream for sample `index`, independent of how samples are spread over workers.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Renders a single line on a tight canvas.
pub fn render_line(font: &FontSpec, text: &str, rng: &mut impl Rng) -> Result<GrayImage> {
    if text.trim().is_empty() {
        return Err(SynthError::EmptyText);
    }
    let pad = 4.0;
    let width = (font.extent(text)? + font.effective_size() * font.slant.abs().tan() + 2.0 * pad).ceil() as usize;
    let height = (font.ascent() + font.descent() + 2.0 * pad).ceil() as usize;
    let mut img = GrayImage::new(width, height, 1.0);
    font.draw(&mut img, text, pad, pad + font.ascent(), rng)?;
    Ok(img)
}

#[derive(Clone)]
pub struct Generator {
    corpus: Corpus,
    pool: FontPool,
    annotator: Arc<dyn Annotator + Send + Sync>,
    mail: MailPrior,
}

impl Generator {
    pub fn new(corpus: Corpus, pool: FontPool, annotator: Arc<dyn Annotator + Send + Sync>) -> Self {
        Self { corpus, pool, annotator, mail: MailPrior::default() }
    }

    /// Bundled corpus, built-in fonts and bundled gazetteer.
    pub fn desk() -> Result<Self> {
        Ok(Self::new(Corpus::bundled(), FontPool::builtin()?, Arc::new(Gazetteer::bundled())))
    }

    pub fn with_mail_prior(mut self, mail: MailPrior) -> Self {
        self.mail = mail;
        self
    }

    pub fn with_size_range(mut self, lo: f32, hi: f32) -> Self {
        self.pool.size_range = (lo, hi);
        self
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn pool(&self) -> &FontPool {
        &self.pool
    }

    /// Sample `index` of the stream seeded by `seed`.
    pub fn page(&self, family: Family, config: &PageConfig, seed: u64, index: u64) -> Result<SynthSample> {
        let (image, document, boxes, font, wrapped) = self.attempts(family, config, seed, index, true)?;
        let line_count = document.line_count();
        let meta = SampleMeta { family, seed, index, fonts: vec![font], line_count, boxes, wrapped };
        Ok(SynthSample { image: image.expect("rendered"), document, meta })
    }

    /// The label of [`Generator::page`] without rasterizing it.
    pub fn document(&self, family: Family, config: &PageConfig, seed: u64, index: u64) -> Result<Document> {
        Ok(self.attempts(family, config, seed, index, false)?.1)
    }

    fn attempts(&self, family: Family, config: &PageConfig, seed: u64, index: u64, render: bool) -> Result<Attempt> {
        if config.l_max == 0 {
            return Err(SynthError::Config("l_max must be at least 1".into()));
        }
        let mut rng = sample_rng(seed, index);
        let mut last = None;
        for _ in 0..=config.retries {
            match self.try_page(family, config, &mut rng, render) {
                Err(e @ SynthError::Overflow(_)) => last = Some(e),
                other => return other,
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Samples `0..count`, evaluated under `exec`.
    pub fn pages(
        &self,
        family: Family,
        config: &PageConfig,
        seed: u64,
        count: usize,
        exec: Exec,
    ) -> Result<Vec<SynthSample>> {
        exec.map_range(count, |i| self.page(family, config, seed, i as u64)).into_iter().collect()
    }

    fn try_page(&self, family: Family, config: &PageConfig, rng: &mut ChaCha8Rng, render: bool) -> Result<Attempt> {
        let font = self.pool.sample_font(rng)?;
        let lh = font.line_height();
        let planned = plan(family, config, &self.mail, lh, rng);
        // text, in reading order, under the line budget
        let start = rng.gen_range(0..self.corpus.words().len());
        let mut cursor = WordCursor::new(&self.corpus, start);
        let mut budget = config.l_max;
        let mut lines: Vec<Vec<String>> = Vec::with_capacity(planned.len());
        for p in &planned {
            let l = if p.container { Vec::new() } else { fill_block(&mut cursor, &p.target, &font, p.w, budget)? };
            budget -= l.len();
            lines.push(l);
        }
        let wrapped = cursor.wrapped(start);
        let keep = kept_blocks(&planned, &lines);
        // geometry
        let mut top = vec![0.0f32; planned.len()];
        let mut bottom = vec![0.0f32; planned.len()];
        let gap = 0.4 * lh;
        for i in 0..planned.len() {
            if !keep[i] {
                continue;
            }
            top[i] = match &planned[i].top {
                Top::At(y) => *y,
                Top::Beside(j, lines_down) => top[*j] + lines_down * lh,
                Top::After(list) => {
                    let below = list.iter().filter(|&&j| keep[j]).map(|&j| bottom[j] + gap).fold(f32::MIN, f32::max);
                    if below == f32::MIN {
                        inherited_top(&planned, &top, &keep, i)
                    } else {
                        below
                    }
                }
            };
            bottom[i] = top[i] + lines[i].len() as f32 * lh;
            let mut a = planned[i].parent;
            while let Some(p) = a {
                bottom[p] = bottom[p].max(bottom[i]);
                a = planned[p].parent;
            }
        }
        if let Some(i) = (0..planned.len()).find(|&i| keep[i] && bottom[i] > config.height as f32) {
            return Err(SynthError::Overflow(format!("block {} ends below the page", planned[i].class)));
        }
        // rendering; the label below draws nothing from `rng`
        let image = render.then(|| -> Result<GrayImage> {
            let mut image = GrayImage::new(config.width, config.height, 1.0);
            let mut last_ink = 0.0f32;
            for i in (0..planned.len()).filter(|&i| keep[i]) {
                for (k, line) in lines[i].iter().enumerate() {
                    let indent = if font.style == Style::Handwritten { rng.gen_range(0.0..3.0) } else { 0.0 };
                    let baseline = top[i] + k as f32 * lh + font.effective_size();
                    font.draw(&mut image, line, planned[i].x + indent, baseline, rng)?;
                    last_ink = last_ink.max(baseline + font.descent());
                }
            }
            let rows = ((last_ink + 2.0).ceil() as usize).clamp(1, config.height);
            Ok(image.crop_rows(rows))
        });
        let image = image.transpose()?;
        // label
        let mut index_of = vec![None; planned.len()];
        let mut blocks = Vec::new();
        let mut boxes = Vec::new();
        for i in (0..planned.len()).filter(|&i| keep[i]) {
            index_of[i] = Some(blocks.len());
            let parent = planned[i].parent.map(|p| index_of[p].expect("parents precede children"));
            blocks.push(Block::new(planned[i].class.clone(), parent, lines[i].clone()));
            boxes.push(Rect { x: planned[i].x, y: top[i], w: planned[i].w, h: bottom[i] - top[i] });
        }
        let mut document = Document { blocks, entities: Vec::new() };
        if config.annotate && family.annotates() {
            for (b, block) in document.blocks.iter().enumerate() {
                let text = block.text();
                for s in self.annotator.annotate(&text)? {
                    document.entities.push(Entity { block: b, start: s.start, end: s.end, category: s.category });
                }
            }
        }
        document.validate()?;
        Ok((image, document, boxes, font.name.clone(), wrapped))
    }

    /// A line of 1 to `max_words` corpus words no wider than `max_width` pixels.
    pub fn line(&self, max_words: usize, max_width: f32, seed: u64, index: u64) -> Result<LineSample> {
        if max_words == 0 {
            return Err(SynthError::Config("max_words must be at least 1".into()));
        }
        let mut rng = sample_rng(seed, index);
        let font = self.pool.sample_font(&mut rng)?;
        let mut cursor = WordCursor::random(&self.corpus, &mut rng);
        let n = rng.gen_range(1..=max_words);
        let mut words: Vec<&str> = (0..n).map(|_| cursor.next_word()).collect();
        while words.len() > 1 && font.extent(&words.join(" "))? > max_width {
            words.pop();
        }
        let text = words.join(" ");
        let image = render_line(&font, &text, &mut rng)?;
        Ok(LineSample { image, text, font: font.name })
    }
}

type Attempt = (Option<GrayImage>, Document, Vec<Rect>, String, bool);

/// Leaves with lines, and containers with a kept descendant.
fn kept_blocks(planned: &[Planned], lines: &[Vec<String>]) -> Vec<bool> {
    let mut keep: Vec<bool> = lines.iter().map(|l| !l.is_empty()).collect();
    for i in (0..planned.len()).rev() {
        if keep[i] {
            let mut a = planned[i].parent;
            while let Some(p) = a {
                keep[p] = true;
                a = planned[p].parent;
            }
        }
    }
    keep
}

/// Top for an `After` block whose predecessors were all dropped: the first kept top, else the page margin.
fn inherited_top(planned: &[Planned], top: &[f32], keep: &[bool], i: usize) -> f32 {
    (0..i).find(|&j| keep[j]).map_or_else(
        || planned.iter().find_map(|p| if let Top::At(y) = p.top { Some(y) } else { None }).unwrap_or(0.0),
        |j| top[j],
    )
}
