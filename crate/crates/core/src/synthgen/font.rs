//! Parametric fonts: stroke glyphs (built-in or traced from a bitmap font)
//! drawn with slant, thickness, baseline jitter and spacing.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::glyphs::{self, Glyph, Point, BASELINE, GRID_HEIGHT, SPACE_ADVANCE};
use super::{Result, SynthError};
use crate::image::GrayImage;

/// Phrase measured to normalize every font to a common width.
pub const REFERENCE_PHRASE: &str = "The quick brown fox jumps over the lazy dog";
/// Target width of [`REFERENCE_PHRASE`] in units of the nominal size.
pub const REFERENCE_WIDTH_EMS: f32 = 22.0;
/// Accepted relative deviation from the reference width after normalization.
pub const WIDTH_TOLERANCE: f32 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Style {
    Handwritten,
    Printed,
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Handwritten => "handwritten",
            Style::Printed => "printed",
        })
    }
}

/// Glyphs traced from a bitmap font file.
#[derive(Clone, Debug, PartialEq)]
pub struct BitmapFont {
    glyphs: HashMap<char, Glyph>,
}

impl BitmapFont {
    /// Text format:
    ///
    /// ```text
    /// height 8
    /// baseline 6
    /// glyph U+0041
    /// ..#..
    /// .#.#.
    /// ```
    ///
    /// `height` rows follow each `glyph` line, `#` marks ink. `baseline` is the
    /// row index of the lowest non-descending row. Lines starting with `%` are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| SynthError::Font(format!("bitmap font line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('%'));
        let mut header = |key: &str| -> Result<usize> {
            let (i, l) = lines.next().ok_or_else(|| err(0, "missing header"))?;
            l.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| err(i, &format!("expected `{key} <n>`")))
        };
        let height = header("height")?;
        let baseline = header("baseline")?;
        if height == 0 || baseline >= height {
            return Err(err(1, "baseline must be a row inside the cell"));
        }
        let mut glyphs = HashMap::new();
        while let Some((i, line)) = lines.next() {
            let code = line
                .strip_prefix("glyph U+")
                .and_then(|h| u32::from_str_radix(h.trim(), 16).ok())
                .and_then(char::from_u32)
                .ok_or_else(|| err(i, "expected `glyph U+XXXX`"))?;
            let mut rows = Vec::with_capacity(height);
            for _ in 0..height {
                let (j, row) = lines.next().ok_or_else(|| err(i, "truncated glyph"))?;
                if !row.chars().all(|c| c == '#' || c == '.') {
                    return Err(err(j, "glyph rows use only `#` and `.`"));
                }
                rows.push(row.chars().map(|c| c == '#').collect::<Vec<bool>>());
            }
            glyphs.insert(code, trace_bitmap(&rows, baseline));
        }
        if glyphs.is_empty() {
            return Err(SynthError::Font("bitmap font has no glyphs".into()));
        }
        Ok(Self { glyphs })
    }

    pub fn glyph(&self, c: char) -> Option<&Glyph> {
        self.glyphs.get(&c)
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }
}

/// Strokes joining neighbouring ink pixels; diagonals only where no
/// orthogonal path already connects the pair. Isolated pixels become dots.
fn trace_bitmap(rows: &[Vec<bool>], baseline: usize) -> Glyph {
    let unit = (GRID_HEIGHT - BASELINE) / (baseline as f32 + 1.0);
    let on = |r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && rows.get(r as usize).and_then(|row| row.get(c as usize)).copied().unwrap_or(false)
    };
    let pt = |r: isize, c: isize| -> Point { (c as f32 * unit, BASELINE + (baseline as f32 - r as f32) * unit) };
    let mut strokes = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !v {
                continue;
            }
            let (r, c) = (r as isize, c as isize);
            let mut linked = false;
            for (dr, dc) in [(0, 1), (1, 0), (1, 1), (1, -1)] {
                if !on(r + dr, c + dc) {
                    continue;
                }
                let diagonal = dr != 0 && dc != 0;
                if diagonal && (on(r + dr, c) || on(r, c + dc)) {
                    continue;
                }
                strokes.push(vec![pt(r, c), pt(r + dr, c + dc)]);
                linked = true;
            }
            let touched = [(-1, 0), (0, -1), (-1, -1), (-1, 1)].iter().any(|&(dr, dc)| on(r + dr, c + dc));
            if !linked && !touched {
                strokes.push(vec![pt(r, c)]);
            }
        }
    }
    Glyph::from_strokes(strokes)
}

#[derive(Clone, Debug, PartialEq)]
pub enum GlyphSource {
    Stroke,
    Bitmap(Arc<BitmapFont>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FontSpec {
    pub name: String,
    pub source: GlyphSource,
    pub style: Style,
    /// Height of the glyph grid, descender to cap line, in pixels.
    pub size: f32,
    /// Shear in radians; positive leans right.
    pub slant: f32,
    pub thickness: f32,
    /// Amplitude of per-glyph baseline shifts, pixels.
    pub jitter: f32,
    /// Extra space after each glyph, pixels.
    pub spacing: f32,
    /// Horizontal scale of glyph shapes; 1 is the design width.
    pub stretch: f32,
    /// Multiplies size and spacing at render time.
    pub factor: f32,
}

/// Polylines in pixel coordinates, origin at the start of the baseline, y down.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LineStrokes {
    pub strokes: Vec<Vec<Point>>,
    pub advance: f32,
}

impl FontSpec {
    /// Stroke font with neutral parameters.
    pub fn builtin(name: impl Into<String>, style: Style, size: f32) -> Self {
        Self {
            name: name.into(),
            source: GlyphSource::Stroke,
            style,
            size,
            slant: 0.0,
            thickness: 1.5,
            jitter: 0.0,
            spacing: 1.0,
            stretch: 1.0,
            factor: 1.0,
        }
    }

    pub fn effective_size(&self) -> f32 {
        self.size * self.factor
    }

    /// Distance between consecutive baselines.
    pub fn line_height(&self) -> f32 {
        1.45 * self.effective_size()
    }

    /// Pixels above the baseline reserved for caps and accents.
    pub fn ascent(&self) -> f32 {
        (9.8 - BASELINE) / GRID_HEIGHT * self.effective_size() + self.jitter + self.thickness
    }

    pub fn descent(&self) -> f32 {
        BASELINE / GRID_HEIGHT * self.effective_size() + self.jitter + self.thickness
    }

    fn glyph(&self, c: char) -> Result<&Glyph> {
        let g = match &self.source {
            GlyphSource::Stroke => glyphs::builtin().get(&c),
            GlyphSource::Bitmap(font) => font.glyph(c),
        };
        g.ok_or(SynthError::MissingGlyph { ch: c, font: self.name.clone() })
    }

    pub fn supports(&self, c: char) -> bool {
        c == ' ' || self.glyph(c).is_ok()
    }

    /// Lays out `text`; `rng` drives baseline jitter. Handwritten styles are smoothed.
    pub fn layout(&self, text: &str, rng: &mut impl Rng) -> Result<LineStrokes> {
        let unit = self.effective_size() / GRID_HEIGHT;
        let xunit = unit * self.stretch;
        let spacing = self.spacing * self.factor;
        let shear = self.slant.tan();
        let mut out = LineStrokes::default();
        let mut pen = 0.0f32;
        for c in text.chars() {
            if c == ' ' {
                pen += SPACE_ADVANCE * xunit + spacing;
                continue;
            }
            let g = self.glyph(c)?;
            let dy = if self.jitter > 0.0 { rng.gen_range(-self.jitter..=self.jitter) } else { 0.0 };
            for stroke in &g.strokes {
                let mut pts: Vec<Point> = stroke
                    .iter()
                    .map(|&(x, y)| {
                        let h = (y - BASELINE) * unit;
                        (pen + x * xunit + shear * h, -h + dy)
                    })
                    .collect();
                if self.style == Style::Handwritten {
                    pts = chaikin(&pts, 2);
                }
                out.strokes.push(pts);
            }
            pen += g.advance * xunit + spacing;
        }
        out.advance = pen;
        Ok(out)
    }

    /// Draws `text` with its baseline starting at `(x, y)`.
    pub fn draw(&self, img: &mut GrayImage, text: &str, x: f32, y: f32, rng: &mut impl Rng) -> Result<f32> {
        let line = self.layout(text, rng)?;
        for s in &line.strokes {
            draw_polyline(img, s, x, y, self.thickness);
        }
        Ok(line.advance)
    }

    /// Ink width of `text` rendered on a scratch canvas with a fixed seed.
    pub fn measure(&self, text: &str) -> Result<f32> {
        let line = self.layout(text, &mut ChaCha8Rng::seed_from_u64(0))?;
        let pad = (self.thickness + self.effective_size()).ceil() as usize;
        let (w, h) = (line.advance.ceil() as usize + 2 * pad, (2.0 * self.effective_size()) as usize + 2 * pad);
        let mut img = GrayImage::new(w.max(1), h.max(1), 1.0);
        let baseline = pad as f32 + 1.25 * self.effective_size();
        for s in &line.strokes {
            draw_polyline(&mut img, s, pad as f32, baseline, self.thickness);
        }
        Ok(img.ink_columns(0.5).map_or(0.0, |(a, b)| (b - a + 1) as f32))
    }

    /// Ink width of `text` from stroke geometry, without rasterizing.
    pub fn extent(&self, text: &str) -> Result<f32> {
        let line = self.layout(text, &mut ChaCha8Rng::seed_from_u64(0))?;
        let (lo, hi) = line.strokes.iter().flatten().fold((f32::MAX, f32::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
        Ok(if hi >= lo { hi - lo + self.thickness } else { 0.0 })
    }

    /// Width the reference phrase should have at this font's nominal size.
    pub fn reference_width(&self) -> f32 {
        REFERENCE_WIDTH_EMS * self.size
    }
}

/// Sets the factor so the reference phrase renders at the reference width,
/// refining the estimate by re-measuring.
pub fn normalize_font(font: &FontSpec) -> Result<FontSpec> {
    let target = font.reference_width();
    let mut out = FontSpec { factor: 1.0, ..font.clone() };
    for _ in 0..4 {
        let measured = out.measure(REFERENCE_PHRASE)?;
        if measured <= 0.0 {
            return Err(SynthError::Font(format!("font {} renders the reference phrase with zero width", font.name)));
        }
        out.factor *= target / measured;
        if !(out.factor.is_finite() && out.factor > 0.0) {
            return Err(SynthError::Font(format!("font {} cannot be normalized", font.name)));
        }
        if (measured - target).abs() <= 0.01 * target {
            break;
        }
    }
    Ok(out)
}

/// Corner cutting; keeps end points.
fn chaikin(pts: &[Point], rounds: usize) -> Vec<Point> {
    let mut cur = pts.to_vec();
    for _ in 0..rounds {
        if cur.len() < 3 {
            return cur;
        }
        let mut next = vec![cur[0]];
        for w in cur.windows(2) {
            let (a, b) = (w[0], w[1]);
            next.push((0.75 * a.0 + 0.25 * b.0, 0.75 * a.1 + 0.25 * b.1));
            next.push((0.25 * a.0 + 0.75 * b.0, 0.25 * a.1 + 0.75 * b.1));
        }
        next.push(*cur.last().expect("non-empty"));
        cur = next;
    }
    cur
}

/// Anti-aliased polyline of the given thickness; a single point is a dot.
pub fn draw_polyline(img: &mut GrayImage, pts: &[Point], ox: f32, oy: f32, thickness: f32) {
    let r = thickness / 2.0;
    let shift = |p: &Point| (p.0 + ox, p.1 + oy);
    match pts {
        [] => {}
        [p] => {
            let c = shift(p);
            draw_segment(img, c, c, r * 1.3);
        }
        _ => pts.windows(2).for_each(|w| draw_segment(img, shift(&w[0]), shift(&w[1]), r)),
    }
}

fn draw_segment(img: &mut GrayImage, a: Point, b: Point, r: f32) {
    let pad = r + 1.0;
    let x0 = (a.0.min(b.0) - pad).floor().max(0.0) as usize;
    let y0 = (a.1.min(b.1) - pad).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + pad).ceil() as isize).min(img.width() as isize - 1);
    let y1 = ((a.1.max(b.1) + pad).ceil() as isize).min(img.height() as isize - 1);
    if x1 < 0 || y1 < 0 {
        return;
    }
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            let t = if len2 > 0.0 { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
            let d = (qx * qx + qy * qy).sqrt();
            let coverage = r + 0.5 - d;
            if coverage > 0.0 {
                img.ink(x, y, coverage);
            }
        }
    }
}

/// Fonts to draw from, split by style, plus per-draw jitter ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct FontPool {
    pub handwritten: Vec<FontSpec>,
    pub printed: Vec<FontSpec>,
    pub handwritten_prob: f64,
    /// Nominal size range in pixels.
    pub size_range: (f32, f32),
    pub slant_jitter: f32,
    pub thickness_jitter: f32,
}

impl FontPool {
    /// Stroke-font variants, each normalized at a 16 px nominal size.
    pub fn builtin() -> Result<Self> {
        let variant = |name: &str, style, slant, thickness, jitter, spacing| {
            normalize_font(&FontSpec { slant, thickness, jitter, spacing, ..FontSpec::builtin(name, style, 16.0) })
        };
        use Style::*;
        Ok(Self {
            handwritten: vec![
                variant("cursive-lean", Handwritten, 0.30, 1.6, 0.8, 0.5)?,
                variant("cursive-upright", Handwritten, 0.05, 1.9, 0.6, 1.5)?,
                variant("scrawl", Handwritten, 0.20, 1.3, 1.2, 0.0)?,
                variant("round-hand", Handwritten, 0.15, 2.2, 0.4, 2.0)?,
            ],
            printed: vec![
                variant("plain", Printed, 0.0, 1.2, 0.0, 1.0)?,
                variant("bold", Printed, 0.0, 2.0, 0.0, 1.5)?,
            ],
            handwritten_prob: 0.8,
            size_range: (14.0, 22.0),
            slant_jitter: 0.05,
            thickness_jitter: 0.2,
        })
    }

    pub fn with_fonts(mut self, handwritten: Vec<FontSpec>, printed: Vec<FontSpec>) -> Self {
        self.handwritten = handwritten;
        self.printed = printed;
        self
    }

    /// Draws a style with the configured probability, a font of that style
    /// uniformly, then jitters size, slant and thickness.
    pub fn sample_font(&self, rng: &mut impl Rng) -> Result<FontSpec> {
        if self.handwritten.is_empty() || self.printed.is_empty() {
            return Err(SynthError::Config("font pool needs at least one handwritten and one printed font".into()));
        }
        let list = if rng.gen_bool(self.handwritten_prob) { &self.handwritten } else { &self.printed };
        let mut f = list[rng.gen_range(0..list.len())].clone();
        let (lo, hi) = self.size_range;
        f.size = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        if self.slant_jitter > 0.0 && f.style == Style::Handwritten {
            f.slant += rng.gen_range(-self.slant_jitter..=self.slant_jitter);
        }
        if self.thickness_jitter > 0.0 {
            f.thickness = (f.thickness + rng.gen_range(-self.thickness_jitter..=self.thickness_jitter)).max(0.8);
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn width_error(f: &FontSpec) -> f32 {
        (f.measure(REFERENCE_PHRASE).unwrap() - f.reference_width()).abs() / f.reference_width()
    }

    #[test]
    fn normalized_width_hits_reference() {
        let raw = FontSpec::builtin("t", Style::Printed, 16.0);
        assert!(width_error(&raw) < WIDTH_TOLERANCE);
        let f = normalize_font(&raw).unwrap();
        assert!((f.factor - 1.0).abs() < 0.05, "{}", f.factor);
        assert!(width_error(&f) < WIDTH_TOLERANCE);
        // already normalized: factor stays put
        let again = normalize_font(&f).unwrap();
        assert!((again.factor - f.factor).abs() / f.factor < 0.02);
    }

    #[test]
    fn twice_as_wide_gets_half_factor() {
        let plain = FontSpec::builtin("t", Style::Printed, 16.0);
        let wide = FontSpec { stretch: 2.0, spacing: 2.0 * plain.spacing, ..plain };
        let n = normalize_font(&wide).unwrap();
        assert!((n.factor - 0.5).abs() < 0.05, "{}", n.factor);
        assert!(width_error(&n) < WIDTH_TOLERANCE);
    }

    #[test]
    fn pool_fonts_agree_in_width() {
        let pool = FontPool::builtin().unwrap();
        let widths: Vec<f32> =
            pool.handwritten.iter().chain(&pool.printed).map(|f| f.measure(REFERENCE_PHRASE).unwrap()).collect();
        let (lo, hi) = widths.iter().fold((f32::MAX, 0.0f32), |(a, b), &w| (a.min(w), b.max(w)));
        assert!(hi / lo < 1.0 + WIDTH_TOLERANCE, "{widths:?}");
    }

    #[test]
    fn missing_glyph_is_an_error() {
        let f = FontSpec::builtin("t", Style::Printed, 16.0);
        assert!(matches!(
            f.layout("a\u{4e00}", &mut ChaCha8Rng::seed_from_u64(0)),
            Err(SynthError::MissingGlyph { ch: '\u{4e00}', .. })
        ));
    }

    #[test]
    fn bitmap_font_traces_and_renders() {
        let text = "height 3\nbaseline 2\nglyph U+0061\n#.#\n.#.\n#.#\nglyph U+0062\n###\n...\n.#.\n";
        let font = BitmapFont::parse(text).unwrap();
        assert_eq!(font.len(), 2);
        let x = font.glyph('a').unwrap();
        // four diagonals, no orthogonal links
        assert_eq!(x.strokes.len(), 4);
        let b = font.glyph('b').unwrap();
        // two horizontal links and an isolated dot
        assert_eq!(b.strokes.iter().filter(|s| s.len() == 1).count(), 1);
        let spec =
            FontSpec { source: GlyphSource::Bitmap(Arc::new(font)), ..FontSpec::builtin("bm", Style::Printed, 16.0) };
        assert!(spec.measure("ab").unwrap() > 0.0);
        assert!(BitmapFont::parse("height 3\nbaseline 5\n").is_err());
        assert!(BitmapFont::parse("height 2\nbaseline 1\nglyph U+0061\n#x\n..\n").is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_covers_both_styles() {
        let pool = FontPool::builtin().unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| pool.sample_font(&mut rng).unwrap()).collect::<Vec<_>>()
        };
        let a = draw(3);
        assert_eq!(a, draw(3));
        assert!(a.iter().any(|f| f.style == Style::Printed) && a.iter().any(|f| f.style == Style::Handwritten));
        let empty = pool.clone().with_fonts(pool.handwritten.clone(), vec![]);
        assert!(empty.sample_font(&mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
