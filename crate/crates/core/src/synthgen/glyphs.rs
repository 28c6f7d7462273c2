//! Built-in stroke glyphs. Each glyph is a list of polylines on a small grid:
//! x grows right from 0, y grows up with the descender at 0, the baseline at 2,
//! the x-height at 5 and the cap height at 8. A stroke is written as a run of
//! two-digit points (`x` then `y`); strokes are separated by spaces.

use std::collections::HashMap;
use std::sync::OnceLock;

pub type Point = (f32, f32);

#[derive(Clone, Debug, PartialEq)]
pub struct Glyph {
    pub strokes: Vec<Vec<Point>>,
    /// Horizontal advance in grid units, including the built-in gap.
    pub advance: f32,
}

impl Glyph {
    pub(crate) fn from_strokes(strokes: Vec<Vec<Point>>) -> Self {
        let max_x = strokes.iter().flatten().map(|p| p.0).fold(0.0f32, f32::max);
        Self { strokes, advance: max_x + 1.0 }
    }

    fn shifted(&self, dx: f32) -> Vec<Vec<Point>> {
        self.strokes.iter().map(|s| s.iter().map(|&(x, y)| (x + dx, y)).collect()).collect()
    }
}

pub const SPACE_ADVANCE: f32 = 2.5;
pub const BASELINE: f32 = 2.0;
pub const GRID_HEIGHT: f32 = 8.0;

const TABLE: &[(char, &str)] = &[
    ('A', "022842 1434"),
    ('B', "0208 083847463505 3544433202"),
    ('C', "4738180703123243"),
    ('D', "02082846442202"),
    ('E', "48080242 0535"),
    ('F', "480802 0535"),
    ('G', "47381807031232434525"),
    ('H', "0208 4842 0545"),
    ('I', "1838 2822 1232"),
    ('J', "4843321203"),
    ('K', "0802 4804 1542"),
    ('L', "080242"),
    ('M', "0208254842"),
    ('N', "02084248"),
    ('O', "183847433212030718"),
    ('P', "02083847463505"),
    ('Q', "183847433212030718 2441"),
    ('R', "02083847463505 2542"),
    ('S', "473818070615354443321203"),
    ('T', "0848 2822"),
    ('U', "080312324348"),
    ('V', "082248"),
    ('W', "0812253248"),
    ('X', "0842 0248"),
    ('Y', "0825 4825 2522"),
    ('Z', "08480242"),
    ('a', "3425150403122233 3532"),
    ('b', "0802 0415253433221203"),
    ('c', "3525150403122232"),
    ('d', "3832 3425150403122233"),
    ('e', "0434251504031232"),
    ('f', "37281712 0525"),
    ('g', "3425150403122233 35312000"),
    ('h', "0802 0415253432"),
    ('i', "0502 07"),
    ('j', "151100 17"),
    ('k', "0802 3503 1432"),
    ('l', "0802"),
    ('m', "0502 04152422 24354442"),
    ('n', "0502 0415253432"),
    ('o', "152534332212030415"),
    ('p', "0500 0415253433221203"),
    ('q', "3530 3425150403122233"),
    ('r', "0502 04152534"),
    ('s', "351504332202"),
    ('t', "17132232 0525"),
    ('u', "0503122233 3532"),
    ('v', "052235"),
    ('w', "0512243245"),
    ('x', "0532 0235"),
    ('y', "0522 3510"),
    ('z', "05350232"),
    ('ı', "0502"),
    ('0', "182837332212030718"),
    ('1', "071812 0222"),
    ('2', "07182837360232"),
    ('3', "0838152534332202"),
    ('4', "22280434"),
    ('5', "3808052534332202"),
    ('6', "38180703122233342505"),
    ('7', "083812"),
    ('8', "15060718283736251504031222333425"),
    ('9', "3515060718283732"),
    ('.', "02"),
    (',', "1200"),
    (';', "14 1200"),
    (':', "02 04"),
    ('!', "0804 02"),
    ('?', "07182837361514 12"),
    ('\'', "0807"),
    ('"', "0807 1817"),
    ('-', "0424"),
    ('(', "18070312"),
    (')', "08171302"),
    ('/', "0238"),
    ('&', "32060718270403122234"),
    ('+', "0424 1315"),
    ('=', "0323 0525"),
    ('%', "0238 07 33"),
    ('[', "18080212"),
    (']', "08181202"),
    ('_', "0030"),
    ('|', "0800"),
    ('\\', "0832"),
    ('<', "360432"),
    ('>', "063402"),
    ('^', "061826"),
    ('~', "05162534"),
    ('`', "0817"),
    ('*', "1713 0624 0426"),
    ('#', "1217 3237 0444 0646"),
    ('$', "473818070615354443321203 2921"),
    ('{', "28171605141322"),
    ('}', "08171625141302"),
    ('@', "33351513334447381807031232"),
    ('Þ', "0208 073746453404"),
    ('þ', "0800 0415253433221203"),
    ('ß', "02071828372534332212"),
];

#[derive(Clone, Copy)]
enum Accent {
    Acute,
    Grave,
    Circumflex,
    Tilde,
    Diaeresis,
    Ring,
    Cedilla,
    Slash,
    Bar,
}

const COMPOSED: &[(char, char, Accent)] = {
    use Accent::*;
    &[
        ('À', 'A', Grave),
        ('Á', 'A', Acute),
        ('Â', 'A', Circumflex),
        ('Ã', 'A', Tilde),
        ('Ä', 'A', Diaeresis),
        ('Å', 'A', Ring),
        ('Ç', 'C', Cedilla),
        ('È', 'E', Grave),
        ('É', 'E', Acute),
        ('Ê', 'E', Circumflex),
        ('Ë', 'E', Diaeresis),
        ('Ì', 'I', Grave),
        ('Í', 'I', Acute),
        ('Î', 'I', Circumflex),
        ('Ï', 'I', Diaeresis),
        ('Ð', 'D', Bar),
        ('Ñ', 'N', Tilde),
        ('Ò', 'O', Grave),
        ('Ó', 'O', Acute),
        ('Ô', 'O', Circumflex),
        ('Õ', 'O', Tilde),
        ('Ö', 'O', Diaeresis),
        ('Ø', 'O', Slash),
        ('Ù', 'U', Grave),
        ('Ú', 'U', Acute),
        ('Û', 'U', Circumflex),
        ('Ü', 'U', Diaeresis),
        ('Ý', 'Y', Acute),
        ('à', 'a', Grave),
        ('á', 'a', Acute),
        ('â', 'a', Circumflex),
        ('ã', 'a', Tilde),
        ('ä', 'a', Diaeresis),
        ('å', 'a', Ring),
        ('ç', 'c', Cedilla),
        ('è', 'e', Grave),
        ('é', 'e', Acute),
        ('ê', 'e', Circumflex),
        ('ë', 'e', Diaeresis),
        ('ì', 'ı', Grave),
        ('í', 'ı', Acute),
        ('î', 'ı', Circumflex),
        ('ï', 'ı', Diaeresis),
        ('ð', 'o', Bar),
        ('ñ', 'n', Tilde),
        ('ò', 'o', Grave),
        ('ó', 'o', Acute),
        ('ô', 'o', Circumflex),
        ('õ', 'o', Tilde),
        ('ö', 'o', Diaeresis),
        ('ø', 'o', Slash),
        ('ù', 'u', Grave),
        ('ú', 'u', Acute),
        ('û', 'u', Circumflex),
        ('ü', 'u', Diaeresis),
        ('ý', 'y', Acute),
        ('ÿ', 'y', Diaeresis),
    ]
};

fn parse_strokes(spec: &str) -> Vec<Vec<Point>> {
    spec.split_whitespace()
        .map(|s| {
            let d: Vec<f32> = s.bytes().map(|b| f32::from(b - b'0')).collect();
            d.chunks(2).map(|p| (p[0], p[1])).collect()
        })
        .collect()
}

fn accent_strokes(accent: Accent, base: &Glyph, upper: bool) -> Vec<Vec<Point>> {
    let cx = (base.advance - 1.0) / 2.0;
    let top = if upper { 8.6 } else { 5.8 };
    match accent {
        Accent::Acute => vec![vec![(cx - 0.4, top), (cx + 0.6, top + 1.0)]],
        Accent::Grave => vec![vec![(cx - 0.6, top + 1.0), (cx + 0.4, top)]],
        Accent::Circumflex => vec![vec![(cx - 1.0, top), (cx, top + 1.0), (cx + 1.0, top)]],
        Accent::Tilde => vec![vec![(cx - 1.2, top), (cx - 0.4, top + 0.8), (cx + 0.4, top), (cx + 1.2, top + 0.8)]],
        Accent::Diaeresis => vec![vec![(cx - 0.8, top + 0.3)], vec![(cx + 0.8, top + 0.3)]],
        Accent::Ring => {
            vec![vec![(cx - 0.5, top), (cx + 0.5, top), (cx + 0.5, top + 1.0), (cx - 0.5, top + 1.0), (cx - 0.5, top)]]
        }
        Accent::Cedilla => vec![vec![(cx, 2.0), (cx, 1.4), (cx + 0.6, 1.0), (cx - 0.4, 0.4)]],
        Accent::Slash => {
            let h = if upper { 8.5 } else { 5.5 };
            vec![vec![(-0.2, 1.5), (base.advance - 0.8, h)]]
        }
        Accent::Bar => {
            let y = if upper { 5.0 } else { 7.0 };
            if upper {
                vec![vec![(-0.5, y), (1.5, y)]]
            } else {
                vec![vec![(1.0, 8.0), (3.0, 5.0)], vec![(1.0, y), (3.0, y + 0.5)]]
            }
        }
    }
}

fn ligature(a: &Glyph, b: &Glyph, overlap: f32) -> Glyph {
    let mut strokes = a.strokes.clone();
    strokes.extend(b.shifted(a.advance - 1.0 - overlap));
    Glyph::from_strokes(strokes)
}

/// All built-in glyphs by character.
pub fn builtin() -> &'static HashMap<char, Glyph> {
    static GLYPHS: OnceLock<HashMap<char, Glyph>> = OnceLock::new();
    GLYPHS.get_or_init(|| {
        let mut map: HashMap<char, Glyph> =
            TABLE.iter().map(|&(c, s)| (c, Glyph::from_strokes(parse_strokes(s)))).collect();
        for &(c, base, accent) in COMPOSED {
            let b = map[&base].clone();
            let mut strokes = b.strokes.clone();
            strokes.extend(accent_strokes(accent, &b, base.is_uppercase()));
            map.insert(c, Glyph { strokes, advance: b.advance });
        }
        let pairs = [('Æ', 'A', 'E', 1.0), ('æ', 'a', 'e', 0.0)];
        for (c, a, b, overlap) in pairs {
            let g = ligature(&map[&a], &map[&b], overlap);
            map.insert(c, g);
        }
        map.remove(&'ı');
        map
    })
}
