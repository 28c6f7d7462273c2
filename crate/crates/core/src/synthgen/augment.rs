//! Image augmentations, each individually switchable. Output stays in `[0, 1]`.

use rand::Rng;

use crate::image::GrayImage;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    pub enabled: bool,
    /// Probability of applying each enabled transform.
    pub prob: f64,
    /// Downscale factor range, then resize to the original size times a factor in `final_scale`.
    pub resolution: Option<(f32, f32)>,
    pub final_scale: (f32, f32),
    /// Maximum displacement in pixels of the smooth random field.
    pub elastic: Option<f32>,
    /// Maximum absolute brightness shift.
    pub brightness: Option<f32>,
    /// Contrast factor range.
    pub contrast: Option<(f32, f32)>,
    /// Thin or thicken strokes by one pixel.
    pub morphology: bool,
    /// Maximum rotation in degrees.
    pub rotation: Option<f32>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            prob: 0.5,
            resolution: Some((0.6, 1.0)),
            final_scale: (0.9, 1.1),
            elastic: Some(1.5),
            brightness: Some(0.1),
            contrast: Some((0.7, 1.2)),
            morphology: true,
            rotation: Some(3.0),
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

/// Applies a random subset of the enabled transforms.
pub fn augment(img: &GrayImage, rng: &mut impl Rng, policy: &AugmentPolicy) -> GrayImage {
    if !policy.enabled {
        return img.clone();
    }
    let mut out = img.clone();
    let roll = |rng: &mut _| rand::Rng::gen_bool(rng, policy.prob);
    if let Some((lo, hi)) = policy.resolution {
        if roll(rng) {
            let down = rng.gen_range(lo..=hi);
            let (fl, fh) = policy.final_scale;
            let up = if fh > fl { rng.gen_range(fl..=fh) } else { fl };
            out = resolution_jitter(&out, down, up);
        }
    }
    if let Some(amp) = policy.elastic {
        if roll(rng) {
            out = elastic(&out, amp, rng);
        }
    }
    if policy.morphology && roll(rng) {
        out = if rng.gen_bool(0.5) { thicken(&out) } else { thin(&out) };
    }
    if let Some(deg) = policy.rotation {
        if roll(rng) {
            out = rotate(&out, rng.gen_range(-deg..=deg));
        }
    }
    let b = match policy.brightness {
        Some(m) if roll(rng) => rng.gen_range(-m..=m),
        _ => 0.0,
    };
    let c = match policy.contrast {
        Some((lo, hi)) if roll(rng) => rng.gen_range(lo..=hi),
        _ => 1.0,
    };
    if b != 0.0 || c != 1.0 {
        out = adjust(&out, b, c);
    }
    out
}

/// Output shape after resolution jitter with final factor `up`.
pub fn jitter_shape(width: usize, height: usize, up: f32) -> (usize, usize) {
    (((width as f32 * up).round() as usize).max(1), ((height as f32 * up).round() as usize).max(1))
}

/// Downscale by `down`, then resize to the original size times `up`.
pub fn resolution_jitter(img: &GrayImage, down: f32, up: f32) -> GrayImage {
    let (w, h) = jitter_shape(img.width(), img.height(), down);
    let (fw, fh) = jitter_shape(img.width(), img.height(), up);
    img.resize(w, h).resize(fw, fh)
}

/// `(v - 0.5) * contrast + 0.5 + brightness`, clamped.
pub fn adjust(img: &GrayImage, brightness: f32, contrast: f32) -> GrayImage {
    let mut out = img.clone();
    for v in out.pixels_mut() {
        *v = ((*v - 0.5) * contrast + 0.5 + brightness).clamp(0.0, 1.0);
    }
    out
}

fn neighbourhood(img: &GrayImage, pick: fn(f32, f32) -> f32) -> GrayImage {
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let mut v = img.get(x, y);
            for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                v = pick(v, img.get_clamped(x as isize + dx, y as isize + dy));
            }
            out.set(x, y, v);
        }
    }
    out
}

/// Ink grows: each pixel takes the darkest of its cross neighbourhood.
pub fn thicken(img: &GrayImage) -> GrayImage {
    neighbourhood(img, f32::min)
}

pub fn thin(img: &GrayImage) -> GrayImage {
    neighbourhood(img, f32::max)
}

/// Rotation about the centre; uncovered area is paper.
pub fn rotate(img: &GrayImage, degrees: f32) -> GrayImage {
    let (s, c) = degrees.to_radians().sin_cos();
    let (cx, cy) = (img.width() as f32 / 2.0, img.height() as f32 / 2.0);
    let mut out = GrayImage::new(img.width(), img.height(), 1.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            let (sx, sy) = (c * dx + s * dy + cx - 0.5, -s * dx + c * dy + cy - 0.5);
            out.set(x, y, img.sample(sx, sy, 1.0).clamp(0.0, 1.0));
        }
    }
    out
}

/// Displacement field from random vectors on a coarse grid, bilinearly interpolated.
pub fn elastic(img: &GrayImage, amplitude: f32, rng: &mut impl Rng) -> GrayImage {
    const CELL: usize = 16;
    let gw = img.width() / CELL + 2;
    let gh = img.height() / CELL + 2;
    let field: Vec<(f32, f32)> =
        (0..gw * gh).map(|_| (rng.gen_range(-amplitude..=amplitude), rng.gen_range(-amplitude..=amplitude))).collect();
    let at = |gx: usize, gy: usize| field[gy.min(gh - 1) * gw + gx.min(gw - 1)];
    let mut out = GrayImage::new(img.width(), img.height(), 1.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (fx, fy) = (x as f32 / CELL as f32, y as f32 / CELL as f32);
            let (gx, gy) = (fx as usize, fy as usize);
            let (tx, ty) = (fx - gx as f32, fy - gy as f32);
            let lerp = |a: (f32, f32), b: (f32, f32), t: f32| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
            let top = lerp(at(gx, gy), at(gx + 1, gy), tx);
            let bottom = lerp(at(gx, gy + 1), at(gx + 1, gy + 1), tx);
            let (dx, dy) = lerp(top, bottom, ty);
            out.set(x, y, img.sample(x as f32 + dx, y as f32 + dy, 1.0).clamp(0.0, 1.0));
        }
    }
    out
}
