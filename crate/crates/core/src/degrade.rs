//! Synthetic degradations for building paired (degraded, clean) training
//! corpora: colored overlays (lines, glyph-like text, henna masks),
//! down-sample/up-sample and Gaussian blur.
//!
//! Every sample is a pure function of the image, the spec, and the spec's seed.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, Image, Mask};

pub type Rgb = [f32; 3];

/// Overlay drawn before resampling and blur.
#[derive(Debug, Clone, PartialEq)]
pub enum Overlay {
    Text { glyphs: (usize, usize) },
    Lines { segments: (usize, usize), thickness: (f64, f64) },
    /// Pre-made pattern masks; one is picked, randomly resized and cropped.
    Henna { masks: Arc<Vec<Mask>> },
}

impl Overlay {
    pub fn kind(&self) -> &'static str {
        match self {
            Overlay::Text { .. } => "text",
            Overlay::Lines { .. } => "lines",
            Overlay::Henna { .. } => "henna",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    /// Blur sigma range in pixels; 0 disables blur.
    pub blur_sigma: (f64, f64),
    /// Down-sampling factor range, >= 1; 1 disables resampling.
    pub downsample: (f64, f64),
    pub overlay: Option<Overlay>,
    /// Overlay opacity range within [0.1, 1]; 0 would be fully transparent.
    pub alpha: (f64, f64),
    /// Overlay color; random when `None`.
    pub color: Option<Rgb>,
    /// Apply the three stages in a seeded random order instead of
    /// overlay, resample, blur.
    pub shuffle_order: bool,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            blur_sigma: (0.0, 0.0),
            downsample: (1.0, 1.0),
            overlay: None,
            alpha: (0.1, 1.0),
            color: None,
            shuffle_order: false,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: (f64, f64), lo: f64, hi: f64) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite() && lo <= r.0 && r.0 <= r.1 && r.1 <= hi) {
        return Err(Error::InvalidSpec(format!(
            "{name} range [{}, {}] must lie within [{lo}, {hi}]",
            r.0, r.1
        )));
    }
    Ok(())
}

fn draw(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..=r.1)
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        check_range("blur sigma", self.blur_sigma, 0.0, 64.0)?;
        check_range("downsample factor", self.downsample, 1.0, 64.0)?;
        check_range("alpha", self.alpha, 0.1, 1.0)?;
        if let Some(c) = self.color {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidSpec("color outside [0, 1]".into()));
            }
        }
        match &self.overlay {
            Some(Overlay::Lines { segments, thickness }) => {
                if segments.0 > segments.1 {
                    return Err(Error::InvalidSpec("segment range reversed".into()));
                }
                check_range("thickness", *thickness, 0.5, 64.0)?;
            }
            Some(Overlay::Text { glyphs }) if glyphs.0 > glyphs.1 => {
                return Err(Error::InvalidSpec("glyph range reversed".into()));
            }
            Some(Overlay::Henna { masks }) if masks.is_empty() => {
                return Err(Error::InvalidSpec("no henna masks".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Blends `color` into `img` inside the mask: `(1 - alpha) * img + alpha * color`.
/// Single-channel images receive the color's luma.
pub fn composite_mask(img: &Image, mask: &Mask, color: Rgb, alpha: f64) -> Result<Image> {
    if mask.width() != img.width() || mask.height() != img.height() {
        return Err(Error::DimMismatch {
            expected: img.width() * img.height(),
            actual: mask.width() * mask.height(),
        });
    }
    if !(0.1..=1.0).contains(&alpha) {
        return Err(Error::InvalidSpec(format!("alpha {alpha} outside [0.1, 1]")));
    }
    let gray = 0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2];
    let mut out = img.clone();
    let a = alpha as f32;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if !mask.get(x, y) {
                continue;
            }
            for c in 0..img.channels() {
                let target = if img.channels() == 1 { gray } else { color[c] };
                let v = if alpha == 1.0 {
                    target
                } else {
                    (1.0 - a) * img.get(x, y, c) + a * target
                };
                out.set(x, y, c, v);
            }
        }
    }
    Ok(out)
}

/// Marks every pixel whose center lies within `thickness / 2` of the segment.
pub fn draw_segment(mask: &mut Mask, a: [f64; 2], b: [f64; 2], thickness: f64) {
    let r = thickness / 2.0;
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let x0 = (a[0].min(b[0]) - r).floor().max(0.0) as usize;
    let x1 = (a[0].max(b[0]) + r).ceil().min(w - 1.0).max(0.0) as usize;
    let y0 = (a[1].min(b[1]) - r).floor().max(0.0) as usize;
    let y1 = (a[1].max(b[1]) + r).ceil().min(h - 1.0).max(0.0) as usize;
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64, y as f64);
            let t = if len2 == 0.0 {
                0.0
            } else {
                (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0)
            };
            let (cx, cy) = (a[0] + t * dx - px, a[1] + t * dy - py);
            if cx * cx + cy * cy <= r * r {
                mask.set(x, y, true);
            }
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, r: (usize, usize)) -> usize {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..=r.1)
    }
}

/// Random polyline of connected segments with one thickness per line.
pub fn gen_line_overlay(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    thickness: (f64, f64),
    segments: (usize, usize),
) -> Mask {
    let mut mask = Mask::new(width, height);
    let count = pick(rng, segments);
    if count == 0 || width == 0 || height == 0 {
        return mask;
    }
    let t = draw(rng, thickness);
    let (w, h) = (width as f64, height as f64);
    let mut cur = [rng.gen_range(0.0..w), rng.gen_range(0.0..h)];
    for _ in 0..count {
        // Steps of up to a third of the frame keep the stroke local.
        let next = [
            (cur[0] + rng.gen_range(-w / 3.0..w / 3.0)).clamp(0.0, w - 1.0),
            (cur[1] + rng.gen_range(-h / 3.0..h / 3.0)).clamp(0.0, h - 1.0),
        ];
        draw_segment(&mut mask, cur, next, t);
        cur = next;
    }
    mask
}

/// Handwriting-like marks: clusters of short strokes laid out along
/// baselines, one cluster per glyph. Procedural; no font data involved.
pub fn gen_text_overlay(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    glyphs: (usize, usize),
) -> Mask {
    let mut mask = Mask::new(width, height);
    let count = pick(rng, glyphs);
    if count == 0 || width < 16 || height < 24 {
        return mask;
    }
    let glyph_h = rng.gen_range(10.0..18.0f64);
    let thickness = rng.gen_range(1.0..2.5f64);
    let margin = 4.0;
    let (w, h) = (width as f64, height as f64);
    let mut x = rng.gen_range(margin..(w / 2.0).max(margin + 1.0));
    let mut baseline = rng.gen_range(glyph_h + margin..(h - margin).max(glyph_h + margin + 1.0));
    for _ in 0..count {
        let glyph_w = glyph_h * rng.gen_range(0.5..0.9);
        if x + glyph_w > w - margin {
            x = margin;
            baseline += glyph_h * 1.6;
            if baseline > h - margin {
                baseline = glyph_h + margin;
            }
        }
        let strokes = rng.gen_range(2..=4);
        for _ in 0..strokes {
            let a = [x + rng.gen_range(0.0..glyph_w), baseline - rng.gen_range(0.0..glyph_h)];
            let b = [x + rng.gen_range(0.0..glyph_w), baseline - rng.gen_range(0.0..glyph_h)];
            draw_segment(&mut mask, a, b, thickness);
        }
        x += glyph_w + glyph_h * rng.gen_range(0.15..0.45);
    }
    mask
}

/// Resizes a pattern mask by `scale` (nearest neighbor) and places a random
/// `width x height` window of it, padding with empty pixels when smaller.
fn place_henna(rng: &mut ChaCha8Rng, pattern: &Mask, width: usize, height: usize) -> Mask {
    let scale = rng.gen_range(0.5..=1.5f64);
    let sw = ((pattern.width() as f64 * scale).round() as usize).max(1);
    let sh = ((pattern.height() as f64 * scale).round() as usize).max(1);
    let ox = if sw > width { rng.gen_range(0..=sw - width) as i64 } else { -(rng.gen_range(0..=width - sw) as i64) };
    let oy = if sh > height { rng.gen_range(0..=sh - height) as i64 } else { -(rng.gen_range(0..=height - sh) as i64) };
    let mut out = Mask::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as i64 + ox, y as i64 + oy);
            if px < 0 || py < 0 || px as usize >= sw || py as usize >= sh {
                continue;
            }
            let sx = ((px as f64 + 0.5) / scale).floor() as usize;
            let sy = ((py as f64 + 0.5) / scale).floor() as usize;
            if pattern.get(sx.min(pattern.width() - 1), sy.min(pattern.height() - 1)) {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Area-average down-sampling by `factor`, then bilinear up-sampling back to
/// the original size.
pub fn downsample_upsample(img: &Image, factor: f64) -> Image {
    if factor <= 1.0 {
        return img.clone();
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let sw = ((w as f64 / factor).round() as usize).max(1);
    let sh = ((h as f64 / factor).round() as usize).max(1);
    let mut small = Image::new(sw, sh, ch);
    for y in 0..sh {
        let (ya, yb) = (y * h / sh, ((y + 1) * h / sh).max(y * h / sh + 1));
        for x in 0..sw {
            let (xa, xb) = (x * w / sw, ((x + 1) * w / sw).max(x * w / sw + 1));
            let n = ((yb - ya) * (xb - xa)) as f64;
            for c in 0..ch {
                let mut acc = 0.0f64;
                for yy in ya..yb {
                    for xx in xa..xb {
                        acc += f64::from(img.get(xx, yy, c));
                    }
                }
                small.set(x, y, c, (acc / n) as f32);
            }
        }
    }
    let mut out = Image::new(w, h, ch);
    let (kx, ky) = (sw as f64 / w as f64, sh as f64 / h as f64);
    for y in 0..h {
        let sy = ((y as f64 + 0.5) * ky - 0.5).clamp(0.0, (sh - 1) as f64);
        for x in 0..w {
            let sx = ((x as f64 + 0.5) * kx - 0.5).clamp(0.0, (sw - 1) as f64);
            for c in 0..ch {
                out.set(x, y, c, small.sample_bilinear(sx, sy, c));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Overlay,
    Resample,
    Blur,
}

/// Parameters actually drawn for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedDegradation {
    pub blur_sigma: f64,
    pub downsample: f64,
    pub overlay: Option<&'static str>,
    pub alpha: f64,
    pub color: Rgb,
    pub overlay_pixels: usize,
}

/// Returns `(degraded, clean)`; `clean` is an untouched copy of the input.
pub fn degrade(img: &Image, spec: &DegradationSpec) -> Result<(Image, Image, AppliedDegradation)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let blur_sigma = draw(&mut rng, spec.blur_sigma);
    let downsample = draw(&mut rng, spec.downsample);
    let alpha = draw(&mut rng, spec.alpha);
    let color = spec
        .color
        .unwrap_or_else(|| [rng.gen::<f32>(), rng.gen::<f32>(), rng.gen::<f32>()]);
    let mut stages = [Stage::Overlay, Stage::Resample, Stage::Blur];
    if spec.shuffle_order {
        stages.shuffle(&mut rng);
    }
    let (w, h) = (img.width(), img.height());
    let mask = spec.overlay.as_ref().map(|o| match o {
        Overlay::Text { glyphs } => gen_text_overlay(&mut rng, w, h, *glyphs),
        Overlay::Lines { segments, thickness } => {
            gen_line_overlay(&mut rng, w, h, *thickness, *segments)
        }
        Overlay::Henna { masks } => {
            let pattern = &masks[rng.gen_range(0..masks.len())];
            place_henna(&mut rng, pattern, w, h)
        }
    });

    let mut out = img.clone();
    for stage in stages {
        out = match stage {
            Stage::Overlay => match &mask {
                Some(m) => composite_mask(&out, m, color, alpha)?,
                None => out,
            },
            Stage::Resample => downsample_upsample(&out, downsample),
            Stage::Blur => gaussian_blur(&out, blur_sigma),
        };
    }
    let applied = AppliedDegradation {
        blur_sigma,
        downsample,
        overlay: spec.overlay.as_ref().map(Overlay::kind),
        alpha,
        color,
        overlay_pixels: mask.as_ref().map_or(0, Mask::count),
    };
    Ok((out, img.clone(), applied))
}
