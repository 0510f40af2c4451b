//! Synthetic data: palm-like line textures for end-to-end runs and Gaussian
//! blobs for exercising the dimensionality reducer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::degrade::draw_segment;
use crate::error::{Error, Result};
use crate::image::{Image, Mask, RoiImage, ROI_SIZE};

/// Independent generator stream for item `index` under `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Curve {
    p0: [f64; 2],
    p1: [f64; 2],
    p2: [f64; 2],
    thickness: f64,
    depth: f32,
}

impl Curve {
    fn random(rng: &mut ChaCha8Rng, min_len: f64, max_len: f64, thickness: (f64, f64), depth: (f32, f32)) -> Self {
        let s = ROI_SIZE as f64;
        let p0 = [rng.gen_range(0.0..s), rng.gen_range(0.0..s)];
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let len = rng.gen_range(min_len..max_len);
        let p2 = [p0[0] + len * angle.cos(), p0[1] + len * angle.sin()];
        let bend = rng.gen_range(-0.3..0.3) * len;
        let mid = [(p0[0] + p2[0]) / 2.0, (p0[1] + p2[1]) / 2.0];
        let p1 = [mid[0] - bend * angle.sin(), mid[1] + bend * angle.cos()];
        Self {
            p0,
            p1,
            p2,
            thickness: rng.gen_range(thickness.0..thickness.1),
            depth: rng.gen_range(depth.0..depth.1),
        }
    }

    fn jittered(&self, rng: &mut ChaCha8Rng, amount: f64) -> Self {
        let mut j = |p: [f64; 2]| {
            if amount == 0.0 {
                p
            } else {
                [p[0] + rng.gen_range(-amount..amount), p[1] + rng.gen_range(-amount..amount)]
            }
        };
        Self { p0: j(self.p0), p1: j(self.p1), p2: j(self.p2), ..*self }
    }

    fn rasterize(&self, mask: &mut Mask) {
        const STEPS: usize = 12;
        let at = |t: f64| {
            let u = 1.0 - t;
            [
                u * u * self.p0[0] + 2.0 * u * t * self.p1[0] + t * t * self.p2[0],
                u * u * self.p0[1] + 2.0 * u * t * self.p1[1] + t * t * self.p2[1],
            ]
        };
        let mut prev = at(0.0);
        for k in 1..=STEPS {
            let next = at(k as f64 / STEPS as f64);
            draw_segment(mask, prev, next, self.thickness);
            prev = next;
        }
    }
}

/// Geometry of one synthetic palm: a few deep principal lines over many
/// fine creases, on a softly shaded background.
#[derive(Debug, Clone, PartialEq)]
pub struct PalmPattern {
    curves: Vec<Curve>,
    background: f32,
    shading: [f32; 2],
}

impl PalmPattern {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut curves = Vec::new();
        for _ in 0..3 {
            curves.push(Curve::random(rng, 120.0, 220.0, (3.0, 5.0), (0.35, 0.5)));
        }
        let creases = rng.gen_range(40..60);
        for _ in 0..creases {
            curves.push(Curve::random(rng, 15.0, 50.0, (1.0, 2.2), (0.15, 0.3)));
        }
        Self {
            curves,
            background: rng.gen_range(0.65..0.8),
            shading: [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)],
        }
    }

    /// Renders one capture: control points jitter by up to `jitter` px and
    /// Gaussian pixel noise of `noise_sigma` is added before clamping.
    pub fn render(&self, rng: &mut ChaCha8Rng, jitter: f64, noise_sigma: f64) -> Result<RoiImage> {
        let s = ROI_SIZE as f32;
        let mut img = Image::from_fn(ROI_SIZE, ROI_SIZE, |x, y| {
            self.background + self.shading[0] * (x as f32 / s - 0.5) + self.shading[1] * (y as f32 / s - 0.5)
        });
        for curve in &self.curves {
            let mut mask = Mask::new(ROI_SIZE, ROI_SIZE);
            curve.jittered(rng, jitter).rasterize(&mut mask);
            for (v, &m) in img.data_mut().iter_mut().zip(mask.data()) {
                if m {
                    *v -= curve.depth;
                }
            }
        }
        if noise_sigma > 0.0 {
            let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            for v in img.data_mut() {
                *v += normal.sample(rng) as f32;
            }
        }
        RoiImage::from_image_lossy(&img)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureCorpusConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    pub jitter: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for TextureCorpusConfig {
    fn default() -> Self {
        Self { classes: 50, samples_per_class: 10, jitter: 1.5, noise_sigma: 0.03, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureSample {
    pub subject: String,
    pub index: usize,
    pub roi: RoiImage,
}

pub fn subject_name(class: usize) -> String {
    format!("palm{class:03}")
}

const SAMPLE_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Class-major list; class `c` sample `i` depends only on `(seed, c, i)`.
pub fn texture_corpus(cfg: &TextureCorpusConfig) -> Result<Vec<TextureSample>> {
    if cfg.classes == 0 || cfg.samples_per_class == 0 {
        return Err(Error::InvalidSpec("corpus needs at least one class and sample".into()));
    }
    let patterns: Vec<PalmPattern> = (0..cfg.classes)
        .map(|c| PalmPattern::random(&mut stream_rng(cfg.seed, c as u64)))
        .collect();
    let n = cfg.classes * cfg.samples_per_class;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let (c, i) = (k / cfg.samples_per_class, k % cfg.samples_per_class);
            let mut rng = stream_rng(cfg.seed.rotate_left(32) ^ SAMPLE_STREAM_SALT, k as u64);
            let roi = patterns[c].render(&mut rng, cfg.jitter, cfg.noise_sigma)?;
            Ok(TextureSample { subject: subject_name(c), index: i, roi })
        })
        .collect()
}

/// Points drawn around `blobs` random centers: each center ~ N(0, 1) per
/// coordinate, each point = center + N(0, spread²). Returns points and labels,
/// blob-major.
pub fn gaussian_blobs(
    blobs: usize,
    per_blob: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if blobs == 0 || per_blob == 0 || dim == 0 || !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidSpec("blob counts and dim must be positive, spread finite".into()));
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(blobs * per_blob);
    let mut labels = Vec::with_capacity(blobs * per_blob);
    for b in 0..blobs {
        let center: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
        for _ in 0..per_blob {
            points.push(center.iter().map(|c| c + spread * unit.sample(&mut rng)).collect());
            labels.push(b);
        }
    }
    Ok((points, labels))
}
