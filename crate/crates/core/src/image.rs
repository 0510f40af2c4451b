//! Minimal float image buffers, binary masks and PNM I/O.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

/// Side length of a palm ROI.
pub const ROI_SIZE: usize = 224;

/// Row-major, channel-interleaved `f32` image. Pixel values are nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("{channels} channels")));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Luma (Rec. 601 weights) of a 3-channel image; 1-channel images are cloned.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidImage(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Image::new(width, height, self.channels);
        for y in 0..height {
            let src = ((y0 + y) * self.width + x0) * self.channels;
            let dst = y * width * self.channels;
            out.data[dst..dst + width * self.channels]
                .copy_from_slice(&self.data[src..src + width * self.channels]);
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Bilinear sample of channel `c` at real coordinates, with pixel centers
    /// on integers. Neighbors outside the image contribute 0.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f32 {
        if !(x > -1.0 && y > -1.0 && x < self.width as f64 && y < self.height as f64) {
            return 0.0;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let mut acc = 0.0f64;
        for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                if wx == 0.0 {
                    continue;
                }
                let (px, py) = (x0 + dx, y0 + dy);
                if px >= 0 && py >= 0 && (px as usize) < self.width && (py as usize) < self.height {
                    acc += wx * wy * f64::from(self.get(px as usize, py as usize, c));
                }
            }
        }
        acc as f32
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
        Ok(match img.color() {
            image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 => {
                let g = img.to_luma8();
                Image {
                    width: g.width() as usize,
                    height: g.height() as usize,
                    channels: 1,
                    data: g.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect(),
                }
            }
            _ => {
                let c = img.to_rgb8();
                Image {
                    width: c.width() as usize,
                    height: c.height() as usize,
                    channels: 3,
                    data: c.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect(),
                }
            }
        })
    }

    /// 8-bit quantization used for file output.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Writes binary PGM (1 channel) or PPM (3 channels), maxval 255.
    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        let (subtype, color) = match self.channels {
            1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
            _ => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        };
        let file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        PnmEncoder::new(file)
            .with_subtype(subtype)
            .write_image(&self.to_u8(), self.width as u32, self.height as u32, color)
            .map_err(|e| Error::InvalidImage(e.to_string()))
    }
}

/// Binary image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    /// Pixels darker than 0.5 after grayscale conversion.
    pub fn from_dark_pixels(img: &Image) -> Mask {
        let g = img.to_gray();
        Mask {
            width: g.width,
            height: g.height,
            data: g.data.iter().map(|&v| v < 0.5).collect(),
        }
    }
}

/// A 224x224 single-channel crop with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RoiImage(Image);

impl RoiImage {
    pub fn new(img: Image) -> Result<Self> {
        if img.width != ROI_SIZE || img.height != ROI_SIZE || img.channels != 1 {
            return Err(Error::InvalidImage(format!(
                "ROI must be {ROI_SIZE}x{ROI_SIZE}x1, got {}x{}x{}",
                img.width, img.height, img.channels
            )));
        }
        if img.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidImage("ROI pixel outside [0, 1]".into()));
        }
        Ok(Self(img))
    }

    /// Clamps into [0, 1] and converts to grayscale before validating the size.
    pub fn from_image_lossy(img: &Image) -> Result<Self> {
        Self::new(img.to_gray().map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }
}

impl AsRef<Image> for RoiImage {
    fn as_ref(&self) -> &Image {
        &self.0
    }
}

/// Normalized 1-D Gaussian with radius `ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with replicated borders; output keeps the input size.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h, ch) = (img.width as i64, img.height as i64, img.channels);
    let mut tmp = vec![0.0f64; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sx = (x + i as i64 - r).clamp(0, w - 1);
                    acc += kv * f64::from(img.get(sx as usize, y as usize, c));
                }
                tmp[((y * w + x) as usize) * ch + c] = acc;
            }
        }
    }
    let mut out = Image::new(img.width, img.height, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sy = (y + i as i64 - r).clamp(0, h - 1);
                    acc += kv * tmp[((sy * w + x) as usize) * ch + c];
                }
                out.set(x as usize, y as usize, c, acc as f32);
            }
        }
    }
    out
}

/// Gaussian blur evaluated only where the kernel fits entirely inside the
/// plane. Returns the shrunken plane and its dimensions.
pub(crate) fn gaussian_blur_valid(
    plane: &[f64],
    width: usize,
    height: usize,
    sigma: f64,
) -> (Vec<f64>, usize, usize) {
    let k = gaussian_kernel(sigma);
    let span = k.len();
    if width < span || height < span {
        return (Vec::new(), 0, 0);
    }
    let (ow, oh) = (width - span + 1, height - span + 1);
    let mut tmp = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            tmp[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * plane[y * width + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[(y + i) * ow + x])
                .sum();
        }
    }
    (out, ow, oh)
}
