//! Image ingestion, normalization, color-space conversion and histograms.
//!
//! Pixels are stored as `f64` channel values in the canonical range of the
//! buffer's color space:
//!
//! | space | channel ranges                     |
//! |-------|------------------------------------|
//! | RGB   | 0..=255 each                       |
//! | HSV   | H 0..360 degrees, S and V 0..=1    |
//! | CIELAB| L 0..=100, a and b -128..=127      |
//! | GRAY  | 0..=255, single channel            |
//!
//! Keeping real values after conversion avoids re-quantizing to 8 bits
//! between stages.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the square working resolution.
pub const NORMALIZED_SIZE: usize = 256;

// sRGB primaries, D65 reference white.
const WHITE_X: f64 = 0.95047;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.08883;

const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Hsv,
    Lab,
    Gray,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            _ => 3,
        }
    }

    /// Inclusive canonical range of each channel.
    pub fn ranges(self) -> &'static [(f64, f64)] {
        match self {
            ColorSpace::Rgb => &[(0.0, 255.0), (0.0, 255.0), (0.0, 255.0)],
            ColorSpace::Hsv => &[(0.0, 360.0), (0.0, 1.0), (0.0, 1.0)],
            ColorSpace::Lab => &[(0.0, 100.0), (-128.0, 127.0), (-128.0, 127.0)],
            ColorSpace::Gray => &[(0.0, 255.0)],
        }
    }
}

impl fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ColorSpace::Rgb => "rgb",
            ColorSpace::Hsv => "hsv",
            ColorSpace::Lab => "lab",
            ColorSpace::Gray => "gray",
        };
        f.write_str(name)
    }
}

/// Row-major raster of real-valued pixels in a declared color space.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    color_space: ColorSpace,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Builds a buffer, checking the length and the channel ranges.
    pub fn new(width: usize, height: usize, color_space: ColorSpace, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        let expected = width * height * color_space.channels();
        if data.len() != expected {
            return Err(Error::dims(expected, data.len()));
        }
        let ranges = color_space.ranges();
        for (i, v) in data.iter().enumerate() {
            let (lo, hi) = ranges[i % ranges.len()];
            if !v.is_finite() || *v < lo || *v > hi {
                return Err(Error::InvalidArgument(format!(
                    "channel value {v} outside {color_space} range {lo}..={hi}"
                )));
            }
        }
        Ok(Self { width, height, color_space, data })
    }

    /// A buffer with every pixel set to `pixel`.
    pub fn filled(width: usize, height: usize, color_space: ColorSpace, pixel: &[f64]) -> Result<Self> {
        if pixel.len() != color_space.channels() {
            return Err(Error::dims(color_space.channels(), pixel.len()));
        }
        let data = pixel.iter().copied().cycle().take(width * height * pixel.len()).collect();
        Self::new(width, height, color_space, data)
    }

    /// RGB buffer from packed 8-bit `r, g, b` triples.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, ColorSpace::Rgb, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    pub fn channels(&self) -> usize {
        self.color_space.channels()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        self.pixel_at(y * self.width + x)
    }

    /// Pixel by linear (row-major) index.
    pub fn pixel_at(&self, index: usize) -> &[f64] {
        let c = self.channels();
        &self.data[index * c..(index + 1) * c]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels())
    }

    /// Maps every pixel through `f`, producing a buffer in `target`.
    fn map_pixels(&self, target: ColorSpace, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut data = Vec::with_capacity(self.pixel_count() * target.channels());
        for px in self.pixels() {
            data.extend(f(px));
        }
        Self { width: self.width, height: self.height, color_space: target, data }
    }

    /// Rounds an RGB buffer to packed 8-bit triples.
    pub fn to_rgb8(&self) -> Result<Vec<u8>> {
        let rgb = match self.color_space {
            ColorSpace::Rgb => std::borrow::Cow::Borrowed(self),
            ColorSpace::Gray => std::borrow::Cow::Owned(self.map_pixels(ColorSpace::Rgb, |p| vec![p[0]; 3])),
            other => std::borrow::Cow::Owned(
                convert_color(self, ColorSpace::Rgb)
                    .map_err(|_| Error::UnsupportedConversion { from: other, to: ColorSpace::Rgb })?,
            ),
        };
        Ok(rgb.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect())
    }

    /// Writes the buffer as an 8-bit RGB PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_rgb8()?;
        image::save_buffer_with_format(
            path.as_ref(),
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Encode(other.to_string()),
        })
    }
}

/// Reads a PNG or JPEG file into an RGB buffer at source resolution.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let reader = image::ImageReader::open(path)?.with_guessed_format()?;
    match reader.format() {
        Some(image::ImageFormat::Png | image::ImageFormat::Jpeg) => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        None => return Err(Error::UnsupportedFormat(path.display().to_string())),
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => Error::UnsupportedFormat(u.to_string()),
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Decode(other.to_string()),
    })?;
    let rgb = decoded.to_rgb8();
    ImageBuffer::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
}

/// Resizes to 256x256 RGB with bilinear sampling; aspect ratio is not kept.
///
/// Sampling is pixel-center aligned, so a 256x256 RGB input comes back
/// unchanged and the operation is idempotent.
pub fn normalize(img: &ImageBuffer) -> ImageBuffer {
    let src = match img.color_space {
        ColorSpace::Rgb => img.clone(),
        ColorSpace::Gray => img.map_pixels(ColorSpace::Rgb, |p| vec![p[0]; 3]),
        // HSV and LAB both have inverse conversions to RGB.
        _ => convert_color(img, ColorSpace::Rgb).expect("inverse conversion exists"),
    };
    resize_bilinear(&src, NORMALIZED_SIZE, NORMALIZED_SIZE)
}

fn resize_bilinear(src: &ImageBuffer, out_w: usize, out_h: usize) -> ImageBuffer {
    if src.width == out_w && src.height == out_h {
        return src.clone();
    }
    let c = src.channels();
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let scale = src_len as f64 / dst_len as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(src_len - 1);
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, pos - i0 as f64)
    };
    let lerp = |a: f64, b: f64, t: f64| if a == b { a } else { a + (b - a) * t };

    let mut data = Vec::with_capacity(out_w * out_h * c);
    for y in 0..out_h {
        let (y0, y1, ty) = axis(y, src.height, out_h);
        for x in 0..out_w {
            let (x0, x1, tx) = axis(x, src.width, out_w);
            let (p00, p10) = (src.pixel(x0, y0), src.pixel(x1, y0));
            let (p01, p11) = (src.pixel(x0, y1), src.pixel(x1, y1));
            for ch in 0..c {
                let top = lerp(p00[ch], p10[ch], tx);
                let bottom = lerp(p01[ch], p11[ch], tx);
                data.push(lerp(top, bottom, ty).clamp(0.0, 255.0));
            }
        }
    }
    ImageBuffer { width: out_w, height: out_h, color_space: src.color_space, data }
}

/// Converts between color spaces.
///
/// Supported pairs: RGB to and from HSV and CIELAB, RGB to GRAY, plus the
/// identity conversion for any space.
pub fn convert_color(img: &ImageBuffer, target: ColorSpace) -> Result<ImageBuffer> {
    use ColorSpace::*;
    let out = match (img.color_space, target) {
        (a, b) if a == b => img.clone(),
        (Rgb, Hsv) => img.map_pixels(Hsv, |p| rgb_to_hsv([p[0], p[1], p[2]]).to_vec()),
        (Hsv, Rgb) => img.map_pixels(Rgb, |p| hsv_to_rgb([p[0], p[1], p[2]]).to_vec()),
        (Rgb, Lab) => img.map_pixels(Lab, |p| rgb_to_lab([p[0], p[1], p[2]]).to_vec()),
        (Lab, Rgb) => img.map_pixels(Rgb, |p| lab_to_rgb([p[0], p[1], p[2]]).to_vec()),
        (Rgb, Gray) => img.map_pixels(Gray, |p| vec![rgb_to_gray([p[0], p[1], p[2]])]),
        (from, to) => return Err(Error::UnsupportedConversion { from, to }),
    };
    Ok(out)
}

/// Converts a single pixel of `space` to RGB.
pub fn pixel_to_rgb(space: ColorSpace, px: &[f64]) -> [f64; 3] {
    match space {
        ColorSpace::Rgb => [px[0], px[1], px[2]],
        ColorSpace::Hsv => hsv_to_rgb([px[0], px[1], px[2]]),
        ColorSpace::Lab => lab_to_rgb([px[0], px[1], px[2]]),
        ColorSpace::Gray => [px[0]; 3],
    }
}

/// Converts a single pixel of `space` to CIELAB.
pub fn pixel_to_lab(space: ColorSpace, px: &[f64]) -> [f64; 3] {
    match space {
        ColorSpace::Lab => [px[0], px[1], px[2]],
        other => rgb_to_lab(pixel_to_rgb(other, px)),
    }
}

pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let (r, g, b) = (r / 255.0, g / 255.0, b / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let hue = if hue >= 360.0 { hue - 360.0 } else { hue };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    [hue, sat, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0].map(|ch| ch.clamp(0.0, 255.0))
}

fn srgb_to_linear(c: f64) -> f64 {
    let c = c / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    let v = if c <= 0.0031308 { 12.92 * c } else { 1.055 * c.powf(1.0 / 2.4) - 0.055 };
    (v * 255.0).clamp(0.0, 255.0)
}

pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let f = |t: f64| if t > LAB_EPSILON { t.cbrt() } else { (LAB_KAPPA * t + 16.0) / 116.0 };
    let (fx, fy, fz) = (f(x / WHITE_X), f(y / WHITE_Y), f(z / WHITE_Z));
    [
        (116.0 * fy - 16.0).clamp(0.0, 100.0),
        (500.0 * (fx - fy)).clamp(-128.0, 127.0),
        (200.0 * (fy - fz)).clamp(-128.0, 127.0),
    ]
}

pub fn lab_to_rgb([l, a, b]: [f64; 3]) -> [f64; 3] {
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let finv = |f: f64| {
        let f3 = f * f * f;
        if f3 > LAB_EPSILON {
            f3
        } else {
            (116.0 * f - 16.0) / LAB_KAPPA
        }
    };
    let yr = if l > LAB_KAPPA * LAB_EPSILON { fy * fy * fy } else { l / LAB_KAPPA };
    let (x, y, z) = (finv(fx) * WHITE_X, yr * WHITE_Y, finv(fz) * WHITE_Z);
    let r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    [r, g, bl].map(linear_to_srgb)
}

/// Luma with 0.299 / 0.587 / 0.114 weights, written so achromatic input
/// maps to itself exactly.
pub fn rgb_to_gray([r, g, b]: [f64; 3]) -> f64 {
    (b + 0.299 * (r - b) + 0.587 * (g - b)).clamp(0.0, 255.0)
}

/// Per-channel equal-width histogram over each channel's canonical range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    #[serde(rename = "bins")]
    bins_per_channel: usize,
    #[serde(rename = "channels")]
    counts: Vec<Vec<u64>>,
}

impl Histogram {
    pub fn bins_per_channel(&self) -> usize {
        self.bins_per_channel
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("histogram serializes")
    }
}

pub fn color_histogram(img: &ImageBuffer, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be at least 1".into()));
    }
    let ranges = img.color_space.ranges();
    let mut counts = vec![vec![0u64; bins]; ranges.len()];
    for px in img.pixels() {
        for (ch, &v) in px.iter().enumerate() {
            let (lo, hi) = ranges[ch];
            let t = (v - lo) / (hi - lo);
            let bin = ((t * bins as f64) as usize).min(bins - 1);
            counts[ch][bin] += 1;
        }
    }
    Ok(Histogram { bins_per_channel: bins, counts })
}
