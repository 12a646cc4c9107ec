//! Deterministic line-chart rendering and seeded salt-and-pepper corruption.
//!
//! Charts are rasterized with pure integer/float math (no fonts, no
//! anti-aliasing) so identical inputs produce identical bytes. The default
//! canvas is 800x400 with 10% margins, a 2-px black polyline, and a gray
//! axis frame; the y-axis covers the normalized range [0, 1], increasing
//! upward.

use std::io::Cursor;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const DEFAULT_WIDTH: u32 = 800;
pub const DEFAULT_HEIGHT: u32 = 400;
const MARGIN_FRAC: f64 = 0.10;

const WHITE: [u8; 3] = [255, 255, 255];
const BLACK: [u8; 3] = [0, 0, 0];
const FRAME_GRAY: [u8; 3] = [128, 128, 128];

#[derive(Debug, Error)]
pub enum ChartError {
    #[error("need at least 2 values to draw a line, got {0}")]
    TooShort(usize),
    #[error("chart dimensions must be at least 64x64, got {width}x{height}")]
    BadDimensions { width: u32, height: u32 },
    #[error("invalid noise spec: {0}")]
    BadNoiseSpec(String),
    #[error("png codec error: {0}")]
    Png(String),
}

/// Row-major RGB raster plus provenance of what it depicts.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub meta: ChartMeta,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChartMeta {
    pub segment: String,
    pub noise: Option<f64>,
}

impl ChartImage {
    fn blank(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![255; (width * height * 3) as usize],
            meta: ChartMeta::default(),
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    fn set_index(&mut self, idx: usize, rgb: [u8; 3]) {
        let i = idx * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    fn index_color(&self, idx: usize) -> [u8; 3] {
        let i = idx * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Number of pixel positions whose color differs from `other`.
    pub fn diff_count(&self, other: &ChartImage) -> usize {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.pixels
            .chunks_exact(3)
            .zip(other.pixels.chunks_exact(3))
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Salt-and-pepper corruption parameters.
///
/// `density` is the fraction of all pixels corrupted; `salt_ratio` is the
/// fraction of corrupted pixels set to pure white (the rest become pure
/// black). Defaults: salt_ratio 0.2, seed 42.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub density: f64,
    pub salt_ratio: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            density: 0.0,
            salt_ratio: 0.2,
            seed: 42,
        }
    }
}

impl NoiseSpec {
    pub fn with_density(density: f64) -> Self {
        Self {
            density,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), ChartError> {
        if !(0.0..=0.5).contains(&self.density) || !self.density.is_finite() {
            return Err(ChartError::BadNoiseSpec(format!(
                "density {} outside [0, 0.5]",
                self.density
            )));
        }
        if !(0.0..=1.0).contains(&self.salt_ratio) || !self.salt_ratio.is_finite() {
            return Err(ChartError::BadNoiseSpec(format!(
                "salt_ratio {} outside [0, 1]",
                self.salt_ratio
            )));
        }
        Ok(())
    }
}

/// Render values in [0, 1] as a single dark polyline over a white
/// background, with a gray axis frame around the plot area.
pub fn render_line_chart(
    values: &[f64],
    width: u32,
    height: u32,
) -> Result<ChartImage, ChartError> {
    if values.len() < 2 {
        return Err(ChartError::TooShort(values.len()));
    }
    if width < 64 || height < 64 {
        return Err(ChartError::BadDimensions { width, height });
    }

    let mut img = ChartImage::blank(width, height);
    let mx = (width as f64 * MARGIN_FRAC).round() as u32;
    let my = (height as f64 * MARGIN_FRAC).round() as u32;
    let (left, right) = (mx, width - 1 - mx);
    let (top, bottom) = (my, height - 1 - my);

    // 2-px frame on the plot-area boundary.
    for x in left..=right {
        for y in [top, top + 1, bottom - 1, bottom] {
            img.set_pixel(x, y, FRAME_GRAY);
        }
    }
    for y in top..=bottom {
        for x in [left, left + 1, right - 1, right] {
            img.set_pixel(x, y, FRAME_GRAY);
        }
    }

    let n = values.len() as f64;
    let x_of = |i: usize| left as f64 + i as f64 * (right - left) as f64 / (n - 1.0);
    let y_of = |v: f64| bottom as f64 - v.clamp(0.0, 1.0) * (bottom - top) as f64;

    // 2x2 stamp along a dense walk of each segment; dense enough that
    // consecutive stamps overlap.
    let mut stamp = |px: f64, py: f64| {
        let cx = px.round() as i64;
        let cy = py.round() as i64;
        for dx in 0..2i64 {
            for dy in 0..2i64 {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as u32) < width && (y as u32) < height {
                    img.set_pixel(x as u32, y as u32, BLACK);
                }
            }
        }
    };

    for i in 0..values.len() - 1 {
        let (x0, y0) = (x_of(i), y_of(values[i]));
        let (x1, y1) = (x_of(i + 1), y_of(values[i + 1]));
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize) * 2 + 1;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            stamp(x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        }
    }

    Ok(img)
}

/// Corrupt exactly `round(density * W * H)` distinct pixels, of which
/// `round(salt_ratio * n)` become pure white and the rest pure black.
///
/// Positions are drawn from a seeded shuffle (ChaCha8), restricted to
/// pixels whose color actually changes: salt targets non-white pixels and
/// pepper targets non-black ones, so the corrupted-pixel count measured
/// against the clean image is exact. If a quota cannot be met that way
/// (almost-monochrome images at high density), the remainder falls back to
/// untouched positions regardless of current color.
pub fn inject_salt_pepper(img: &ChartImage, spec: &NoiseSpec) -> Result<ChartImage, ChartError> {
    spec.validate()?;
    let mut out = img.clone();
    out.meta.noise = Some(spec.density);

    let n_total = (img.width * img.height) as usize;
    let n_noisy = (spec.density * n_total as f64).round() as usize;
    if n_noisy == 0 {
        out.meta.noise = img.meta.noise;
        return Ok(out);
    }
    let mut salt_left = (spec.salt_ratio * n_noisy as f64).round() as usize;
    let mut pepper_left = n_noisy - salt_left;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<u32> = (0..n_total as u32).collect();
    order.shuffle(&mut rng);

    let mut touched = vec![false; n_total];
    for &idx in &order {
        if salt_left == 0 && pepper_left == 0 {
            break;
        }
        let idx = idx as usize;
        let color = img.index_color(idx);
        if salt_left > 0 && color != WHITE {
            out.set_index(idx, WHITE);
            touched[idx] = true;
            salt_left -= 1;
        } else if pepper_left > 0 && color != BLACK {
            out.set_index(idx, BLACK);
            touched[idx] = true;
            pepper_left -= 1;
        }
    }

    if salt_left > 0 || pepper_left > 0 {
        for &idx in &order {
            if salt_left == 0 && pepper_left == 0 {
                break;
            }
            let idx = idx as usize;
            if touched[idx] {
                continue;
            }
            if salt_left > 0 {
                out.set_index(idx, WHITE);
                salt_left -= 1;
            } else {
                out.set_index(idx, BLACK);
                pepper_left -= 1;
            }
            touched[idx] = true;
        }
    }

    Ok(out)
}

/// Encode as PNG bytes; decoding reproduces the pixel buffer exactly.
pub fn encode_png(img: &ChartImage) -> Result<Vec<u8>, ChartError> {
    let buf = image::RgbImage::from_raw(img.width, img.height, img.pixels.clone())
        .ok_or_else(|| ChartError::Png("buffer size mismatch".into()))?;
    let mut bytes = Vec::new();
    buf.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| ChartError::Png(e.to_string()))?;
    Ok(bytes)
}

/// Decode PNG bytes back into a [`ChartImage`] (RGB).
pub fn decode_png(bytes: &[u8]) -> Result<ChartImage, ChartError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| ChartError::Png(e.to_string()))?
        .to_rgb8();
    Ok(ChartImage {
        width: img.width(),
        height: img.height(),
        pixels: img.into_raw(),
        meta: ChartMeta::default(),
    })
}
