//! Denoising pipeline for generated 8-bit glyphs: 3x3 Gaussian blur, Otsu
//! threshold, morphological opening then closing with a 3x3 all-ones
//! structuring element, and a final bitwise NOT.
//!
//! Borders are handled by edge replication everywhere. For a 3x3 window
//! that is the same as clipping the window to the image, which keeps the
//! erosion/dilation pair adjoint, so opening and closing stay idempotent.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::is_png;
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 0.8;

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Pixel at `(x + dx, y + dy)`, with coordinates clamped to the image.
    #[inline]
    fn replicated(&self, x: usize, y: usize, dx: isize, dy: isize) -> u8 {
        let cx = (x as isize + dx).clamp(0, self.width as isize - 1) as usize;
        let cy = (y as isize + dy).clamp(0, self.height as isize - 1) as usize;
        self.pixels[cy * self.width + cx]
    }

    pub fn transpose(&self) -> Self {
        let mut out = GrayImage::filled(self.height, self.width, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(y, x, self.get(x, y));
            }
        }
        out
    }

    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0 || p == 255)
    }

    fn require_binary(&self) -> Result<()> {
        match self.pixels.iter().find(|&&p| p != 0 && p != 255) {
            Some(&p) => Err(Error::NotBinary(p)),
            None => Ok(()),
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::data(path, format!("cannot decode image: {e}")))?
            .into_luma8();
        let (w, h) = img.dimensions();
        GrayImage::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| Error::data(path, format!("cannot write png: {e}")))
    }
}

/// Normalized 3x3 Gaussian, `k[dy+1][dx+1] ∝ exp(-(dx² + dy²) / 2σ²)`.
pub fn gaussian_kernel_3x3(sigma: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let mut total = 0.0;
    for (dy, row) in k.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (fy, fx) = (dy as f64 - 1.0, dx as f64 - 1.0);
            *v = (-(fx * fx + fy * fy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for v in k.iter_mut().flatten() {
        *v /= total;
    }
    k
}

pub fn gaussian_blur_3x3(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("blur sigma must be positive, got {sigma}")));
    }
    let k = gaussian_kernel_3x3(sigma);
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let mut acc = 0.0;
            for (dy, row) in k.iter().enumerate() {
                for (dx, &w) in row.iter().enumerate() {
                    acc += w * img.replicated(x, y, dx as isize - 1, dy as isize - 1) as f64;
                }
            }
            out.set(x, y, acc.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &p in &img.pixels {
        h[p as usize] += 1;
    }
    h
}

/// Between-class variance of threshold `t` up to the positive factor `1/n²`,
/// as the exact fraction `(n·s0 − n0·s)² / (n0·n1)`. `None` when one class
/// is empty.
fn otsu_score(n: u64, total: u64, n0: u64, s0: u64) -> Option<(u128, u128)> {
    let n1 = n - n0;
    if n0 == 0 || n1 == 0 {
        return None;
    }
    let diff = (n as i128 * s0 as i128 - n0 as i128 * total as i128).unsigned_abs();
    Some((diff * diff, n0 as u128 * n1 as u128))
}

fn greater(a: (u128, u128), b: (u128, u128)) -> bool {
    match (a.0.checked_mul(b.1), b.0.checked_mul(a.1)) {
        (Some(l), Some(r)) => l > r,
        _ => a.0 as f64 / a.1 as f64 > b.0 as f64 / b.1 as f64,
    }
}

/// Otsu level from a 256-bin histogram: the lowest `t` maximizing the
/// between-class variance of `{p <= t}` vs `{p > t}`. A single-valued
/// histogram returns that value.
pub fn otsu_level(hist: &[u64; 256]) -> u8 {
    let n: u64 = hist.iter().sum();
    let total: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
    let mut best: Option<(u8, (u128, u128))> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for (t, &c) in hist.iter().enumerate() {
        n0 += c;
        s0 += t as u64 * c;
        if let Some(score) = otsu_score(n, total, n0, s0) {
            if best.is_none_or(|(_, b)| greater(score, b)) {
                best = Some((t as u8, score));
            }
        }
    }
    match best {
        Some((t, _)) => t,
        None => hist.iter().position(|&c| c > 0).unwrap_or(0) as u8,
    }
}

/// Pixels `<= t` become 0, the rest 255.
pub fn apply_threshold(img: &GrayImage, t: u8) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| if p <= t { 0 } else { 255 }).collect(),
    }
}

pub fn otsu_threshold(img: &GrayImage) -> (u8, GrayImage) {
    let t = otsu_level(&histogram(img));
    (t, apply_threshold(img, t))
}

fn morph(img: &GrayImage, hit: u8) -> Result<GrayImage> {
    img.require_binary()?;
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let mut any = false;
            'window: for dy in -1..=1 {
                for dx in -1..=1 {
                    if img.replicated(x, y, dx, dy) == hit {
                        any = true;
                        break 'window;
                    }
                }
            }
            out.set(x, y, if any { hit } else { 255 - hit });
        }
    }
    Ok(out)
}

/// 255 iff every pixel of the 3x3 neighbourhood is 255.
pub fn erode(img: &GrayImage) -> Result<GrayImage> {
    morph(img, 0)
}

/// 255 iff any pixel of the 3x3 neighbourhood is 255.
pub fn dilate(img: &GrayImage) -> Result<GrayImage> {
    morph(img, 255)
}

pub fn opening(img: &GrayImage) -> Result<GrayImage> {
    dilate(&erode(img)?)
}

pub fn closing(img: &GrayImage) -> Result<GrayImage> {
    erode(&dilate(img)?)
}

pub fn bitwise_not(img: &GrayImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| 255 - p).collect(),
    }
}

/// When the final NOT is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inversion {
    /// Always invert.
    #[default]
    Always,
    /// Never invert.
    Skip,
    /// Invert only if most border pixels are white, so the result has a
    /// dark background with white strokes.
    DarkBackground,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleaningConfig {
    pub sigma: f64,
    pub inversion: Inversion,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            sigma: DEFAULT_SIGMA,
            inversion: Inversion::Always,
        }
    }
}

/// Every intermediate image of [`clean`].
#[derive(Debug, Clone)]
pub struct Stages {
    pub blurred: GrayImage,
    pub threshold: u8,
    pub binary: GrayImage,
    pub opened: GrayImage,
    pub closed: GrayImage,
    pub inverted: bool,
    pub output: GrayImage,
}

fn border_mostly_white(img: &GrayImage) -> bool {
    let (w, h) = (img.width, img.height);
    let mut white = 0usize;
    let mut total = 0usize;
    for y in 0..h {
        for x in 0..w {
            if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                total += 1;
                white += (img.get(x, y) == 255) as usize;
            }
        }
    }
    2 * white > total
}

pub fn clean_stages(img: &GrayImage, cfg: &CleaningConfig) -> Result<Stages> {
    let blurred = gaussian_blur_3x3(img, cfg.sigma)?;
    let (threshold, binary) = otsu_threshold(&blurred);
    let opened = opening(&binary)?;
    let closed = closing(&opened)?;
    let inverted = match cfg.inversion {
        Inversion::Always => true,
        Inversion::Skip => false,
        Inversion::DarkBackground => border_mostly_white(&closed),
    };
    let output = if inverted {
        bitwise_not(&closed)
    } else {
        closed.clone()
    };
    Ok(Stages {
        blurred,
        threshold,
        binary,
        opened,
        closed,
        inverted,
        output,
    })
}

/// Blur, Otsu, opening, closing, NOT. The output is strictly binary.
pub fn clean(img: &GrayImage, cfg: &CleaningConfig) -> Result<GrayImage> {
    Ok(clean_stages(img, cfg)?.output)
}

/// Outcome of [`clean_directory`].
#[derive(Debug, Default)]
pub struct CleanSummary {
    pub cleaned: Vec<PathBuf>,
    /// Non-PNG entries that were ignored.
    pub skipped: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, Error)>,
    /// Inputs that were already strictly binary. Cleaning those again with
    /// an unconditional NOT flips their polarity.
    pub already_binary: usize,
}

/// Clean every PNG in `input` into `output` under the same file name.
/// Per-file failures are collected rather than aborting the batch.
pub fn clean_directory(input: &Path, output: &Path, cfg: &CleaningConfig) -> Result<CleanSummary> {
    let mut entries: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(input, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    let mut summary = CleanSummary::default();
    let (pngs, others): (Vec<PathBuf>, Vec<PathBuf>) = entries
        .into_iter()
        .filter(|p| p.is_file())
        .partition(|p| is_png(p));
    summary.skipped = others;
    if pngs.is_empty() {
        return Err(Error::data(input, "no images found"));
    }
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    for path in pngs {
        let result = GrayImage::load_png(&path).and_then(|img| {
            if img.is_binary() {
                summary.already_binary += 1;
            }
            let out = output.join(path.file_name().expect("directory entry has a name"));
            clean(&img, cfg)?.save_png(&out)?;
            Ok(out)
        });
        match result {
            Ok(out) => summary.cleaned.push(out),
            Err(e) => summary.failed.push((path, e)),
        }
    }
    Ok(summary)
}
