//! Slow, direct reference implementations used to check the library.

use devgan::cleaning::GrayImage;
use devgan::Rng;

/// Threshold maximizing the between-class variance w0·w1·(m0 − m1)², found
/// by splitting the raw pixels at every t in 0..=255. Splits with an empty
/// side are skipped; the lowest t wins ties. A constant image yields its
/// value.
pub fn exhaustive_otsu(img: &GrayImage) -> u8 {
    let px = img.pixels();
    let n = px.len() as f64;
    let mut best: Option<(f64, u8)> = None;
    for t in 0..=255u8 {
        let (mut n0, mut s0, mut n1, mut s1) = (0.0, 0.0, 0.0, 0.0);
        for &p in px {
            if p <= t {
                n0 += 1.0;
                s0 += p as f64;
            } else {
                n1 += 1.0;
                s1 += p as f64;
            }
        }
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let (w0, w1) = (n0 / n, n1 / n);
        let d = s0 / n0 - s1 / n1;
        let score = w0 * w1 * d * d;
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, t));
        }
    }
    best.map_or(px[0], |(_, t)| t)
}

fn clamped(img: &GrayImage, x: isize, y: isize) -> u8 {
    let cx = x.clamp(0, img.width() as isize - 1) as usize;
    let cy = y.clamp(0, img.height() as isize - 1) as usize;
    img.get(cx, cy)
}

fn window(img: &GrayImage, pick: fn(u8, u8) -> u8) -> GrayImage {
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let mut v = img.get(x, y);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    v = pick(v, clamped(img, x as isize + dx, y as isize + dy));
                }
            }
            out.set(x, y, v);
        }
    }
    out
}

/// Minimum over the 3×3 neighbourhood, borders replicated.
pub fn window_min(img: &GrayImage) -> GrayImage {
    window(img, u8::min)
}

/// Maximum over the 3×3 neighbourhood, borders replicated.
pub fn window_max(img: &GrayImage) -> GrayImage {
    window(img, u8::max)
}

/// 3×3 Gaussian blur by direct summation with a kernel built from
/// exp(−(dx² + dy²) / 2σ²), borders replicated, rounded to nearest.
pub fn direct_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let mut k = [[0.0f64; 3]; 3];
    let mut total = 0.0;
    for dy in -1i32..=1 {
        for dx in -1i32..=1 {
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            k[(dy + 1) as usize][(dx + 1) as usize] = w;
            total += w;
        }
    }
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            let mut acc = 0.0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let w = k[(dy + 1) as usize][(dx + 1) as usize] / total;
                    acc += w * clamped(img, x as isize + dx, y as isize + dy) as f64;
                }
            }
            out.set(x, y, acc.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// A 32×32 test image drawn from one of several pixel distributions:
/// uniform, two-level, few distinct values, or two Gaussian clusters.
pub fn random_gray(rng: &mut Rng) -> GrayImage {
    let side = 32;
    let kind = rng.below(4);
    let levels: Vec<u8> = (0..1 + rng.below(5)).map(|_| rng.below(256) as u8).collect();
    let (a, b) = (rng.uniform_range(0.0, 120.0), rng.uniform_range(135.0, 255.0));
    let mut px = Vec::with_capacity(side * side);
    for _ in 0..side * side {
        let v = match kind {
            0 => rng.below(256) as f64,
            1 => {
                if rng.bernoulli(0.3) {
                    255.0
                } else {
                    0.0
                }
            }
            2 => levels[rng.below(levels.len())] as f64,
            _ => {
                let centre = if rng.bernoulli(0.4) { b } else { a };
                centre + 18.0 * rng.normal()
            }
        };
        px.push(v.round().clamp(0.0, 255.0) as u8);
    }
    GrayImage::new(side, side, px).unwrap()
}

/// A binary image with the given fraction of white pixels.
pub fn random_binary(rng: &mut Rng, width: usize, height: usize, density: f64) -> GrayImage {
    let px = (0..width * height)
        .map(|_| if rng.bernoulli(density) { 255 } else { 0 })
        .collect();
    GrayImage::new(width, height, px).unwrap()
}

/// Pixelwise `a <= b`.
pub fn below_or_equal(a: &GrayImage, b: &GrayImage) -> bool {
    a.pixels().iter().zip(b.pixels()).all(|(x, y)| x <= y)
}
