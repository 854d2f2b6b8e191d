//! Browser bindings for the cleaning pipeline: draw a noisy glyph, run the
//! cleaning stages on it, and inspect the Otsu histogram.
//!
//! Images cross the boundary as row-major 32x32 grayscale byte arrays.

use devgan::cleaning::{clean_stages, histogram, CleaningConfig, GrayImage, Inversion};
use devgan::synth::{render_glyph, NUM_CLASSES};
use devgan::Rng;
use wasm_bindgen::prelude::*;

pub const SIDE: usize = 32;

fn to_image(pixels: &[u8]) -> Result<GrayImage, JsError> {
    GrayImage::new(SIDE, SIDE, pixels.to_vec()).map_err(|e| JsError::new(&e.to_string()))
}

/// A synthetic digit with additive Gaussian noise of standard deviation
/// `noise` (in gray levels), similar to what an undertrained generator
/// produces.
#[wasm_bindgen]
pub fn noisy_glyph(digit: usize, seed: u64, noise: f64) -> Result<Vec<u8>, JsError> {
    if digit >= NUM_CLASSES {
        return Err(JsError::new(&format!("digit must be below {NUM_CLASSES}")));
    }
    let mut rng = Rng::new(seed);
    let glyph = render_glyph(digit, &mut rng).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(glyph
        .pixels()
        .iter()
        .map(|&p| (p as f64 + noise * rng.normal()).round().clamp(0.0, 255.0) as u8)
        .collect())
}

/// Every stage of the cleaning pipeline.
#[wasm_bindgen]
pub struct Cleaned {
    threshold: u8,
    inverted: bool,
    stages: Vec<u8>,
}

#[wasm_bindgen]
impl Cleaned {
    #[wasm_bindgen(getter)]
    pub fn threshold(&self) -> u8 {
        self.threshold
    }

    #[wasm_bindgen(getter)]
    pub fn inverted(&self) -> bool {
        self.inverted
    }

    /// Blurred, thresholded, opened, closed and final images, concatenated.
    #[wasm_bindgen(getter)]
    pub fn stages(&self) -> Vec<u8> {
        self.stages.clone()
    }
}

/// Run blur, Otsu, opening, closing and NOT. `invert` is `"always"`,
/// `"skip"` or `"dark-background"`.
#[wasm_bindgen]
pub fn clean(pixels: &[u8], sigma: f64, invert: &str) -> Result<Cleaned, JsError> {
    let inversion = match invert {
        "always" => Inversion::Always,
        "skip" => Inversion::Skip,
        "dark-background" => Inversion::DarkBackground,
        other => return Err(JsError::new(&format!("unknown inversion mode {other:?}"))),
    };
    let s = clean_stages(&to_image(pixels)?, &CleaningConfig { sigma, inversion })
        .map_err(|e| JsError::new(&e.to_string()))?;
    let mut stages = Vec::with_capacity(5 * SIDE * SIDE);
    for img in [&s.blurred, &s.binary, &s.opened, &s.closed, &s.output] {
        stages.extend_from_slice(img.pixels());
    }
    Ok(Cleaned {
        threshold: s.threshold,
        inverted: s.inverted,
        stages,
    })
}

/// 256-bin histogram of an image.
#[wasm_bindgen]
pub fn gray_histogram(pixels: &[u8]) -> Result<Vec<u32>, JsError> {
    Ok(histogram(&to_image(pixels)?).iter().map(|&c| c as u32).collect())
}

/// Between-class variance w0·w1·(m0 − m1)² for every threshold t, where
/// class 0 holds the pixels ≤ t. Zero where one class is empty.
#[wasm_bindgen]
pub fn between_class_variance(pixels: &[u8]) -> Result<Vec<f64>, JsError> {
    let hist = histogram(&to_image(pixels)?);
    let n: f64 = hist.iter().sum::<u64>() as f64;
    let total: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();
    let (mut n0, mut s0) = (0.0, 0.0);
    Ok(hist
        .iter()
        .enumerate()
        .map(|(t, &c)| {
            n0 += c as f64;
            s0 += t as f64 * c as f64;
            let n1 = n - n0;
            if n0 == 0.0 || n1 == 0.0 {
                return 0.0;
            }
            let d = s0 / n0 - (total - s0) / n1;
            (n0 / n) * (n1 / n) * d * d
        })
        .collect())
}
