//! Synthetic ten-class handwritten-digit stand-in.
//!
//! Each class is a fixed set of strokes (polylines in the unit square)
//! drawn white on black inside the central 28x28 of a 32x32 canvas, with a
//! random affine jitter, per-point wobble and stroke width per sample.
//! Written to disk it has the same `root/digit_<k>/<file>.png` layout as
//! the real dataset.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::cleaning::GrayImage;
use crate::data::{LabeledDataset, Norm, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const NUM_CLASSES: usize = 10;

/// Glyph box inside the canvas.
const GLYPH_SIDE: f64 = 28.0;

type Stroke = Vec<(f64, f64)>;

pub fn class_name(class: usize) -> String {
    format!("digit_{class}")
}

pub fn class_names() -> Vec<String> {
    (0..NUM_CLASSES).map(class_name).collect()
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Stroke {
    let n = 14;
    (0..=n)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / n as f64) * PI / 180.0;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn line(points: &[(f64, f64)]) -> Stroke {
    points.to_vec()
}

/// Strokes of each class in unit coordinates, y pointing down. Angles are
/// in degrees, clockwise on screen.
fn strokes(class: usize) -> Vec<Stroke> {
    match class {
        0 => vec![arc(0.5, 0.5, 0.3, 0.42, 0.0, 360.0)],
        1 => vec![line(&[(0.35, 0.25), (0.55, 0.08), (0.55, 0.92)]), line(&[(0.35, 0.92), (0.75, 0.92)])],
        2 => vec![
            arc(0.5, 0.3, 0.28, 0.22, 190.0, 380.0),
            line(&[(0.76, 0.38), (0.2, 0.92), (0.82, 0.92)]),
        ],
        3 => vec![arc(0.48, 0.3, 0.26, 0.21, 200.0, 450.0), arc(0.48, 0.71, 0.3, 0.21, 270.0, 520.0)],
        4 => vec![line(&[(0.66, 0.92), (0.66, 0.08), (0.15, 0.64), (0.85, 0.64)])],
        5 => vec![
            line(&[(0.78, 0.08), (0.28, 0.08), (0.24, 0.45)]),
            arc(0.48, 0.65, 0.29, 0.26, 220.0, 500.0),
        ],
        6 => vec![arc(0.6, 0.55, 0.36, 0.45, 285.0, 160.0), arc(0.5, 0.68, 0.27, 0.24, 0.0, 360.0)],
        7 => vec![line(&[(0.18, 0.08), (0.82, 0.08), (0.4, 0.92)]), line(&[(0.38, 0.5), (0.72, 0.5)])],
        8 => vec![arc(0.5, 0.28, 0.22, 0.2, 0.0, 360.0), arc(0.5, 0.7, 0.28, 0.22, 0.0, 360.0)],
        9 => vec![arc(0.5, 0.3, 0.26, 0.22, 0.0, 360.0), line(&[(0.76, 0.3), (0.72, 0.6), (0.42, 0.92)])],
        _ => unreachable!("class index checked by caller"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Draw one sample of `class`.
pub fn render_glyph(class: usize, rng: &mut Rng) -> Result<GrayImage> {
    if class >= NUM_CLASSES {
        return Err(Error::LabelOutOfRange {
            label: class,
            num_classes: NUM_CLASSES,
        });
    }
    let angle = rng.uniform_range(-12.0, 12.0) * PI / 180.0;
    let shear = rng.uniform_range(-0.2, 0.2);
    let sx = rng.uniform_range(0.8, 1.0);
    let sy = rng.uniform_range(0.85, 1.0);
    let (tx, ty) = (rng.uniform_range(-1.5, 1.5), rng.uniform_range(-1.5, 1.5));
    let half_width = rng.uniform_range(0.9, 1.7);
    let wobble = 0.035;

    let (cos, sin) = (angle.cos(), angle.sin());
    let centre = IMAGE_SIDE as f64 / 2.0;
    let to_canvas = |(u, v): (f64, f64)| {
        let (x, y) = ((u - 0.5) * sx, (v - 0.5) * sy);
        let x = x + shear * y;
        let (x, y) = (cos * x - sin * y, sin * x + cos * y);
        (centre + GLYPH_SIDE * x + tx, centre + GLYPH_SIDE * y + ty)
    };

    let mut segments = Vec::new();
    for stroke in strokes(class) {
        let pts: Vec<(f64, f64)> = stroke
            .into_iter()
            .map(|(u, v)| {
                let u = u + rng.uniform_range(-wobble, wobble);
                let v = v + rng.uniform_range(-wobble, wobble);
                to_canvas((u, v))
            })
            .collect();
        segments.extend(pts.windows(2).map(|w| (w[0], w[1])));
    }
    // shrink toward the centre if jitter pushed ink past the glyph box
    let reach = segments
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .map(|(x, y)| (x - centre).abs().max((y - centre).abs()))
        .fold(0.0, f64::max)
        + half_width
        + 0.5;
    let limit = GLYPH_SIDE / 2.0;
    if reach > limit {
        let k = (limit - half_width - 0.5) / (reach - half_width - 0.5);
        let fit = |(x, y): (f64, f64)| (centre + k * (x - centre), centre + k * (y - centre));
        for seg in &mut segments {
            *seg = (fit(seg.0), fit(seg.1));
        }
    }

    let mut img = GrayImage::filled(IMAGE_SIDE, IMAGE_SIDE, 0);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = segments
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            // one-pixel linear ramp at the stroke edge
            let cover = (half_width - d + 0.5).clamp(0.0, 1.0);
            img.set(x, y, (cover * 255.0).round() as u8);
        }
    }
    Ok(img)
}

/// `per_class` samples of every class, labels in class order. Sample `i`
/// of class `c` depends only on `(seed, c, i)`.
pub fn glyphs(per_class: usize, seed: u64) -> Result<(Vec<GrayImage>, Vec<usize>)> {
    let mut images = Vec::with_capacity(per_class * NUM_CLASSES);
    let mut labels = Vec::with_capacity(per_class * NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        for i in 0..per_class {
            let mut rng = Rng::stream(seed, (class * 1_000_000 + i) as u64);
            images.push(render_glyph(class, &mut rng)?);
            labels.push(class);
        }
    }
    Ok((images, labels))
}

pub fn synthetic_dataset(per_class: usize, seed: u64, norm: Norm) -> Result<LabeledDataset> {
    let (images, labels) = glyphs(per_class, seed)?;
    LabeledDataset::from_gray(&images, labels, class_names(), norm)
}

/// Write `root/digit_<k>/<i>.png`.
pub fn write_synthetic_tree(root: &Path, per_class: usize, seed: u64) -> Result<()> {
    let (images, labels) = glyphs(per_class, seed)?;
    for class in 0..NUM_CLASSES {
        let dir = root.join(class_name(class));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (i, (img, &label)) in images.iter().zip(&labels).enumerate() {
        let path = root
            .join(class_name(label))
            .join(format!("{:05}.png", i % per_class.max(1)));
        img.save_png(&path)?;
    }
    Ok(())
}
