//! Loading class-per-directory PNG datasets, stratified splits, batching.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cleaning::GrayImage;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Side length of every dataset image.
pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_SHAPE: [usize; 3] = [IMAGE_SIDE, IMAGE_SIDE, 1];

/// Pixel normalization convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    /// `p / 255`, in [0, 1]. Classifier input.
    Unit,
    /// `p / 127.5 - 1`, in [-1, 1]. GAN input and output.
    Symmetric,
}

impl Norm {
    pub fn normalize(self, p: u8) -> f32 {
        match self {
            Norm::Unit => p as f32 / 255.0,
            Norm::Symmetric => p as f32 / 127.5 - 1.0,
        }
    }

    /// Inverse of [`Norm::normalize`], rounded and clamped to 8 bits.
    pub fn denormalize(self, v: f32) -> u8 {
        let p = match self {
            Norm::Unit => v as f64 * 255.0,
            Norm::Symmetric => (v as f64 + 1.0) * 127.5,
        };
        p.round().clamp(0.0, 255.0) as u8
    }

    pub fn range(self) -> (f32, f32) {
        match self {
            Norm::Unit => (0.0, 1.0),
            Norm::Symmetric => (-1.0, 1.0),
        }
    }
}

/// Which class directories to load.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ClassSubset {
    All,
    /// Directories whose name starts with `digit_`.
    #[default]
    Digits,
    Names(Vec<String>),
}

impl ClassSubset {
    /// `"all"`, `"digits"`, or a comma-separated list of class names.
    pub fn parse(s: &str) -> Self {
        match s.trim() {
            "all" => ClassSubset::All,
            "digits" => ClassSubset::Digits,
            list => ClassSubset::Names(
                list.split(',')
                    .map(|n| n.trim().to_string())
                    .filter(|n| !n.is_empty())
                    .collect(),
            ),
        }
    }

    /// The selected names out of `available`, sorted.
    pub fn resolve(&self, available: &[String]) -> std::result::Result<Vec<String>, String> {
        let mut chosen: Vec<String> = match self {
            ClassSubset::All => available.to_vec(),
            ClassSubset::Digits => available
                .iter()
                .filter(|n| n.starts_with("digit_"))
                .cloned()
                .collect(),
            ClassSubset::Names(names) => {
                let unknown: Vec<&str> = names
                    .iter()
                    .filter(|n| !available.contains(n))
                    .map(String::as_str)
                    .collect();
                if !unknown.is_empty() {
                    return Err(format!("unknown class(es): {}", unknown.join(", ")));
                }
                names.clone()
            }
        };
        chosen.sort();
        chosen.dedup();
        if chosen.is_empty() {
            return Err(format!("no classes match {self:?}"));
        }
        Ok(chosen)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    class_names: Vec<String>,
    norm: Norm,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_names: Vec<String>, norm: Norm) -> Result<Self> {
        if images.ndim() != 4 || images.shape()[1..] != IMAGE_SHAPE {
            return Err(Error::ShapeMismatch {
                op: "dataset images",
                left: images.shape().to_vec(),
                right: IMAGE_SHAPE.to_vec(),
            });
        }
        if images.batch() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if class_names.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one class".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: class_names.len(),
            });
        }
        let (lo, hi) = norm.range();
        if let Some(v) = images.data().iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel {v} outside the {norm:?} range")));
        }
        Ok(LabeledDataset {
            images,
            labels,
            class_names,
            norm,
        })
    }

    /// Normalize 8-bit images.
    pub fn from_gray(
        images: &[GrayImage],
        labels: Vec<usize>,
        class_names: Vec<String>,
        norm: Norm,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(images.len() * IMAGE_SIDE * IMAGE_SIDE);
        for img in images {
            if img.width() != IMAGE_SIDE || img.height() != IMAGE_SIDE {
                return Err(Error::Shape(format!(
                    "expected {IMAGE_SIDE}x{IMAGE_SIDE} image, got {}x{}",
                    img.width(),
                    img.height()
                )));
            }
            data.extend(img.pixels().iter().map(|&p| norm.normalize(p)));
        }
        let shape = [images.len(), IMAGE_SIDE, IMAGE_SIDE, 1];
        if images.is_empty() {
            return Err(Error::InvalidArgument("dataset has no images".into()));
        }
        LabeledDataset::new(Tensor::new(&shape, data)?, labels, class_names, norm)
    }

    /// Back to 8-bit images.
    pub fn to_gray(&self) -> Vec<GrayImage> {
        tensor_to_gray(&self.images, self.norm)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    /// Sub-dataset of `indices`, same classes.
    pub fn select(&self, indices: &[usize]) -> Self {
        LabeledDataset {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            norm: self.norm,
        }
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Re-express pixels under another normalization (exact on 8-bit data).
    pub fn with_norm(&self, norm: Norm) -> Self {
        if norm == self.norm {
            return self.clone();
        }
        let from = self.norm;
        LabeledDataset {
            images: self.images.map(|v| norm.normalize(from.denormalize(v))),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            norm,
        }
    }
}

/// `[n, 32, 32, 1]` tensor to 8-bit images.
pub fn tensor_to_gray(images: &Tensor, norm: Norm) -> Vec<GrayImage> {
    let side = images.shape()[1];
    let width = images.shape()[2];
    (0..images.batch())
        .map(|i| {
            let px = images.row(i).iter().map(|&v| norm.denormalize(v)).collect();
            GrayImage::new(width, side, px).expect("row length matches image shape")
        })
        .collect()
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() != want_dirs {
            continue;
        }
        if !want_dirs && !is_png(&path) {
            continue;
        }
        out.push((entry.file_name().to_string_lossy().into_owned(), path));
    }
    out.sort();
    Ok(out)
}

pub(crate) fn is_png(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Sorted class directory names under `root`.
pub fn list_classes(root: &Path) -> Result<Vec<String>> {
    Ok(sorted_entries(root, true)?.into_iter().map(|(n, _)| n).collect())
}

/// Sorted PNG paths in `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir, false)?.into_iter().map(|(_, p)| p).collect())
}

/// Load and check one 32x32 image.
pub fn read_glyph(path: &Path) -> Result<GrayImage> {
    let img = GrayImage::load_png(path)?;
    if img.width() != IMAGE_SIDE || img.height() != IMAGE_SIDE {
        return Err(Error::data(
            path,
            format!(
                "expected {IMAGE_SIDE}x{IMAGE_SIDE}, found {}x{}",
                img.width(),
                img.height()
            ),
        ));
    }
    Ok(img)
}

/// Load `root/<class>/<file>.png`. Classes and files are taken in
/// lexicographic order; label `i` is the `i`-th selected class.
pub fn load_dataset(root: &Path, subset: &ClassSubset, norm: Norm) -> Result<LabeledDataset> {
    if !root.is_dir() {
        return Err(Error::data(root, "dataset root is not a directory"));
    }
    let classes = subset
        .resolve(&list_classes(root)?)
        .map_err(|m| Error::data(root, m))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        let dir = root.join(class);
        let files = list_pngs(&dir)?;
        if files.is_empty() {
            return Err(Error::data(&dir, "class directory holds no PNG files"));
        }
        for file in files {
            images.push(read_glyph(&file)?);
            labels.push(label);
        }
    }
    LabeledDataset::from_gray(&images, labels, classes, norm)
}

/// Load `root/Train` and `root/Test` when both exist, as an alternative
/// to [`split`].
pub fn load_train_test(
    root: &Path,
    subset: &ClassSubset,
    norm: Norm,
) -> Result<Option<(LabeledDataset, LabeledDataset)>> {
    let (train, test) = (root.join("Train"), root.join("Test"));
    if !(train.is_dir() && test.is_dir()) {
        return Ok(None);
    }
    let train = load_dataset(&train, subset, norm)?;
    let test = load_dataset(&test, subset, norm)?;
    if train.class_names() != test.class_names() {
        return Err(Error::data(root, "Train and Test hold different classes"));
    }
    Ok(Some((train, test)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 42,
        }
    }
}

/// Train-side sample count for a class of `n`: `round(n * fraction)`,
/// kept within `[1, n - 1]` so both sides see every class.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Per-class stratified shuffle split, returned as index lists (each sorted).
pub fn split_indices(ds: &LabeledDataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut rng = Rng::new(spec.seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in 0..ds.num_classes() {
        let mut idx = ds.indices_of_class(class);
        if idx.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class {:?} has {} sample(s); a stratified split needs at least 2",
                ds.class_names()[class],
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        let k = train_count(idx.len(), spec.train_fraction);
        train.extend_from_slice(&idx[..k]);
        val.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, val) = split_indices(ds, spec)?;
    Ok((ds.select(&train), ds.select(&val)))
}

/// One shuffled pass over a dataset in batches; the last batch may be short.
pub struct Batches<'a> {
    ds: &'a LabeledDataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl Batches<'_> {
    /// Dataset indices in emission order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let labels = idx.iter().map(|&i| self.ds.labels[i]).collect();
        Some((self.ds.images.select(idx), labels))
    }
}

pub fn batches<'a>(ds: &'a LabeledDataset, batch_size: usize, rng: &mut Rng) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    Ok(Batches {
        ds,
        order: rng.permutation(ds.len()),
        pos: 0,
        batch_size,
    })
}

pub fn to_onehot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::LabelOutOfRange { label, num_classes });
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no labels to encode".into()));
    }
    Ok(Tensor::from_fn(&[labels.len(), num_classes], |i| {
        if labels[i / num_classes] == i % num_classes {
            1.0
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(per_class: &[usize]) -> LabeledDataset {
        let n: usize = per_class.iter().sum();
        let labels: Vec<usize> = per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
            .collect();
        let images = Tensor::from_fn(&[n, 32, 32, 1], |i| ((i / 1024) % 256) as f32 / 255.0);
        let names = (0..per_class.len()).map(|c| format!("c{c}")).collect();
        LabeledDataset::new(images, labels, names, Norm::Unit).unwrap()
    }

    #[test]
    fn normalization_round_trips_every_byte() {
        for norm in [Norm::Unit, Norm::Symmetric] {
            let (lo, hi) = norm.range();
            for p in 0..=255u8 {
                let v = norm.normalize(p);
                assert!((lo..=hi).contains(&v));
                assert_eq!(norm.denormalize(v), p);
            }
        }
        assert_eq!(Norm::Symmetric.normalize(0), -1.0);
        assert_eq!(Norm::Symmetric.normalize(255), 1.0);
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = toy(&[10, 7, 2]);
        let (tr, va) = split_indices(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(tr.len() + va.len(), ds.len());
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        let count = |ix: &[usize], c| ix.iter().filter(|&&i| ds.labels()[i] == c).count();
        assert_eq!((count(&tr, 0), count(&va, 0)), (8, 2));
        assert_eq!((count(&tr, 1), count(&va, 1)), (6, 1));
        assert_eq!((count(&tr, 2), count(&va, 2)), (1, 1));
        assert_eq!(train_count(2000, 0.8), 1600);
    }

    #[test]
    fn split_needs_two_per_class() {
        assert!(split(&toy(&[3, 1]), &SplitSpec::default()).is_err());
        let bad = SplitSpec {
            train_fraction: 1.0,
            seed: 0,
        };
        assert!(split(&toy(&[3, 3]), &bad).is_err());
    }

    #[test]
    fn batch_sizes() {
        let ds = toy(&[10]);
        let sizes: Vec<usize> = batches(&ds, 4, &mut Rng::new(1))
            .unwrap()
            .map(|(x, l)| {
                assert_eq!(x.batch(), l.len());
                l.len()
            })
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert!(batches(&ds, 0, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn onehot() {
        let t = to_onehot(&[0, 2], 3).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.argmax_rows(), vec![0, 2]);
        assert!(matches!(
            to_onehot(&[3], 3),
            Err(Error::LabelOutOfRange { label: 3, num_classes: 3 })
        ));
    }

    #[test]
    fn invariants_are_checked() {
        let images = Tensor::zeros(&[1, 32, 32, 1]);
        assert!(LabeledDataset::new(images.clone(), vec![1], vec!["a".into()], Norm::Unit).is_err());
        let neg = Tensor::full(&[1, 32, 32, 1], -0.5);
        assert!(LabeledDataset::new(neg, vec![0], vec!["a".into()], Norm::Unit).is_err());
        let wrong = Tensor::zeros(&[1, 28, 28, 1]);
        assert!(LabeledDataset::new(wrong, vec![0], vec!["a".into()], Norm::Unit).is_err());
    }

    #[test]
    fn subset_parsing() {
        assert_eq!(ClassSubset::parse("digits"), ClassSubset::Digits);
        assert_eq!(ClassSubset::parse("all"), ClassSubset::All);
        assert_eq!(
            ClassSubset::parse("b, a"),
            ClassSubset::Names(vec!["b".into(), "a".into()])
        );
    }
}
