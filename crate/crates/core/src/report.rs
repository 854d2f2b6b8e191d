//! Metric tables: scoring classifiers on a dataset, building generated
//! datasets from per-class GANs, and rendering/parsing reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::classifier::{evaluate, TrainReport, TrainedClassifier};
use crate::cleaning::{clean, CleaningConfig, GrayImage};
use crate::data::{tensor_to_gray, LabeledDataset, Norm};
use crate::error::{Error, Result};
use crate::gan::{generate, tile, GanCheckpoint};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub classifier: String,
    pub loss: f64,
    pub accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dataset_name: String,
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl MetricsReport {
    pub fn new(dataset_name: &str) -> Self {
        MetricsReport {
            dataset_name: dataset_name.to_string(),
            rows: Vec::new(),
        }
    }

    fn has_val(&self) -> bool {
        self.rows.iter().any(|r| r.val_loss.is_some() || r.val_accuracy.is_some())
    }

    fn columns(&self) -> Vec<&'static str> {
        let mut c = vec!["classifier", "loss", "accuracy"];
        if self.has_val() {
            c.extend(["val_loss", "val_accuracy"]);
        }
        c
    }

    fn cells(&self, row: &MetricsRow) -> Vec<String> {
        let num = |v: f64| format!("{v:.4}");
        let mut c = vec![row.classifier.clone(), num(row.loss), num(row.accuracy)];
        if self.has_val() {
            for v in [row.val_loss, row.val_accuracy] {
                c.push(v.map(num).unwrap_or_default());
            }
        }
        c
    }

    /// Columns `classifier, loss, accuracy[, val_loss, val_accuracy]`, four
    /// decimals. The validation columns appear when any row has them.
    pub fn render(&self, format: ReportFormat) -> String {
        let cols = self.columns();
        let mut out = String::new();
        match format {
            ReportFormat::Csv => {
                out.push_str(&cols.join(","));
                out.push('\n');
                for r in &self.rows {
                    out.push_str(&self.cells(r).join(","));
                    out.push('\n');
                }
            }
            ReportFormat::Markdown => {
                writeln!(out, "| {} |", cols.join(" | ")).unwrap();
                let align: Vec<&str> = cols
                    .iter()
                    .map(|c| if *c == "classifier" { "---" } else { "---:" })
                    .collect();
                writeln!(out, "| {} |", align.join(" | ")).unwrap();
                for r in &self.rows {
                    writeln!(out, "| {} |", self.cells(r).join(" | ")).unwrap();
                }
            }
        }
        out
    }

    /// Inverse of the CSV rendering.
    pub fn parse_csv(dataset_name: &str, text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidArgument(format!("report csv: {m}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty input".into()))?.split(',').collect();
        let with_val = match header.as_slice() {
            ["classifier", "loss", "accuracy"] => false,
            ["classifier", "loss", "accuracy", "val_loss", "val_accuracy"] => true,
            _ => return Err(bad(format!("unexpected header {header:?}"))),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(bad(format!("row {line:?} has {} fields", f.len())));
            }
            rows.push(MetricsRow {
                classifier: f[0].to_string(),
                loss: num(f[1])?,
                accuracy: num(f[2])?,
                val_loss: if with_val { opt(f[3])? } else { None },
                val_accuracy: if with_val { opt(f[4])? } else { None },
            });
        }
        Ok(MetricsReport {
            dataset_name: dataset_name.to_string(),
            rows,
        })
    }

    /// `report_<name>.csv` and `report_<name>.md` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (ext, format) in [("csv", ReportFormat::Csv), ("md", ReportFormat::Markdown)] {
            let path = dir.join(format!("report_{}.{ext}", self.dataset_name));
            fs::write(&path, self.render(format)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn row(&self, classifier: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.classifier == classifier)
    }
}

/// One row per trained classifier, taken from its best-validation epoch.
pub fn training_report(name: &str, runs: &[(String, &TrainReport)]) -> MetricsReport {
    let mut report = MetricsReport::new(name);
    for (classifier, run) in runs {
        if let Some(best) = run.best() {
            report.rows.push(MetricsRow {
                classifier: classifier.clone(),
                loss: best.loss,
                accuracy: best.accuracy,
                val_loss: Some(best.val_loss),
                val_accuracy: Some(best.val_accuracy),
            });
        }
    }
    report
}

/// Evaluate every classifier on `ds` (unit normalization).
pub fn score_dataset(classifiers: &[TrainedClassifier], ds: &LabeledDataset, name: &str) -> Result<MetricsReport> {
    let mut report = MetricsReport::new(name);
    for c in classifiers {
        let width = c.network.output_shape().iter().product::<usize>();
        if width != ds.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "classifier {} outputs {width} classes but dataset {name:?} has {}",
                c.id,
                ds.num_classes()
            )));
        }
        if c.class_names != ds.class_names() {
            return Err(Error::InvalidArgument(format!(
                "classifier {} was trained on different classes than dataset {name:?}",
                c.id
            )));
        }
        let e = evaluate(&c.network, ds)?;
        report.rows.push(MetricsRow {
            classifier: c.id.name().to_string(),
            loss: e.loss,
            accuracy: e.accuracy,
            val_loss: None,
            val_accuracy: None,
        });
    }
    Ok(report)
}

/// Raw and cleaned samples generated from the same latents.
#[derive(Debug, Clone)]
pub struct GeneratedPair {
    pub raw: Vec<GrayImage>,
    pub cleaned: Vec<GrayImage>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl GeneratedPair {
    pub fn raw_dataset(&self) -> Result<LabeledDataset> {
        LabeledDataset::from_gray(&self.raw, self.labels.clone(), self.class_names.clone(), Norm::Unit)
    }

    pub fn cleaned_dataset(&self) -> Result<LabeledDataset> {
        LabeledDataset::from_gray(&self.cleaned, self.labels.clone(), self.class_names.clone(), Norm::Unit)
    }
}

/// Pair each checkpoint with the index of its class in `class_names`,
/// sorted by that index.
fn label_checkpoints<'a>(ckpts: &'a [GanCheckpoint], class_names: &[String]) -> Result<Vec<(usize, &'a GanCheckpoint)>> {
    let mut out = Vec::with_capacity(ckpts.len());
    for c in ckpts {
        let label = class_names.iter().position(|n| n == &c.class_name).ok_or_else(|| {
            Error::InvalidArgument(format!("GAN checkpoint class {:?} is not a known class", c.class_name))
        })?;
        if out.iter().any(|&(l, _)| l == label) {
            return Err(Error::InvalidArgument(format!("two GAN checkpoints for class {:?}", c.class_name)));
        }
        out.push((label, c));
    }
    out.sort_by_key(|&(l, _)| l);
    Ok(out)
}

/// Classes of `wanted` that have no checkpoint in `ckpts`.
pub fn missing_classes(ckpts: &[GanCheckpoint], wanted: &[String]) -> Vec<String> {
    wanted
        .iter()
        .filter(|w| !ckpts.iter().any(|c| &c.class_name == *w))
        .cloned()
        .collect()
}

/// `per_class` samples from each GAN, labelled with the GAN's class (its
/// index in `class_names`), denormalized to 8 bits, plus their cleaned
/// versions. Class `i` draws its latents from `Rng::stream(seed, i)`.
pub fn generate_pair(
    ckpts: &[GanCheckpoint],
    class_names: &[String],
    per_class: usize,
    seed: u64,
    cleaning: &CleaningConfig,
) -> Result<GeneratedPair> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("per-class sample count must be at least 1".into()));
    }
    if ckpts.is_empty() {
        return Err(Error::InvalidArgument("no GAN checkpoints to sample from".into()));
    }
    let mut raw = Vec::with_capacity(per_class * ckpts.len());
    let mut labels = Vec::with_capacity(raw.capacity());
    for (label, ckpt) in label_checkpoints(ckpts, class_names)? {
        let mut rng = Rng::stream(seed, label as u64);
        let samples = generate(ckpt, per_class, &mut rng)?;
        raw.extend(tensor_to_gray(&samples, Norm::Symmetric));
        labels.extend(std::iter::repeat_n(label, per_class));
    }
    let cleaned = raw.iter().map(|img| clean(img, cleaning)).collect::<Result<Vec<_>>>()?;
    Ok(GeneratedPair {
        raw,
        cleaned,
        labels,
        class_names: class_names.to_vec(),
    })
}

/// Generated dataset in unit normalization, raw or cleaned.
pub fn build_generated_dataset(
    ckpts: &[GanCheckpoint],
    class_names: &[String],
    per_class: usize,
    seed: u64,
    cleaning: Option<&CleaningConfig>,
) -> Result<LabeledDataset> {
    match cleaning {
        Some(cfg) => generate_pair(ckpts, class_names, per_class, seed, cfg)?.cleaned_dataset(),
        None => {
            let pair = generate_pair(ckpts, class_names, per_class, seed, &CleaningConfig::default())?;
            pair.raw_dataset()
        }
    }
}

/// 5x5 grid of images spread evenly over `images`.
pub fn overview_grid(images: &[GrayImage]) -> GrayImage {
    let n = images.len();
    let picks: Vec<GrayImage> = (0..25.min(n)).map(|k| images[k * n / 25.min(n)].clone()).collect();
    tile(&picks, 5)
}
