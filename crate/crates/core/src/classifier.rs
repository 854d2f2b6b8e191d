//! The three judge classifiers: a dense net (c1) and two conv nets (c2, c3).

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{batches, to_onehot, LabeledDataset, Norm, IMAGE_SHAPE};
use crate::error::{CheckpointError, Error, Result};
use crate::kernels::Padding;
use crate::nn::checkpoint::{self, Archive};
use crate::nn::{
    per_sample_loss, Activation, Adam, LayerSpec, LossKind, Network, OptimizerConfig, RmsProp, Target,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CLASSIFIER_BN_MOMENTUM: f64 = 0.9;
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierId {
    C1,
    C2,
    C3,
}

impl ClassifierId {
    pub const ALL: [ClassifierId; 3] = [ClassifierId::C1, ClassifierId::C2, ClassifierId::C3];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierId::C1 => "c1",
            ClassifierId::C2 => "c2",
            ClassifierId::C3 => "c3",
        }
    }

    /// c1: sparse CE + Adam; c2: categorical CE + Adam; c3: categorical CE + RMSprop.
    pub fn compile_settings(self) -> (OptimizerConfig, LossKind) {
        match self {
            ClassifierId::C1 => (OptimizerConfig::Adam(Adam::default()), LossKind::SparseCategoricalCe),
            ClassifierId::C2 => (OptimizerConfig::Adam(Adam::default()), LossKind::CategoricalCe),
            ClassifierId::C3 => (OptimizerConfig::RmsProp(RmsProp::default()), LossKind::CategoricalCe),
        }
    }
}

impl fmt::Display for ClassifierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Ok(ClassifierId::C1),
            "c2" => Ok(ClassifierId::C2),
            "c3" => Ok(ClassifierId::C3),
            _ => Err(Error::InvalidArgument(format!("unknown classifier {s:?} (expected c1, c2 or c3)"))),
        }
    }
}

/// Widths of the convolutional classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvArch {
    pub filters: [usize; 3],
    pub dense: [usize; 2],
    pub dense_dropout: [f64; 2],
    /// BatchNorm after each hidden dense layer.
    pub dense_batchnorm: bool,
}

impl ConvArch {
    pub fn c2() -> Self {
        ConvArch {
            filters: [64, 32, 16],
            dense: [128, 32],
            dense_dropout: [0.25, 0.5],
            dense_batchnorm: false,
        }
    }

    pub fn c3() -> Self {
        ConvArch {
            filters: [32, 64, 32],
            dense: [256, 64],
            dense_dropout: [0.25, 0.5],
            dense_batchnorm: true,
        }
    }

    /// Three conv blocks (conv, BN, ReLU, 2x2 max-pool, dropout 0.25) with
    /// 5x5 same, 3x3 valid and 3x3 same convolutions, then the dense head.
    pub fn layers(&self, num_classes: usize) -> Vec<LayerSpec> {
        let convs = [(5, Padding::Same), (3, Padding::Valid), (3, Padding::Same)];
        let mut specs = Vec::new();
        for (&filters, (k, padding)) in self.filters.iter().zip(convs) {
            specs.extend([
                LayerSpec::conv(filters, k, padding),
                LayerSpec::batchnorm(CLASSIFIER_BN_MOMENTUM),
                LayerSpec::relu(),
                LayerSpec::maxpool(2, 2),
                LayerSpec::dropout(0.25),
            ]);
        }
        specs.push(LayerSpec::Flatten);
        for (&units, &rate) in self.dense.iter().zip(&self.dense_dropout) {
            specs.push(LayerSpec::dense(units));
            if self.dense_batchnorm {
                specs.push(LayerSpec::batchnorm(CLASSIFIER_BN_MOMENTUM));
            }
            specs.push(LayerSpec::relu());
            specs.push(LayerSpec::dropout(rate));
        }
        specs.push(LayerSpec::dense(num_classes));
        specs.push(LayerSpec::act(Activation::Softmax));
        specs
    }
}

pub fn classifier_layers(id: ClassifierId, num_classes: usize) -> Vec<LayerSpec> {
    match id {
        ClassifierId::C1 => vec![
            LayerSpec::Flatten,
            LayerSpec::dense(128),
            LayerSpec::relu(),
            LayerSpec::dense(128),
            LayerSpec::relu(),
            LayerSpec::dense(num_classes),
            LayerSpec::act(Activation::Softmax),
        ],
        ClassifierId::C2 => ConvArch::c2().layers(num_classes),
        ClassifierId::C3 => ConvArch::c3().layers(num_classes),
    }
}

/// Freshly initialized, compiled classifier for 32x32x1 inputs.
pub fn build_classifier(id: ClassifierId, num_classes: usize, rng: &mut Rng) -> Result<Network> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!("a classifier needs at least 2 classes, got {num_classes}")));
    }
    let mut net = Network::new(&IMAGE_SHAPE, classifier_layers(id, num_classes), rng)?;
    let (opt, loss) = id.compile_settings();
    net.compile(opt, loss)?;
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 30,
            batch_size: 64,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    /// Set when training stopped on a non-finite loss.
    pub aborted: Option<String>,
}

pub const TRAIN_REPORT_HEADER: &str = "epoch,loss,accuracy,val_loss,val_accuracy";

impl TrainReport {
    /// Row with the highest validation accuracy (earliest on ties).
    pub fn best(&self) -> Option<&EpochRow> {
        self.rows
            .iter()
            .fold(None, |best: Option<&EpochRow>, r| match best {
                Some(b) if b.val_accuracy >= r.val_accuracy => Some(b),
                _ => Some(r),
            })
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAIN_REPORT_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.loss, r.accuracy, r.val_loss, r.val_accuracy
            )
            .expect("string write");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(pred: &Tensor, labels: &[usize]) -> f64 {
    let hits = pred
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

fn check_compatible(net: &Network, ds: &LabeledDataset) -> Result<()> {
    if ds.norm() != Norm::Unit {
        return Err(Error::InvalidArgument("classifiers take unit-normalized images".into()));
    }
    if net.output_shape() != [ds.num_classes()] {
        return Err(Error::ShapeMismatch {
            op: "classifier output width vs dataset classes",
            left: net.output_shape().to_vec(),
            right: vec![ds.num_classes()],
        });
    }
    Ok(())
}

fn target<'a>(kind: LossKind, labels: &'a [usize], onehot: &'a Option<Tensor>) -> Target<'a> {
    match (kind, onehot) {
        (LossKind::SparseCategoricalCe, _) | (_, None) => Target::Sparse(labels),
        (_, Some(t)) => Target::Dense(t),
    }
}

/// Inference-mode loss and accuracy, computed `chunk` samples at a time.
/// The loss is the network's training loss kind.
pub fn evaluate_chunked(net: &Network, ds: &LabeledDataset, chunk: usize) -> Result<Evaluation> {
    check_compatible(net, ds)?;
    let kind = net.loss_kind().unwrap_or(LossKind::CategoricalCe);
    let chunk = chunk.max(1);
    let (mut loss_sum, mut hits) = (0.0f64, 0.0f64);
    let all: Vec<usize> = (0..ds.len()).collect();
    for idx in all.chunks(chunk) {
        let x = ds.images().select(idx);
        let labels: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
        let pred = net.predict(&x)?;
        let onehot = match kind {
            LossKind::CategoricalCe => Some(to_onehot(&labels, ds.num_classes())?),
            _ => None,
        };
        loss_sum += per_sample_loss(kind, &pred, &target(kind, &labels, &onehot))?
            .iter()
            .sum::<f64>();
        hits += accuracy(&pred, &labels) * idx.len() as f64;
    }
    let n = ds.len().max(1) as f64;
    Ok(Evaluation {
        loss: loss_sum / n,
        accuracy: hits / n,
    })
}

pub fn evaluate(net: &Network, ds: &LabeledDataset) -> Result<Evaluation> {
    evaluate_chunked(net, ds, EVAL_CHUNK)
}

/// Mini-batch training with per-epoch validation. Returns the network from
/// the epoch with the best validation accuracy and the full report. A
/// non-finite loss stops training and sets [`TrainReport::aborted`].
pub fn train_classifier(
    id: ClassifierId,
    train: &LabeledDataset,
    val: &LabeledDataset,
    settings: &TrainSettings,
) -> Result<(Network, TrainReport)> {
    if settings.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    if train.class_names() != val.class_names() {
        return Err(Error::InvalidArgument("train and validation sets hold different classes".into()));
    }
    let mut net = build_classifier(id, train.num_classes(), &mut Rng::new(settings.seed))?;
    check_compatible(&net, train)?;
    let kind = id.compile_settings().1;
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Network)> = None;

    'epochs: for epoch in 1..=settings.epochs {
        let mut rng = Rng::stream(settings.seed, epoch as u64);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0.0, 0usize);
        let order = batches(train, settings.batch_size, &mut rng)?;
        for (x, labels) in order {
            // a lone trailing sample cannot be batch-normalized in training mode
            if labels.len() < 2 {
                continue;
            }
            let onehot = match kind {
                LossKind::CategoricalCe => Some(to_onehot(&labels, train.num_classes())?),
                _ => None,
            };
            match net.train_on_batch(&x, &target(kind, &labels, &onehot), &mut rng) {
                Ok((loss, pred)) => {
                    loss_sum += loss * labels.len() as f64;
                    hits += accuracy(&pred, &labels) * labels.len() as f64;
                    seen += labels.len();
                }
                Err(Error::Diverged(msg) | Error::NonFinite(msg)) => {
                    report.aborted = Some(format!("epoch {epoch}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let v = evaluate(&net, val)?;
        if !v.loss.is_finite() {
            report.aborted = Some(format!("epoch {epoch}: validation loss is {}", v.loss));
            break;
        }
        report.rows.push(EpochRow {
            epoch,
            loss: loss_sum / seen.max(1) as f64,
            accuracy: hits / seen.max(1) as f64,
            val_loss: v.loss,
            val_accuracy: v.accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _)| v.accuracy > *acc) {
            best = Some((v.accuracy, net.clone()));
        }
    }
    Ok((best.map_or(net, |(_, n)| n), report))
}

/// A classifier with the class list it was trained on.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub id: ClassifierId,
    pub class_names: Vec<String>,
    pub network: Network,
}

impl TrainedClassifier {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = Map::new();
        meta.insert("kind".into(), Value::from("classifier"));
        meta.insert("id".into(), Value::from(self.id.name()));
        meta.insert("classes".into(), Value::from(self.class_names.clone()));
        checkpoint::encode(&Archive {
            meta,
            networks: vec![(self.id.name().into(), self.network.clone())],
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let archive = checkpoint::decode::<f32>(bytes)?;
        let bad = |m: &str| Error::from(CheckpointError::Header(m.into()));
        let id: ClassifierId = archive
            .meta
            .get("id")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("classifier checkpoint lacks an id"))?
            .parse()?;
        let class_names = archive
            .meta
            .get("classes")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("classifier checkpoint lacks class names"))?
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("class names must be strings"))?;
        let network = archive
            .networks
            .into_iter()
            .next()
            .map(|(_, n)| n)
            .ok_or_else(|| bad("classifier checkpoint holds no network"))?;
        Ok(TrainedClassifier {
            id,
            class_names,
            network,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&checkpoint::read_file(path)?)
    }
}
