//! Dense GAN: generator, discriminator, adversarial training loop,
//! checkpoints and sample grids.
//!
//! Randomness is drawn from `Rng::stream(seed, ITERATION_STREAMS + i)` for
//! iteration `i`, so a run resumed from a checkpoint continues exactly as
//! the uninterrupted run would have.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::cleaning::GrayImage;
use crate::data::{tensor_to_gray, LabeledDataset, Norm, IMAGE_SHAPE, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, Archive};
use crate::nn::{Activation, Adam, LayerSpec, LossKind, Mode, Network, OptimizerConfig, Target};
use crate::rng::{sample_gaussian, Rng};
use crate::tensor::Tensor;

pub const LEAKY_ALPHA: f64 = 0.2;
pub const GENERATOR_BN_MOMENTUM: f64 = 0.8;
pub const LOSS_LOG: &str = "loss_log.csv";
pub const GRID_SIDE: usize = 5;

const ITERATION_STREAMS: u64 = 1 << 32;
const GRID_STREAM: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub iterations: usize,
    pub checkpoint_every: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub generator_optimizer: Adam,
    pub discriminator_optimizer: Adam,
    pub generator_widths: Vec<usize>,
    pub discriminator_widths: Vec<usize>,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 100,
            iterations: 10_000,
            checkpoint_every: 500,
            batch_size: 32,
            seed: 0,
            generator_optimizer: Adam::gan(),
            discriminator_optimizer: Adam::gan(),
            generator_widths: vec![256, 512, 1024],
            discriminator_widths: vec![512, 256],
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("GAN batch size must be at least 2, got {}", self.batch_size));
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1".into());
        }
        if self.generator_widths.contains(&0) || self.discriminator_widths.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        OptimizerConfig::Adam(self.generator_optimizer).validate()?;
        OptimizerConfig::Adam(self.discriminator_optimizer).validate()
    }
}

/// Dense blocks with LeakyReLU and BatchNorm, then a 1024-unit tanh layer
/// reshaped to a 32x32x1 image.
pub fn build_generator(cfg: &GanConfig, rng: &mut Rng) -> Result<Network> {
    let mut specs = Vec::new();
    for &w in &cfg.generator_widths {
        specs.push(LayerSpec::dense(w));
        specs.push(LayerSpec::leaky_relu(LEAKY_ALPHA));
        specs.push(LayerSpec::batchnorm(GENERATOR_BN_MOMENTUM));
    }
    specs.push(LayerSpec::dense(IMAGE_SHAPE.iter().product()));
    specs.push(LayerSpec::act(Activation::Tanh));
    specs.push(LayerSpec::Reshape {
        shape: IMAGE_SHAPE.to_vec(),
    });
    let mut net = Network::new(&[cfg.latent_dim], specs, rng)?;
    net.compile(OptimizerConfig::Adam(cfg.generator_optimizer), LossKind::BinaryCe)?;
    Ok(net)
}

/// Flatten, dense blocks with LeakyReLU, one sigmoid unit.
pub fn build_discriminator(cfg: &GanConfig, rng: &mut Rng) -> Result<Network> {
    let mut specs = vec![LayerSpec::Flatten];
    for &w in &cfg.discriminator_widths {
        specs.push(LayerSpec::dense(w));
        specs.push(LayerSpec::leaky_relu(LEAKY_ALPHA));
    }
    specs.push(LayerSpec::dense(1));
    specs.push(LayerSpec::act(Activation::Sigmoid));
    let mut net = Network::new(&IMAGE_SHAPE, specs, rng)?;
    net.compile(OptimizerConfig::Adam(cfg.discriminator_optimizer), LossKind::BinaryCe)?;
    Ok(net)
}

fn labels(batch: usize, value: f32) -> Tensor {
    Tensor::full(&[batch, 1], value)
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged(format!("{what} is {v}")))
    }
}

/// One update on real images (label 1), then one on freshly generated
/// images (label 0). Returns the mean of the two losses.
pub fn discriminator_step(
    gen: &mut Network,
    disc: &mut Network,
    real: &Tensor,
    rng: &mut Rng,
) -> Result<f64> {
    let b = real.batch();
    if b < 2 {
        return Err(Error::DegenerateBatch(b));
    }
    let z = sample_gaussian(rng, &[b, gen.input_shape()[0]]);
    let fake = gen.forward(&z, Mode::Train, rng)?;
    let ones = labels(b, 1.0);
    let zeros = labels(b, 0.0);
    let (real_loss, _) = disc.train_on_batch(real, &Target::Dense(&ones), rng)?;
    let (fake_loss, _) = disc.train_on_batch(&fake, &Target::Dense(&zeros), rng)?;
    check_finite("discriminator loss", (real_loss + fake_loss) / 2.0)
}

/// Non-saturating generator update: binary CE of `disc(gen(z))` against
/// label 1, backpropagated through the frozen discriminator into the
/// generator only.
pub fn generator_step(gen: &mut Network, disc: &mut Network, batch: usize, rng: &mut Rng) -> Result<f64> {
    if batch < 2 {
        return Err(Error::DegenerateBatch(batch));
    }
    let z = sample_gaussian(rng, &[batch, gen.input_shape()[0]]);
    let was_trainable = disc.is_trainable();
    disc.set_trainable(false);
    let result = (|| {
        let fake = gen.forward(&z, Mode::Train, rng)?;
        disc.forward(&fake, Mode::Train, rng)?;
        let (loss, dfake) = disc.backward_loss(&Target::Dense(&labels(batch, 1.0)))?;
        let loss = check_finite("generator loss", loss)?;
        gen.backward(&dfake)?;
        gen.update()?;
        Ok(loss)
    })();
    disc.set_trainable(was_trainable);
    result
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Discriminator step then generator step on the same batch size.
pub fn adversarial_step(gen: &mut Network, disc: &mut Network, real: &Tensor, rng: &mut Rng) -> Result<StepLosses> {
    let d_loss = discriminator_step(gen, disc, real, rng)?;
    let g_loss = generator_step(gen, disc, real.batch(), rng)?;
    Ok(StepLosses { d_loss, g_loss })
}

#[derive(Debug, Clone)]
pub struct GanCheckpoint {
    pub generator: Network,
    pub discriminator: Network,
    pub iteration: usize,
    pub seed: u64,
    /// Class the GAN was trained on; generated samples carry this label.
    pub class_name: String,
}

impl GanCheckpoint {
    /// Fresh networks for `cfg`, at iteration 0.
    pub fn init(cfg: &GanConfig, class_name: &str) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed);
        Ok(GanCheckpoint {
            generator: build_generator(cfg, &mut rng)?,
            discriminator: build_discriminator(cfg, &mut rng)?,
            iteration: 0,
            seed: cfg.seed,
            class_name: class_name.to_string(),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.input_shape()[0]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = Map::new();
        meta.insert("kind".into(), Value::from("gan"));
        meta.insert("iteration".into(), Value::from(self.iteration));
        meta.insert("seed".into(), Value::from(self.seed));
        meta.insert("class".into(), Value::from(self.class_name.clone()));
        checkpoint::encode(&Archive {
            meta,
            networks: vec![
                ("generator".into(), self.generator.clone()),
                ("discriminator".into(), self.discriminator.clone()),
            ],
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let archive = checkpoint::decode::<f32>(bytes)?;
        let header = |m: &str| Error::from(crate::error::CheckpointError::Header(m.into()));
        let meta = &archive.meta;
        let iteration = meta
            .get("iteration")
            .and_then(Value::as_u64)
            .ok_or_else(|| header("GAN checkpoint lacks an iteration"))? as usize;
        let seed = meta
            .get("seed")
            .and_then(Value::as_u64)
            .ok_or_else(|| header("GAN checkpoint lacks a seed"))?;
        let class_name = meta
            .get("class")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let mut generator = None;
        let mut discriminator = None;
        for (name, net) in archive.networks {
            match name.as_str() {
                "generator" => generator = Some(net),
                "discriminator" => discriminator = Some(net),
                _ => {}
            }
        }
        let generator = generator.ok_or_else(|| header("GAN checkpoint lacks a generator"))?;
        let discriminator = discriminator.ok_or_else(|| header("GAN checkpoint lacks a discriminator"))?;
        if generator.output_shape() != IMAGE_SHAPE || discriminator.output_shape() != [1] {
            return Err(header("GAN checkpoint networks have unexpected shapes"));
        }
        Ok(GanCheckpoint {
            generator,
            discriminator,
            iteration,
            seed,
            class_name,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&checkpoint::read_file(path)?)
    }
}

pub fn checkpoint_path(out_dir: &Path, iteration: usize) -> PathBuf {
    out_dir.join(format!("ckpt_{iteration}.bin"))
}

pub fn grid_path(out_dir: &Path, iteration: usize) -> PathBuf {
    out_dir.join(format!("grid_{iteration}.png"))
}

/// `count` samples from the generator in inference mode, in [-1, 1].
pub fn generate(ckpt: &GanCheckpoint, count: usize, rng: &mut Rng) -> Result<Tensor> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let z = sample_gaussian(rng, &[count, ckpt.latent_dim()]);
    ckpt.generator.predict(&z)
}

/// Tile up to `side * side` images into one square image, row by row.
pub fn tile(images: &[GrayImage], side: usize) -> GrayImage {
    let cell = images.first().map_or(IMAGE_SIDE, |i| i.width());
    let mut grid = GrayImage::filled(side * cell, side * cell, 0);
    for (k, img) in images.iter().take(side * side).enumerate() {
        let (ox, oy) = ((k % side) * cell, (k / side) * cell);
        for y in 0..img.height().min(cell) {
            for x in 0..img.width().min(cell) {
                grid.set(ox + x, oy + y, img.get(x, y));
            }
        }
    }
    grid
}

/// 5x5 grid of samples from a fixed latent batch, so grids of successive
/// checkpoints are comparable.
pub fn sample_grid(ckpt: &GanCheckpoint) -> Result<GrayImage> {
    let mut rng = Rng::stream(ckpt.seed, GRID_STREAM);
    let samples = generate(ckpt, GRID_SIDE * GRID_SIDE, &mut rng)?;
    Ok(tile(&tensor_to_gray(&samples, Norm::Symmetric), GRID_SIDE))
}

fn loss_log_header() -> &'static str {
    "iteration,d_loss,g_loss\n"
}

/// Existing log rows up to and including `iteration`, or just the header.
fn log_prefix(path: &Path, iteration: usize) -> Result<String> {
    let mut out = loss_log_header().to_string();
    if iteration == 0 || !path.exists() {
        return Ok(out);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for line in text.lines().skip(1) {
        let it: usize = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::data(path, format!("malformed loss log line {line:?}")))?;
        if it <= iteration {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Train on the images of `data` (symmetric normalization). Continues from
/// `start` when given, else from fresh networks.
///
/// Every `checkpoint_every` iterations `ckpt_<i>.bin` and `grid_<i>.png`
/// are written to `out_dir`, plus a final pair when training stops between
/// checkpoints; `loss_log.csv` is rewritten at each
/// checkpoint and at the end. A non-finite loss saves
/// `ckpt_diverged_<i>.bin` (the state before the failing iteration) and
/// returns [`Error::Diverged`].
pub fn train_gan(
    data: &LabeledDataset,
    cfg: &GanConfig,
    out_dir: &Path,
    start: Option<GanCheckpoint>,
) -> Result<GanCheckpoint> {
    cfg.validate()?;
    if data.norm() != Norm::Symmetric {
        return Err(Error::InvalidArgument("GAN training needs symmetric normalization".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training images".into()));
    }
    let class_name = match data.labels().first() {
        Some(&l) if data.labels().iter().all(|&x| x == l) => data.class_names()[l].clone(),
        _ => String::new(),
    };
    let mut ckpt = match start {
        Some(c) => c,
        None => GanCheckpoint::init(cfg, &class_name)?,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOSS_LOG);
    let mut log = log_prefix(&log_path, ckpt.iteration)?;
    let write_log = |log: &str| fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e));

    while ckpt.iteration < cfg.iterations {
        let i = ckpt.iteration + 1;
        let mut rng = Rng::stream(cfg.seed, ITERATION_STREAMS + i as u64);
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(data.len())).collect();
        let real = data.images().select(&idx);
        let before = ckpt.clone();
        let losses = match adversarial_step(&mut ckpt.generator, &mut ckpt.discriminator, &real, &mut rng) {
            Ok(l) => l,
            Err(Error::Diverged(msg) | Error::NonFinite(msg)) => {
                before.save(&out_dir.join(format!("ckpt_diverged_{i}.bin")))?;
                write_log(&log)?;
                return Err(Error::Diverged(format!("iteration {i}: {msg}")));
            }
            Err(e) => return Err(e),
        };
        ckpt.iteration = i;
        writeln!(log, "{i},{},{}", losses.d_loss, losses.g_loss).expect("string write");
        if i % cfg.checkpoint_every == 0 {
            ckpt.save(&checkpoint_path(out_dir, i))?;
            sample_grid(&ckpt)?.save_png(&grid_path(out_dir, i))?;
            write_log(&log)?;
        }
    }
    let last = checkpoint_path(out_dir, ckpt.iteration);
    if !last.exists() {
        ckpt.save(&last)?;
        sample_grid(&ckpt)?.save_png(&grid_path(out_dir, ckpt.iteration))?;
    }
    write_log(&log)?;
    Ok(ckpt)
}

/// Highest-iteration `ckpt_<i>.bin` in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let it = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("ckpt_")?.strip_suffix(".bin")?.parse::<usize>().ok());
        if let Some(it) = it {
            if best.as_ref().is_none_or(|(b, _)| it > *b) {
                best = Some((it, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}
