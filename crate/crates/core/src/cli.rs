//! Command-line front end.
//!
//! Settings come from built-in defaults, then an optional TOML config file
//! (`--config`), then command-line flags. The dataset root additionally
//! falls back to the `DEVGAN_DATA_ROOT` environment variable. Everything
//! is written below the output directory:
//!
//! ```text
//! <out>/classifiers/<id>.bin, train_<id>.csv
//! <out>/report_original.{csv,md}
//! <out>/gan/<class>/ckpt_<i>.bin, grid_<i>.png, loss_log.csv
//! <out>/generated/<class>/*.png
//! <out>/report_generated_raw.{csv,md}, report_generated_cleaned.{csv,md}
//! <out>/grid_generated_raw.png, grid_generated_cleaned.png
//! ```
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::classifier::{train_classifier, ClassifierId, TrainSettings, TrainedClassifier};
use crate::cleaning::{clean_directory, CleaningConfig, Inversion, DEFAULT_SIGMA};
use crate::data::{self, load_dataset, load_train_test, tensor_to_gray, ClassSubset, LabeledDataset, Norm, SplitSpec};
use crate::error::Error;
use crate::gan::{self, train_gan, GanCheckpoint, GanConfig};
use crate::report::{generate_pair, missing_classes, overview_grid, score_dataset, training_report};
use crate::rng::Rng;
use crate::synth;

pub const DATA_ROOT_ENV: &str = "DEVGAN_DATA_ROOT";

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Lib(Error::Diverged(_) | Error::NonFinite(_)) => EXIT_NUMERIC,
            Failure::Lib(_) => EXIT_DATA,
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

#[derive(Parser, Debug)]
#[command(name = "devgan", version, about = "Per-class dense GANs for 32x32 glyphs, image cleaning, and classifier scoring")]
struct Cli {
    /// TOML config file; flags override its values [default: none]
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Base random seed [default: 42]
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic ten-class digit dataset (digit_0 .. digit_9)
    Synth(SynthArgs),
    /// Train classifiers c1, c2, c3 and write report_original
    TrainClassifiers(TrainClassifiersArgs),
    /// Train one GAN per class
    TrainGan(TrainGanArgs),
    /// Sample PNGs from a trained GAN
    Generate(GenerateArgs),
    /// Clean a directory of PNGs (blur, Otsu, opening, closing, NOT)
    Clean(CleanArgs),
    /// Score classifiers on raw and cleaned GAN samples
    Score(ScoreArgs),
    /// Run the whole sequence: classifiers, GANs, scoring
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Dataset root: one directory of 32x32 PNGs per class, or Train/ and
    /// Test/ subtrees [default: $DEVGAN_DATA_ROOT]
    #[arg(long, value_name = "DIR")]
    data_root: Option<PathBuf>,
    /// "digits", "all", or comma-separated class names [default: digits]
    #[arg(long)]
    classes: Option<String>,
}

#[derive(Args, Debug, Default)]
struct ClassifierArgs {
    /// Classifier to train (repeatable) [default: c1, c2 and c3]
    #[arg(long = "classifier", value_name = "ID")]
    classifiers: Vec<ClassifierId>,
    /// Training epochs [default: 30]
    #[arg(long)]
    epochs: Option<usize>,
    /// Classifier batch size [default: 64]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Fraction of each class used for training when no Train/Test split
    /// exists [default: 0.8]
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct GanArgs {
    /// Training iterations per class [default: 10000]
    #[arg(long)]
    iterations: Option<usize>,
    /// Iterations between checkpoints and sample grids [default: 500]
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// GAN batch size [default: 32]
    #[arg(long)]
    gan_batch_size: Option<usize>,
    /// Latent dimension [default: 100]
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Classes trained concurrently [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct CleaningArgs {
    /// Gaussian blur sigma [default: 0.8]
    #[arg(long)]
    sigma: Option<f64>,
    /// Leave out the final bitwise NOT [default: off]
    #[arg(long)]
    skip_not: bool,
    /// When to apply the final NOT: always, skip, or dark-background
    /// (only when the background came out white) [default: always for
    /// `clean`, dark-background for scoring]
    #[arg(long, value_parser = parse_inversion, conflicts_with = "skip_not")]
    invert: Option<Inversion>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Images per class [default: 300]
    #[arg(long)]
    per_class: Option<usize>,
    /// Destination [default: <out-dir>/data]
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainClassifiersArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    classifier: ClassifierArgs,
}

#[derive(Args, Debug)]
struct TrainGanArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Class to train; required unless --all-classes [default: none]
    #[arg(long = "class", value_name = "NAME", required_unless_present = "all_classes")]
    class: Option<String>,
    /// Train every selected class [default: off]
    #[arg(long, conflicts_with = "class")]
    all_classes: bool,
    /// Continue from the latest checkpoint in the class directory
    /// [default: off]
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    gan: GanArgs,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Class whose latest checkpoint is sampled; required unless
    /// --checkpoint [default: none]
    #[arg(long = "class", value_name = "NAME", required_unless_present = "checkpoint")]
    class: Option<String>,
    /// Explicit checkpoint file instead of the class's latest
    /// [default: none]
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Number of images [default: 25]
    #[arg(long)]
    count: Option<usize>,
    /// Destination [default: <out-dir>/generated/<class>]
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CleanArgs {
    /// Directory of PNGs to clean (required)
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Destination, same file names [default: <out-dir>/cleaned]
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
    #[command(flatten)]
    cleaning: CleaningArgs,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// "digits", "all", or comma-separated class names [default: digits]
    #[arg(long)]
    classes: Option<String>,
    /// Generated samples per class [default: 100]
    #[arg(long)]
    per_class: Option<usize>,
    #[command(flatten)]
    cleaning: CleaningArgs,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Without a dataset root, synthesize this many images per class under
    /// <out-dir>/data [default: 300]
    #[arg(long)]
    synthetic_per_class: Option<usize>,
    #[command(flatten)]
    classifier: ClassifierArgs,
    #[command(flatten)]
    gan: GanArgs,
    /// Generated samples per class [default: 100]
    #[arg(long)]
    per_class: Option<usize>,
    #[command(flatten)]
    cleaning: CleaningArgs,
}

fn parse_inversion(s: &str) -> Result<Inversion, String> {
    match s {
        "always" => Ok(Inversion::Always),
        "skip" | "never" => Ok(Inversion::Skip),
        "dark-background" | "dark_background" => Ok(Inversion::DarkBackground),
        _ => Err(format!("expected always, skip or dark-background, got {s:?}")),
    }
}

/// Contents of the `--config` file. Every key is optional.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    pub classes: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub synthetic_per_class: usize,
    pub split: SplitSection,
    pub classifier: ClassifierSection,
    pub gan: GanSection,
    pub cleaning: CleaningSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: None,
            classes: "digits".into(),
            seed: 42,
            out_dir: "out".into(),
            synthetic_per_class: 300,
            split: SplitSection::default(),
            classifier: ClassifierSection::default(),
            gan: GanSection::default(),
            cleaning: CleaningSection::default(),
            report: ReportSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train_fraction: SplitSpec::default().train_fraction,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub which: Vec<ClassifierId>,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let t = TrainSettings::default();
        ClassifierSection {
            which: ClassifierId::ALL.to_vec(),
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanSection {
    pub latent_dim: usize,
    pub iterations: usize,
    pub checkpoint_every: usize,
    pub batch_size: usize,
    pub generator_widths: Vec<usize>,
    pub discriminator_widths: Vec<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub jobs: usize,
}

impl Default for GanSection {
    fn default() -> Self {
        let g = GanConfig::default();
        GanSection {
            latent_dim: g.latent_dim,
            iterations: g.iterations,
            checkpoint_every: g.checkpoint_every,
            batch_size: g.batch_size,
            generator_widths: g.generator_widths,
            discriminator_widths: g.discriminator_widths,
            learning_rate: g.generator_optimizer.learning_rate,
            beta1: g.generator_optimizer.beta1,
            jobs: 1,
        }
    }
}

impl GanSection {
    /// GAN settings for the class with label `label`; each class gets its
    /// own seed.
    fn config(&self, base_seed: u64, label: usize) -> GanConfig {
        let mut cfg = GanConfig {
            latent_dim: self.latent_dim,
            iterations: self.iterations,
            checkpoint_every: self.checkpoint_every,
            batch_size: self.batch_size,
            seed: base_seed.wrapping_add(1 + label as u64),
            generator_widths: self.generator_widths.clone(),
            discriminator_widths: self.discriminator_widths.clone(),
            ..GanConfig::default()
        };
        for opt in [&mut cfg.generator_optimizer, &mut cfg.discriminator_optimizer] {
            opt.learning_rate = self.learning_rate;
            opt.beta1 = self.beta1;
        }
        cfg
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningSection {
    pub sigma: f64,
    /// `always`, `skip` or `dark_background`; unset means the
    /// per-command default.
    pub inversion: Option<Inversion>,
}

impl Default for CleaningSection {
    fn default() -> Self {
        CleaningSection {
            sigma: DEFAULT_SIGMA,
            inversion: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub per_class: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { per_class: 100 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn apply_data(&mut self, a: &DataArgs) {
        if let Some(r) = &a.data_root {
            self.data_root = Some(r.clone());
        }
        if let Some(c) = &a.classes {
            self.classes = c.clone();
        }
    }

    fn apply_classifier(&mut self, a: &ClassifierArgs) {
        if !a.classifiers.is_empty() {
            self.classifier.which = a.classifiers.clone();
        }
        if let Some(v) = a.epochs {
            self.classifier.epochs = v;
        }
        if let Some(v) = a.batch_size {
            self.classifier.batch_size = v;
        }
        if let Some(v) = a.train_fraction {
            self.split.train_fraction = v;
        }
    }

    fn apply_gan(&mut self, a: &GanArgs) {
        let g = &mut self.gan;
        if let Some(v) = a.iterations {
            g.iterations = v;
        }
        if let Some(v) = a.checkpoint_every {
            g.checkpoint_every = v;
        }
        if let Some(v) = a.gan_batch_size {
            g.batch_size = v;
        }
        if let Some(v) = a.latent_dim {
            g.latent_dim = v;
        }
        if let Some(v) = a.jobs {
            g.jobs = v;
        }
    }

    fn apply_cleaning(&mut self, a: &CleaningArgs) {
        if let Some(s) = a.sigma {
            self.cleaning.sigma = s;
        }
        if a.skip_not {
            self.cleaning.inversion = Some(Inversion::Skip);
        }
        if let Some(i) = a.invert {
            self.cleaning.inversion = Some(i);
        }
    }

    fn cleaning_config(&self, default_inversion: Inversion) -> CliResult<CleaningConfig> {
        if !(self.cleaning.sigma > 0.0) {
            return usage(format!("blur sigma must be positive, got {}", self.cleaning.sigma));
        }
        Ok(CleaningConfig {
            sigma: self.cleaning.sigma,
            inversion: self.cleaning.inversion.unwrap_or(default_inversion),
        })
    }

    fn subset(&self) -> ClassSubset {
        ClassSubset::parse(&self.classes)
    }

    /// Flag, then config file, then environment.
    fn data_root(&self) -> CliResult<PathBuf> {
        if let Some(r) = &self.data_root {
            return Ok(r.clone());
        }
        match std::env::var_os(DATA_ROOT_ENV) {
            Some(r) if !r.is_empty() => Ok(PathBuf::from(r)),
            _ => usage(format!("no dataset root: pass --data-root, set data_root in the config, or set {DATA_ROOT_ENV}")),
        }
    }

    fn classifiers_dir(&self) -> PathBuf {
        self.out_dir.join("classifiers")
    }

    fn gan_dir(&self, class: &str) -> PathBuf {
        self.out_dir.join("gan").join(class)
    }
}

fn log(msg: impl AsRef<str>) {
    eprintln!("devgan: {}", msg.as_ref());
}

/// Parse `args` (including the program name), run the command, and return
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("devgan: error: {f}");
            f.code()
        }
    }
}

fn execute(cli: Cli) -> CliResult {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out_dir {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Synth(a) => {
            let per_class = a.per_class.unwrap_or(cfg.synthetic_per_class);
            let out = a.output.unwrap_or_else(|| cfg.out_dir.join("data"));
            cmd_synth(&out, per_class, cfg.seed)
        }
        Command::TrainClassifiers(a) => {
            cfg.apply_data(&a.data);
            cfg.apply_classifier(&a.classifier);
            cmd_train_classifiers(&cfg, &load_splits(&cfg, &cfg.data_root()?)?)
        }
        Command::TrainGan(a) => {
            cfg.apply_data(&a.data);
            cfg.apply_gan(&a.gan);
            let ds = load_dataset(&cfg.data_root()?, &cfg.subset(), Norm::Symmetric)?;
            let classes = match &a.class {
                Some(c) => {
                    if ds.class_index(c).is_none() {
                        return usage(format!("unknown class {c:?}; known: {}", ds.class_names().join(", ")));
                    }
                    vec![c.clone()]
                }
                _ => ds.class_names().to_vec(),
            };
            cmd_train_gan(&cfg, &ds, &classes, a.resume)
        }
        Command::Generate(a) => cmd_generate(&cfg, a),
        Command::Clean(a) => {
            cfg.apply_cleaning(&a.cleaning);
            let out = a.output.clone().unwrap_or_else(|| cfg.out_dir.join("cleaned"));
            cmd_clean(&a.input, &out, &cfg.cleaning_config(Inversion::Always)?)
        }
        Command::Score(a) => {
            if let Some(c) = &a.classes {
                cfg.classes = c.clone();
            }
            if let Some(n) = a.per_class {
                cfg.report.per_class = n;
            }
            cfg.apply_cleaning(&a.cleaning);
            cmd_score(&cfg)
        }
        Command::Reproduce(a) => {
            cfg.apply_data(&a.data);
            cfg.apply_classifier(&a.classifier);
            cfg.apply_gan(&a.gan);
            cfg.apply_cleaning(&a.cleaning);
            if let Some(n) = a.synthetic_per_class {
                cfg.synthetic_per_class = n;
            }
            if let Some(n) = a.per_class {
                cfg.report.per_class = n;
            }
            cmd_reproduce(&cfg)
        }
    }
}

fn cmd_synth(out: &Path, per_class: usize, seed: u64) -> CliResult {
    if per_class < 2 {
        return usage("synthetic datasets need at least 2 images per class");
    }
    synth::write_synthetic_tree(out, per_class, seed)?;
    log(format!("wrote {} synthetic images to {}", per_class * synth::NUM_CLASSES, out.display()));
    Ok(())
}

/// Train/validation sets in unit normalization: the dataset's own
/// Train/Test subtrees when present, else a stratified split.
fn load_splits(cfg: &RunConfig, root: &Path) -> CliResult<(LabeledDataset, LabeledDataset)> {
    if let Some(pair) = load_train_test(root, &cfg.subset(), Norm::Unit)? {
        log("using the dataset's Train/ and Test/ subtrees");
        return Ok(pair);
    }
    let ds = load_dataset(root, &cfg.subset(), Norm::Unit)?;
    let spec = SplitSpec {
        train_fraction: cfg.split.train_fraction,
        seed: cfg.seed,
    };
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return usage(format!("train fraction must be in (0, 1), got {}", spec.train_fraction));
    }
    Ok(data::split(&ds, &spec)?)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Failure::Lib(Error::io(path, e)))
}

fn cmd_train_classifiers(cfg: &RunConfig, (train, val): &(LabeledDataset, LabeledDataset)) -> CliResult {
    let settings = TrainSettings {
        epochs: cfg.classifier.epochs,
        batch_size: cfg.classifier.batch_size,
        seed: cfg.seed,
    };
    if settings.epochs == 0 || settings.batch_size == 0 {
        return usage("epochs and batch size must be at least 1");
    }
    let mut which = cfg.classifier.which.clone();
    which.sort();
    which.dedup();
    let dir = cfg.classifiers_dir();
    let mut runs = Vec::new();
    let mut aborted = None;
    for id in which {
        log(format!(
            "training {id} on {} images ({} classes), validating on {}",
            train.len(),
            train.num_classes(),
            val.len()
        ));
        let (network, report) = train_classifier(id, train, val, &settings)?;
        write_text(&dir.join(format!("train_{id}.csv")), &report.to_csv())?;
        if let Some(best) = report.best() {
            log(format!(
                "{id}: best val_accuracy {:.4} at epoch {}",
                best.val_accuracy, best.epoch
            ));
        }
        let trained = TrainedClassifier {
            id,
            class_names: train.class_names().to_vec(),
            network,
        };
        trained.save(&dir.join(format!("{id}.bin")))?;
        if let Some(msg) = &report.aborted {
            aborted = Some(format!("{id}: {msg}"));
        }
        runs.push((id.name().to_string(), report));
    }
    let refs: Vec<(String, &_)> = runs.iter().map(|(n, r)| (n.clone(), r)).collect();
    training_report("original", &refs).write(&cfg.out_dir)?;
    match aborted {
        Some(msg) => Err(Failure::Lib(Error::Diverged(msg))),
        None => Ok(()),
    }
}

fn train_one_gan(cfg: &RunConfig, ds: &LabeledDataset, class: &str, resume: bool) -> Result<GanCheckpoint, Error> {
    let label = ds.class_index(class).expect("class checked by caller");
    let gan_cfg = cfg.gan.config(cfg.seed, label);
    let dir = cfg.gan_dir(class);
    let start = match (resume, gan::latest_checkpoint(&dir)?) {
        (true, Some(path)) => {
            let ckpt = GanCheckpoint::load(&path)?;
            log(format!("{class}: resuming from iteration {}", ckpt.iteration));
            Some(ckpt)
        }
        _ => None,
    };
    let slice = ds.select(&ds.indices_of_class(label));
    let ckpt = train_gan(&slice, &gan_cfg, &dir, start)?;
    log(format!("{class}: {} iterations done, outputs in {}", ckpt.iteration, dir.display()));
    Ok(ckpt)
}

fn cmd_train_gan(cfg: &RunConfig, ds: &LabeledDataset, classes: &[String], resume: bool) -> CliResult {
    if cfg.gan.batch_size < 2 || cfg.gan.checkpoint_every == 0 || cfg.gan.latent_dim == 0 {
        return usage("GAN batch size must be at least 2; checkpoint interval and latent size at least 1");
    }
    let jobs = cfg.gan.jobs.max(1).min(classes.len().max(1));
    let mut failures = Vec::new();
    for group in classes.chunks(jobs) {
        let results: Vec<(String, Result<GanCheckpoint, Error>)> = std::thread::scope(|s| {
            let handles: Vec<_> = group
                .iter()
                .map(|c| (c.clone(), s.spawn(move || train_one_gan(cfg, ds, c, resume))))
                .collect();
            handles
                .into_iter()
                .map(|(c, h)| (c, h.join().expect("GAN worker panicked")))
                .collect()
        });
        for (class, r) in results {
            if let Err(e) = r {
                log(format!("{class}: {e}"));
                failures.push(e);
            }
        }
    }
    match failures.into_iter().next() {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn cmd_generate(cfg: &RunConfig, a: GenerateArgs) -> CliResult {
    let path = match (&a.checkpoint, &a.class) {
        (Some(p), _) => p.clone(),
        (None, Some(class)) => match gan::latest_checkpoint(&cfg.gan_dir(class))? {
            Some(p) => p,
            None => return usage(format!("no checkpoint for class {class:?} in {}", cfg.gan_dir(class).display())),
        },
        (None, None) => return usage("pass --class or --checkpoint"),
    };
    let ckpt = GanCheckpoint::load(&path)?;
    let count = a.count.unwrap_or(25);
    if count == 0 {
        return usage("--count must be at least 1");
    }
    let name = if ckpt.class_name.is_empty() { "unlabelled" } else { &ckpt.class_name };
    let out = a.output.unwrap_or_else(|| cfg.out_dir.join("generated").join(name));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let samples = gan::generate(&ckpt, count, &mut Rng::new(cfg.seed))?;
    let images = tensor_to_gray(&samples, Norm::Symmetric);
    for (i, img) in images.iter().enumerate() {
        img.save_png(&out.join(format!("{i:05}.png")))?;
    }
    log(format!("wrote {count} samples from {} to {}", path.display(), out.display()));
    Ok(())
}

fn cmd_clean(input: &Path, output: &Path, cleaning: &CleaningConfig) -> CliResult {
    let summary = clean_directory(input, output, cleaning)?;
    if !summary.skipped.is_empty() {
        let names: Vec<String> = summary.skipped.iter().map(|p| p.display().to_string()).collect();
        log(format!("skipped non-PNG files: {}", names.join(", ")));
    }
    if summary.already_binary > 0 && cleaning.inversion == Inversion::Always {
        log(format!(
            "warning: {} input(s) were already binary; cleaning them again flips their polarity (see --skip-not)",
            summary.already_binary
        ));
    }
    for (path, e) in &summary.failed {
        log(format!("failed: {}: {e}", path.display()));
    }
    log(format!("cleaned {} image(s) into {}", summary.cleaned.len(), output.display()));
    if summary.cleaned.is_empty() {
        return Err(Failure::Lib(Error::data(input, "no image could be cleaned")));
    }
    Ok(())
}

fn load_classifiers(cfg: &RunConfig) -> CliResult<Vec<TrainedClassifier>> {
    let dir = cfg.classifiers_dir();
    let mut out = Vec::new();
    for id in ClassifierId::ALL {
        let path = dir.join(format!("{id}.bin"));
        if path.exists() {
            out.push(TrainedClassifier::load(&path)?);
        }
    }
    if out.is_empty() {
        return Err(Failure::Lib(Error::data(&dir, "no trained classifiers (run train-classifiers first)")));
    }
    if out.iter().any(|c| c.class_names != out[0].class_names) {
        return Err(Failure::Lib(Error::data(&dir, "classifiers were trained on different classes")));
    }
    Ok(out)
}

fn cmd_score(cfg: &RunConfig) -> CliResult {
    let classifiers = load_classifiers(cfg)?;
    let class_names = classifiers[0].class_names.clone();
    let wanted = cfg.subset().resolve(&class_names).map_err(Failure::Usage)?;
    let mut ckpts = Vec::new();
    for class in &wanted {
        if let Some(path) = gan::latest_checkpoint(&cfg.gan_dir(class))? {
            ckpts.push(GanCheckpoint::load(&path)?);
        }
    }
    let missing = missing_classes(&ckpts, &wanted);
    if !missing.is_empty() {
        return Err(Failure::Lib(Error::data(
            cfg.out_dir.join("gan"),
            format!("missing GAN checkpoints for: {}", missing.join(", ")),
        )));
    }
    let cleaning = cfg.cleaning_config(Inversion::DarkBackground)?;
    if cfg.report.per_class == 0 {
        return usage("per-class sample count must be at least 1");
    }
    let pair = generate_pair(&ckpts, &class_names, cfg.report.per_class, cfg.seed, &cleaning)?;
    let raw = score_dataset(&classifiers, &pair.raw_dataset()?, "generated_raw")?;
    let cleaned = score_dataset(&classifiers, &pair.cleaned_dataset()?, "generated_cleaned")?;
    raw.write(&cfg.out_dir)?;
    cleaned.write(&cfg.out_dir)?;
    overview_grid(&pair.raw).save_png(&cfg.out_dir.join("grid_generated_raw.png"))?;
    overview_grid(&pair.cleaned).save_png(&cfg.out_dir.join("grid_generated_cleaned.png"))?;
    for (r, c) in raw.rows.iter().zip(&cleaned.rows) {
        log(format!(
            "{}: accuracy raw {:.4} -> cleaned {:.4}",
            r.classifier, r.accuracy, c.accuracy
        ));
        if c.accuracy < r.accuracy {
            log(format!("warning: cleaning lowered {}'s accuracy", r.classifier));
        }
    }
    Ok(())
}

fn cmd_reproduce(cfg: &RunConfig) -> CliResult {
    let mut cfg = cfg.clone();
    let root = match cfg.data_root() {
        Ok(r) => r,
        Err(_) => {
            let root = cfg.out_dir.join("data");
            log(format!("no dataset root given; synthesizing one in {}", root.display()));
            cmd_synth(&root, cfg.synthetic_per_class, cfg.seed)?;
            cfg.data_root = Some(root.clone());
            root
        }
    };
    let splits = load_splits(&cfg, &root)?;
    cmd_train_classifiers(&cfg, &splits)?;
    let ds = match load_train_test(&root, &cfg.subset(), Norm::Symmetric)? {
        Some((train, _)) => train,
        None => load_dataset(&root, &cfg.subset(), Norm::Symmetric)?,
    };
    cmd_train_gan(&cfg, &ds, ds.class_names(), false)?;
    cmd_score(&cfg)
}
