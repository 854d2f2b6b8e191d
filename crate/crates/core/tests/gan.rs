use std::fs;
use std::path::Path;

use devgan::data::{tensor_to_gray, LabeledDataset, Norm};
use devgan::gan::*;
use devgan::nn::Adam;
use devgan::{Error, Rng, Tensor};

fn tiny(seed: u64) -> GanConfig {
    GanConfig {
        latent_dim: 8,
        iterations: 40,
        checkpoint_every: 10,
        batch_size: 8,
        seed,
        generator_widths: vec![16],
        discriminator_widths: vec![16],
        ..GanConfig::default()
    }
}

fn blobs(n: usize) -> LabeledDataset {
    let mut rng = Rng::new(99);
    let images = Tensor::from_fn(&[n, 32, 32, 1], |i| {
        let (x, y) = ((i % 32) as f64, ((i / 32) % 32) as f64);
        let r = ((x - 16.0).powi(2) + (y - 16.0).powi(2)).sqrt();
        let base = if r < 9.0 && r > 5.0 { 1.0 } else { -1.0 };
        (base * (0.9 + 0.1 * rng.uniform())) as f32
    });
    LabeledDataset::new(images, vec![0; n], vec!["digit_0".into()], Norm::Symmetric).unwrap()
}

fn names(dir: &Path, prefix: &str) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with(prefix))
        .collect();
    v.sort();
    v
}

#[test]
fn thousand_iterations_every_five_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GanConfig { iterations: 1000, checkpoint_every: 500, ..tiny(1) };
    let ckpt = train_gan(&blobs(16), &cfg, dir.path(), None).unwrap();
    assert_eq!(ckpt.iteration, 1000);
    assert_eq!(ckpt.class_name, "digit_0");
    assert_eq!(names(dir.path(), "ckpt_"), vec!["ckpt_1000.bin", "ckpt_500.bin"]);
    assert_eq!(names(dir.path(), "grid_"), vec!["grid_1000.png", "grid_500.png"]);
    let log = fs::read_to_string(dir.path().join(LOSS_LOG)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "iteration,d_loss,g_loss");
    assert_eq!(lines.len(), 1001);
    assert!(lines[1].starts_with("1,"));
    let grid = devgan::cleaning::GrayImage::load_png(&dir.path().join("grid_500.png")).unwrap();
    assert_eq!((grid.width(), grid.height()), (160, 160));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let data = blobs(20);
    let whole = tempfile::tempdir().unwrap();
    let end = train_gan(&data, &tiny(5), whole.path(), None).unwrap();

    let parts = tempfile::tempdir().unwrap();
    train_gan(&data, &tiny(5), parts.path(), None).unwrap();
    // roll back to iteration 20 and carry on from there
    let mid = GanCheckpoint::load(&parts.path().join("ckpt_20.bin")).unwrap();
    for i in [30, 40] {
        fs::remove_file(parts.path().join(format!("ckpt_{i}.bin"))).unwrap();
    }
    let resumed = train_gan(&data, &tiny(5), parts.path(), Some(mid)).unwrap();

    let log = |d: &Path| fs::read_to_string(d.join(LOSS_LOG)).unwrap();
    assert_eq!(log(whole.path()), log(parts.path()));
    assert_eq!(end.to_bytes(), resumed.to_bytes());
    assert_eq!(
        fs::read(whole.path().join("grid_40.png")).unwrap(),
        fs::read(parts.path().join("grid_40.png")).unwrap()
    );
}

#[test]
fn final_checkpoint_written_between_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GanConfig { iterations: 25, ..tiny(2) };
    train_gan(&blobs(8), &cfg, dir.path(), None).unwrap();
    assert_eq!(names(dir.path(), "ckpt_"), vec!["ckpt_10.bin", "ckpt_20.bin", "ckpt_25.bin"]);
    assert_eq!(latest_checkpoint(dir.path()).unwrap(), Some(dir.path().join("ckpt_25.bin")));
}

#[test]
fn generator_learns_a_constant_image() {
    let cfg = GanConfig {
        generator_optimizer: Adam { learning_rate: 0.002, ..Adam::gan() },
        discriminator_optimizer: Adam { learning_rate: 0.002, ..Adam::gan() },
        ..tiny(3)
    };
    let mut ckpt = GanCheckpoint::init(&cfg, "toy").unwrap();
    let real = Tensor::full(&[cfg.batch_size, 32, 32, 1], 0.5);
    let mut rng = Rng::new(17);
    let mean = |c: &GanCheckpoint| {
        let samples = generate(c, 64, &mut Rng::new(4)).unwrap();
        samples.data().iter().map(|&v| v as f64).sum::<f64>() / samples.len() as f64
    };
    let start = (mean(&ckpt) - 0.5).abs();
    let mut closest = start;
    for step in 1..=600 {
        adversarial_step(&mut ckpt.generator, &mut ckpt.discriminator, &real, &mut rng).unwrap();
        if step % 25 == 0 {
            closest = closest.min((mean(&ckpt) - 0.5).abs());
        }
    }
    // the pair oscillates around the target, so check the closest approach
    assert!(start > 0.3 && closest < 0.05, "start {start}, closest {closest}");
}

#[test]
fn samples_denormalize_to_grid_bytes() {
    let ckpt = GanCheckpoint::init(&tiny(4), "x").unwrap();
    let samples = generate(&ckpt, 25, &mut Rng::new(1)).unwrap();
    assert_eq!(samples.shape(), &[25, 32, 32, 1]);
    let images = tensor_to_gray(&samples, Norm::Symmetric);
    for (i, img) in images.iter().enumerate() {
        for (&v, &p) in samples.row(i).iter().zip(img.pixels()) {
            assert_eq!(p, ((v as f64 + 1.0) * 127.5).round() as u8);
        }
    }
    let grid = tile(&images, GRID_SIDE);
    assert_eq!(grid.get(32 * 2 + 5, 32 + 7), images[7].get(5, 7));
}

#[test]
fn reloaded_generator_gives_identical_samples() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_gan(&blobs(8), &GanConfig { iterations: 10, ..tiny(6) }, dir.path(), None).unwrap();
    let path = dir.path().join("ckpt_10.bin");
    let loaded = GanCheckpoint::load(&path).unwrap();
    let a = generate(&ckpt, 5, &mut Rng::new(8)).unwrap();
    let b = generate(&loaded, 5, &mut Rng::new(8)).unwrap();
    assert_eq!(a, b);
    assert_eq!(loaded.to_bytes(), fs::read(&path).unwrap());
}

#[test]
fn nan_weights_abort_with_a_diagnostic_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(7);
    let mut start = GanCheckpoint::init(&cfg, "digit_0").unwrap();
    let w = &mut start.generator.layers_mut()[0].params_mut()[0];
    w.data_mut()[0] = f32::NAN;
    let err = train_gan(&blobs(8), &cfg, dir.path(), Some(start)).unwrap_err();
    assert!(matches!(err, Error::Diverged(_)), "{err}");
    assert!(dir.path().join("ckpt_diverged_1.bin").exists());
    let log = fs::read_to_string(dir.path().join(LOSS_LOG)).unwrap();
    assert_eq!(log, "iteration,d_loss,g_loss\n");
}

#[test]
fn unit_scaled_data_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(4).with_norm(Norm::Unit);
    assert!(train_gan(&data, &tiny(0), dir.path(), None).is_err());
}
