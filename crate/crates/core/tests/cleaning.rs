mod support;

use devgan::cleaning::*;
use devgan::Rng;
use proptest::prelude::*;
use support::oracles::{self, below_or_equal, direct_blur, exhaustive_otsu, random_binary, random_gray, window_max, window_min};

fn gray_image() -> impl Strategy<Value = GrayImage> {
    any::<u64>().prop_map(|s| random_gray(&mut Rng::new(s)))
}

fn binary_image() -> impl Strategy<Value = GrayImage> {
    (any::<u64>(), 1usize..20, 1usize..20, 0.05f64..0.95)
        .prop_map(|(s, w, h, d)| random_binary(&mut Rng::new(s), w, h, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn otsu_matches_exhaustive_search(img in gray_image()) {
        let (t, binary) = otsu_threshold(&img);
        prop_assert_eq!(t, exhaustive_otsu(&img));
        for (&p, &b) in img.pixels().iter().zip(binary.pixels()) {
            prop_assert_eq!(b, if p <= t { 0 } else { 255 });
        }
    }

    #[test]
    fn blur_matches_direct_summation(img in gray_image(), sigma in 0.3f64..3.0) {
        prop_assert_eq!(gaussian_blur_3x3(&img, sigma).unwrap(), direct_blur(&img, sigma));
    }

    #[test]
    fn blur_commutes_with_transpose(img in gray_image()) {
        let a = gaussian_blur_3x3(&img.transpose(), 0.8).unwrap();
        let b = gaussian_blur_3x3(&img, 0.8).unwrap().transpose();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn erode_and_dilate_match_window_extremes(img in binary_image()) {
        prop_assert_eq!(erode(&img).unwrap(), window_min(&img));
        prop_assert_eq!(dilate(&img).unwrap(), window_max(&img));
    }

    #[test]
    fn erode_dilate_duality(img in binary_image()) {
        let not = bitwise_not(&img);
        prop_assert_eq!(erode(&img).unwrap(), bitwise_not(&dilate(&not).unwrap()));
        prop_assert_eq!(dilate(&img).unwrap(), bitwise_not(&erode(&not).unwrap()));
    }

    #[test]
    fn opening_and_closing_are_idempotent_and_ordered(img in binary_image()) {
        let open = opening(&img).unwrap();
        let close = closing(&img).unwrap();
        prop_assert_eq!(opening(&open).unwrap(), open.clone());
        prop_assert_eq!(closing(&close).unwrap(), close.clone());
        prop_assert!(below_or_equal(&open, &img));
        prop_assert!(below_or_equal(&img, &close));
    }

    #[test]
    fn cleaned_output_is_binary(img in gray_image(), sigma in 0.3f64..2.0) {
        for inversion in [Inversion::Always, Inversion::Skip, Inversion::DarkBackground] {
            let out = clean(&img, &CleaningConfig { sigma, inversion }).unwrap();
            prop_assert!(out.is_binary());
        }
    }

    #[test]
    fn threshold_and_morphology_settle_after_one_pass(img in binary_image()) {
        let once = |x: &GrayImage| closing(&opening(&otsu_threshold(x).1).unwrap()).unwrap();
        let first = once(&img);
        // a constant result is the degenerate Otsu case, which maps to all 0
        prop_assume!(first.pixels().contains(&0) && first.pixels().contains(&255));
        prop_assert_eq!(once(&first), first);
    }

    #[test]
    fn always_and_skip_differ_by_exactly_the_not(img in gray_image()) {
        let always = clean(&img, &CleaningConfig { inversion: Inversion::Always, ..Default::default() }).unwrap();
        let skip = clean(&img, &CleaningConfig { inversion: Inversion::Skip, ..Default::default() }).unwrap();
        prop_assert_eq!(bitwise_not(&skip), always);
    }
}

#[test]
fn impulse_stamps_the_rounded_kernel() {
    let mut img = GrayImage::filled(5, 5, 0);
    img.set(2, 2, 255);
    let out = gaussian_blur_3x3(&img, 0.8).unwrap();
    // kernel entries ∝ exp(-d²/1.28) for squared distances 0, 1, 2
    let w = [1.0f64, (-1.0f64 / 1.28).exp(), (-2.0f64 / 1.28).exp()];
    let total = w[0] + 4.0 * w[1] + 4.0 * w[2];
    for y in 0..5usize {
        for x in 0..5usize {
            let (dx, dy) = (x.abs_diff(2), y.abs_diff(2));
            let expected = if dx <= 1 && dy <= 1 { (255.0 * w[dx + dy] / total).round() as u8 } else { 0 };
            assert_eq!(out.get(x, y), expected, "pixel ({x}, {y})");
        }
    }
    assert_eq!(out.get(2, 2), 69);
}

#[test]
fn blur_rejects_non_positive_sigma() {
    let img = GrayImage::filled(3, 3, 9);
    assert!(gaussian_blur_3x3(&img, 0.0).is_err());
    assert!(gaussian_blur_3x3(&img, -1.0).is_err());
}

#[test]
fn all_white_is_unchanged_by_morphology() {
    let img = GrayImage::filled(6, 4, 255);
    assert_eq!(erode(&img).unwrap(), img);
    assert_eq!(dilate(&img).unwrap(), img);
}

#[test]
fn isolated_pixels_vanish_under_opening() {
    let mut img = GrayImage::filled(7, 7, 0);
    img.set(3, 3, 255);
    assert_eq!(opening(&img).unwrap(), GrayImage::filled(7, 7, 0));
    let mut hole = GrayImage::filled(7, 7, 255);
    hole.set(3, 3, 0);
    assert_eq!(closing(&hole).unwrap(), GrayImage::filled(7, 7, 255));
}

#[test]
fn stages_are_recorded_in_order() {
    let mut rng = Rng::new(5);
    let img = random_gray(&mut rng);
    let cfg = CleaningConfig::default();
    let s = clean_stages(&img, &cfg).unwrap();
    assert_eq!(s.blurred, gaussian_blur_3x3(&img, cfg.sigma).unwrap());
    assert_eq!(s.threshold, exhaustive_otsu(&s.blurred));
    assert_eq!(s.opened, opening(&s.binary).unwrap());
    assert_eq!(s.closed, closing(&s.opened).unwrap());
    assert!(s.inverted);
    assert_eq!(s.output, bitwise_not(&s.closed));
}

#[test]
fn directory_batch_keeps_names_and_reports_problems() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let output = dir.path().join("out");
    std::fs::create_dir(&input).unwrap();
    let mut rng = Rng::new(1);
    for i in 0..25 {
        let mut img = random_gray(&mut rng);
        img.set(0, 0, 128);
        img.save_png(&input.join(format!("g{i:02}.png"))).unwrap();
    }
    std::fs::write(input.join("notes.txt"), "not an image").unwrap();
    std::fs::write(input.join("broken.png"), b"\x89PNG garbage").unwrap();
    random_binary(&mut rng, 32, 32, 0.3).save_png(&input.join("z_binary.png")).unwrap();

    let summary = clean_directory(&input, &output, &CleaningConfig::default()).unwrap();
    assert_eq!(summary.cleaned.len(), 26);
    assert_eq!(summary.skipped, vec![input.join("notes.txt")]);
    assert_eq!(summary.failed.len(), 1);
    assert_eq!(summary.failed[0].0, input.join("broken.png"));
    assert_eq!(summary.already_binary, 1);
    for path in &summary.cleaned {
        assert!(GrayImage::load_png(path).unwrap().is_binary());
    }
    assert!(output.join("g00.png").exists());
    assert!(!output.join("notes.txt").exists());
}

#[test]
fn empty_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = clean_directory(dir.path(), &dir.path().join("out"), &CleaningConfig::default()).unwrap_err();
    assert!(err.to_string().contains("no images found"), "{err}");
}

#[test]
fn oracle_minimum_handles_borders() {
    let img = GrayImage::new(3, 1, vec![255, 255, 0]).unwrap();
    assert_eq!(oracles::window_min(&img).pixels(), &[255, 0, 0]);
}
