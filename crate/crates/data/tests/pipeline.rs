use std::fs;
use std::path::Path;

use fdcnn_data::dataset::{read_gray, write_png};
use fdcnn_data::synth::render;
use fdcnn_data::*;
use proptest::prelude::*;

fn write_fixture(dir: &Path, rows: &[(&str, &str)]) {
    let mut csv = String::from("id_code,diagnosis\n");
    for (i, (id, grade)) in rows.iter().enumerate() {
        csv.push_str(&format!("{id},{grade}\n"));
        let mut rgb = image::RgbImage::new(24, 20);
        for (x, y, p) in rgb.enumerate_pixels_mut() {
            let dx = x as f32 - 12.0;
            let dy = y as f32 - 10.0;
            if dx * dx + dy * dy < 64.0 {
                *p = image::Rgb([120 + i as u8, 60, 30]);
            }
        }
        rgb.save(dir.join(format!("{id}.png"))).unwrap();
    }
    fs::write(dir.join("labels.csv"), csv).unwrap();
}

fn opts(seed: u64) -> LoadOptions {
    LoadOptions { seed, preprocess: Some(PreprocessConfig { size: 16, ..Default::default() }), ..Default::default() }
}

#[test]
fn ten_images_split_six_two_two() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<(String, &str)> = (0..10).map(|i| (format!("img{i}"), ["0", "1", "2", "3", "4"][i % 5])).collect();
    let refs: Vec<(&str, &str)> = rows.iter().map(|(a, b)| (a.as_str(), *b)).collect();
    write_fixture(dir.path(), &refs);
    let ds = load_dataset(dir.path(), &dir.path().join("labels.csv"), &opts(7)).unwrap();
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (6, 2, 2));
    for it in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        let idx: usize = it.id[3..].parse().unwrap();
        assert_eq!(it.label, usize::from(!idx.is_multiple_of(5)));
        assert_eq!((it.image.width, it.image.height), (16, 16));
    }
    let again = load_dataset(dir.path(), &dir.path().join("labels.csv"), &opts(7)).unwrap();
    let ids = |d: &Dataset| d.train.iter().map(|i| i.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&ds), ids(&again));
    assert_eq!(ds, again);
    let samples = ds.samples::<f64>(Split::Train).unwrap();
    assert_eq!(samples.len(), 6);
}

#[test]
fn unknown_label_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &[("a", "0"), ("b", "7")]);
    let err = load_dataset(dir.path(), &dir.path().join("labels.csv"), &opts(0)).unwrap_err();
    match err {
        DataError::UnknownLabel { line, label, .. } => {
            assert_eq!(line, 3);
            assert_eq!(label, "7");
        }
        other => panic!("{other}"),
    }
}

#[test]
fn missing_image_and_bad_header() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &[("a", "0")]);
    fs::write(dir.path().join("labels.csv"), "id_code,diagnosis\nghost,1\n").unwrap();
    let err = load_dataset(dir.path(), &dir.path().join("labels.csv"), &opts(0)).unwrap_err();
    assert!(matches!(err, DataError::MissingImage { ref id, .. } if id == "ghost"), "{err}");
    fs::write(dir.path().join("labels.csv"), "name,grade\na,1\n").unwrap();
    let err = load_dataset(dir.path(), &dir.path().join("labels.csv"), &opts(0)).unwrap_err();
    assert!(err.to_string().contains("id_code"), "{err}");
}

#[test]
fn png_round_trip_and_pnm() {
    let dir = tempfile::tempdir().unwrap();
    let img = Gray::new(3, 2, vec![0.0, 10.0, 20.0, 30.0, 40.0, 255.0], ValueRange::Byte).unwrap();
    write_png(&img, &dir.path().join("g.png")).unwrap();
    assert_eq!(read_gray(&dir.path().join("g.png")).unwrap(), img);
    let rgb = image::RgbImage::from_pixel(2, 2, image::Rgb([0, 255, 0]));
    rgb.save(dir.path().join("c.ppm")).unwrap();
    let g = read_gray(&dir.path().join("c.ppm")).unwrap();
    assert!(g.data.iter().all(|&v| v == 150.0));
}

#[test]
fn synth_counts_and_balance() {
    let ds = synth_dataset(25, 32, 3);
    assert_eq!(ds.len(), 50);
    let all: Vec<_> = ds.train.iter().chain(&ds.val).chain(&ds.test).collect();
    assert_eq!(all.iter().filter(|i| i.label == 1).count(), 25);
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (30, 10, 10));
    assert_eq!(ds, synth_dataset(25, 32, 3));
}

#[test]
fn lesions_cover_under_two_percent() {
    for seed in 0..50 {
        let clean = render(64, seed, false);
        let sick = render(64, seed, true);
        let diff = clean.data.iter().zip(&sick.data).filter(|(a, b)| (*a - *b).abs() > 1e-6).count();
        assert!(diff > 0 && (diff as f64) < 0.02 * 4096.0, "seed {seed}: {diff}");
    }
}

fn correlation(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa * bb).sqrt()
}

#[test]
fn seeds_give_independent_content() {
    // The disk template is shared by design, so compare what is left after
    // removing it: noise, jitter, lighting and lesions.
    let a = synth_dataset(10, 64, 1);
    let b = synth_dataset(10, 64, 2);
    let template = render(64, u64::MAX, false);
    let resid = |g: &Gray| g.data.iter().zip(&template.data).map(|(x, t)| x - t).collect::<Vec<f32>>();
    let mut worst: f64 = 0.0;
    for x in &a.train {
        for y in &b.train {
            assert_ne!(x.image, y.image);
            worst = worst.max(correlation(&resid(&x.image), &resid(&y.image)).abs());
        }
    }
    assert!(worst < 0.9, "max residual correlation {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_sizes_follow_rounding_rule(n in 0usize..500) {
        let (tr, va, te) = SplitFractions::default().sizes(n);
        prop_assert_eq!(tr, n * 6 / 10);
        prop_assert_eq!(va, n * 2 / 10);
        prop_assert_eq!(tr + va + te, n);
    }

    #[test]
    fn augmentation_keeps_unit_range(seed in any::<u64>()) {
        let img = render(24, seed, true);
        let out = augment(&img, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed));
        prop_assert_eq!(out.range, ValueRange::Unit);
        prop_assert!(out.data.iter().all(|v| (-1e-6..=1.0 + 1e-6).contains(v)));
    }

    #[test]
    fn preprocessing_keeps_byte_range_and_is_deterministic(seed in any::<u64>()) {
        let img = render(40, seed, true).to_byte();
        let cfg = PreprocessConfig { size: 32, ..Default::default() };
        let a = preprocess(&img, &cfg, "p").unwrap();
        prop_assert_eq!(&a, &preprocess(&img, &cfg, "p").unwrap());
        prop_assert!(a.data.iter().all(|v| (0.0..=255.0).contains(v)));
        prop_assert_eq!((a.width, a.height), (32, 32));
    }
}
