//! Fundus-like synthetic images for desk-scale runs.
//!
//! Class 0 is a lit disk on black. Class 1 is the same disk with a few
//! small bright dots and short dark streaks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use fdcnn::nn::sample_seed;

use crate::dataset::{Dataset, LabeledImage, SplitFractions};
use crate::raster::{Gray, ValueRange};

pub const DISK_RADIUS: f32 = 0.42;
pub const DISK_LEVEL: f32 = 0.5;
pub const GRADIENT: f32 = 0.06;
pub const NOISE_STD: f32 = 0.02;
pub const DOT_LEVEL: f32 = 0.45;
pub const STREAK_LEVEL: f32 = -0.15;
/// Upper bound on the share of pixels touched by lesions.
pub const LESION_BUDGET: f64 = 0.015;

const LESION_STREAM: u64 = 0x6c65_7369_6f6e_7321;

/// Base disk for `seed`, optionally with the lesions drawn from a separate
/// stream, so the two renderings of one seed differ only where lesions are.
pub fn render(extent: usize, seed: u64, lesions: bool) -> Gray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = extent as f32;
    let r = DISK_RADIUS * e;
    let cx = (e - 1.0) / 2.0 + rng.random_range(-1.0..=1.0);
    let cy = (e - 1.0) / 2.0 + rng.random_range(-1.0..=1.0);
    let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (gx, gy) = (theta.cos(), theta.sin());
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");

    let mut img = Gray::filled(extent, extent, 0.0, ValueRange::Unit);
    for y in 0..extent {
        for x in 0..extent {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            let d = (dx * dx + dy * dy).sqrt();
            let cover = (r + 0.5 - d).clamp(0.0, 1.0);
            let n = noise.sample(&mut rng);
            if cover > 0.0 {
                let light = DISK_LEVEL + GRADIENT * (dx * gx + dy * gy) / r;
                img.set(x, y, (cover * light + n).clamp(0.0, 1.0));
            }
        }
    }
    if lesions {
        add_lesions(&mut img, cx, cy, r, &mut ChaCha8Rng::seed_from_u64(seed ^ LESION_STREAM));
    }
    img
}

fn add_lesions(img: &mut Gray, cx: f32, cy: f32, r: f32, rng: &mut ChaCha8Rng) {
    let budget = ((img.width * img.height) as f64 * LESION_BUDGET) as usize;
    let dots = rng.random_range(4..=8usize).min((budget / 5).max(1));
    let streaks = rng.random_range(1..=2usize);
    let mut used = 0;
    let bump = |img: &mut Gray, x: i64, y: i64, delta: f32, used: &mut usize| {
        if *used >= budget || x < 0 || y < 0 || x >= img.width as i64 || y >= img.height as i64 {
            return;
        }
        let v = img.get(x as usize, y as usize);
        img.set(x as usize, y as usize, (v + delta).clamp(0.0, 1.0));
        *used += 1;
    };
    let inside = |rng: &mut ChaCha8Rng| loop {
        let (a, b) = (rng.random_range(-1.0f32..1.0), rng.random_range(-1.0f32..1.0));
        if a * a + b * b <= 1.0 {
            let rr = 0.8 * r;
            return ((cx + a * rr).round() as i64, (cy + b * rr).round() as i64);
        }
    };
    for _ in 0..dots {
        let (x, y) = inside(rng);
        for (ox, oy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
            bump(img, x + ox, y + oy, DOT_LEVEL, &mut used);
        }
    }
    for _ in 0..streaks {
        let (x, y) = inside(rng);
        let len = rng.random_range(5..=8i64);
        let horizontal = rng.random_bool(0.5);
        for t in 0..len {
            let (px, py) = if horizontal { (x + t - len / 2, y) } else { (x, y + t - len / 2) };
            bump(img, px, py, STREAK_LEVEL, &mut used);
        }
    }
}

/// `n_per_class` images of each class at `extent × extent`, split 60/20/20.
pub fn synth_dataset(n_per_class: usize, extent: usize, seed: u64) -> Dataset {
    let mut items = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        for label in 0..2 {
            let s = sample_seed(seed, label, i);
            items.push(LabeledImage { id: format!("synth-{label}-{i}"), image: render(extent, s, label == 1), label });
        }
    }
    Dataset::split(items, SplitFractions::default(), seed)
}
