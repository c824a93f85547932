use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fdcnn::nn::Augment;
use fdcnn::{RealTensor, Scalar, Tensor};

use crate::raster::Gray;

/// One draw of the augmentation: rotation, then flips.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub angle_deg: f32,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams { angle_deg: 0.0, hflip: false, vflip: false };

    /// Angle uniform in `[0, 360)`, each flip with probability one half.
    pub fn draw(rng: &mut impl Rng) -> Self {
        AugmentParams {
            angle_deg: rng.random_range(0.0..360.0),
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
        }
    }
}

fn bilinear_or_zero(img: &Gray, x: f32, y: f32) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: f32, yi: f32| -> f32 {
        if xi < 0.0 || yi < 0.0 || xi >= img.width as f32 || yi >= img.height as f32 {
            0.0
        } else {
            img.get(xi as usize, yi as usize)
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx;
    let bottom = at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Counter-clockwise rotation about the image centre, zero fill outside.
pub fn rotate(img: &Gray, angle_deg: f32) -> Gray {
    if angle_deg == 0.0 {
        return img.clone();
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    let cx = (img.width as f32 - 1.0) / 2.0;
    let cy = (img.height as f32 - 1.0) / 2.0;
    let mut out = Gray::filled(img.width, img.height, 0.0, img.range);
    for y in 0..img.height {
        for x in 0..img.width {
            // Inverse map of the output pixel. The y axis points down, so a
            // counter-clockwise turn on screen is clockwise in these coordinates.
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            let sx = c * dx - s * dy + cx;
            let sy = s * dx + c * dy + cy;
            out.set(x, y, bilinear_or_zero(img, sx, sy));
        }
    }
    out
}

pub fn hflip(img: &Gray) -> Gray {
    let mut out = img.clone();
    for y in 0..img.height {
        out.data[y * img.width..(y + 1) * img.width].reverse();
    }
    out
}

pub fn vflip(img: &Gray) -> Gray {
    let mut out = img.clone();
    for y in 0..img.height {
        let src = img.height - 1 - y;
        out.data[y * img.width..(y + 1) * img.width].copy_from_slice(&img.data[src * img.width..(src + 1) * img.width]);
    }
    out
}

pub fn apply(img: &Gray, p: AugmentParams) -> Gray {
    let mut out = rotate(img, p.angle_deg);
    if p.hflip {
        out = hflip(&out);
    }
    if p.vflip {
        out = vflip(&out);
    }
    out
}

/// Random draw from `rng`, applied to a square image.
pub fn augment(img: &Gray, rng: &mut impl Rng) -> Gray {
    apply(img, AugmentParams::draw(rng))
}

/// Training-time augmentation of `(1, C, H, W)` samples, one stream per seed.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomAugment;

impl<T: Scalar> Augment<T> for RandomAugment {
    fn augment(&self, image: &RealTensor<T>, seed: u64) -> RealTensor<T> {
        let s = image.shape();
        let params = AugmentParams::draw(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut planes = Vec::with_capacity(s.len());
        for c in 0..s.channels {
            let plane = image.channel_slice(c, 1).expect("channel in range").to_vec();
            let g = Gray {
                width: s.width,
                height: s.height,
                data: plane.iter().map(|v| v.to_f64_lossy() as f32).collect(),
                range: crate::raster::ValueRange::Unit,
            };
            planes.extend(apply(&g, params).data.into_iter().map(|v| T::of(v as f64)));
        }
        Tensor::from_vec(s, planes).expect("same shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ValueRange;

    #[test]
    fn identity_and_flips() {
        let img = Gray::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], ValueRange::Byte).unwrap();
        assert_eq!(apply(&img, AugmentParams::IDENTITY), img);
        assert_eq!(hflip(&img).data, vec![2.0, 1.0, 4.0, 3.0]);
        assert_eq!(vflip(&img).data, vec![3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn quarter_turn_moves_a_pixel() {
        let n = 9;
        let mut img = Gray::filled(n, n, 0.0, ValueRange::Unit);
        img.set(6, 4, 1.0); // two right of centre
        let r = rotate(&img, 90.0);
        let (mut bx, mut by, mut best) = (0, 0, 0.0);
        for y in 0..n {
            for x in 0..n {
                if r.get(x, y) > best {
                    (bx, by, best) = (x, y, r.get(x, y));
                }
            }
        }
        // Counter-clockwise on screen: right of centre goes to above centre.
        assert!((bx as i32 - 4).abs() <= 1 && (by as i32 - 2).abs() <= 1, "({bx}, {by})");
    }

    #[test]
    fn draws_are_seeded() {
        let a = AugmentParams::draw(&mut ChaCha8Rng::seed_from_u64(5));
        let b = AugmentParams::draw(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!((0.0..360.0).contains(&a.angle_deg));
    }
}
