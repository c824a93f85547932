//! Grayscale rasters and the preprocessing chain.

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

/// Which value range a raster's pixels are in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueRange {
    /// `[0, 255]`, integral after each stage that rounds.
    Byte,
    /// `[0, 1]`.
    Unit,
}

impl ValueRange {
    pub fn max(self) -> f32 {
        match self {
            ValueRange::Byte => 255.0,
            ValueRange::Unit => 1.0,
        }
    }
}

/// Row-major single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    pub range: ValueRange,
}

impl Gray {
    pub fn new(width: usize, height: usize, data: Vec<f32>, range: ValueRange) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(DataError::Raster(format!("{width}x{height} raster with {} values", data.len())));
        }
        Ok(Gray { width, height, data, range })
    }

    pub fn filled(width: usize, height: usize, value: f32, range: ValueRange) -> Self {
        Gray { width, height, data: vec![value; width * height], range }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn to_unit(&self) -> Gray {
        match self.range {
            ValueRange::Unit => self.clone(),
            ValueRange::Byte => Gray { data: self.data.iter().map(|v| v / 255.0).collect(), range: ValueRange::Unit, ..*self },
        }
    }

    pub fn to_byte(&self) -> Gray {
        match self.range {
            ValueRange::Byte => self.clone(),
            ValueRange::Unit => Gray { data: self.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0)).collect(), range: ValueRange::Byte, ..*self },
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.data.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    /// Copy of the `w x h` block at `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Gray {
        let mut data = Vec::with_capacity(w * h);
        for r in y..y + h {
            data.extend_from_slice(&self.data[r * self.width + x..r * self.width + x + w]);
        }
        Gray { width: w, height: h, data, range: self.range }
    }
}

/// Luminance `0.299 R + 0.587 G + 0.114 B` of interleaved 8-bit pixels, rounded.
pub fn to_grayscale(width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<Gray> {
    if channels != 3 {
        return Err(DataError::Raster(format!("grayscale conversion needs 3 channels, got {channels}")));
    }
    if pixels.len() != width * height * 3 {
        return Err(DataError::Raster(format!("{width}x{height} RGB image with {} bytes", pixels.len())));
    }
    let data = pixels
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32).round())
        .collect();
    Gray::new(width, height, data, ValueRange::Byte)
}

/// Tight crop of the pixels above `threshold` (in the raster's own range).
pub fn mask_and_crop(img: &Gray, threshold: f32, id: &str) -> Result<Gray> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..img.height {
        for x in 0..img.width {
            if img.get(x, y) > threshold {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(DataError::EmptyMask { id: id.to_string(), threshold });
    }
    Ok(img.crop(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
}

/// Bilinear resize to `target x target` with pixel-centre alignment.
pub fn resize(img: &Gray, target: usize) -> Result<Gray> {
    resize_to(img, target, target)
}

pub fn resize_to(img: &Gray, width: usize, height: usize) -> Result<Gray> {
    if width == 0 || height == 0 {
        return Err(DataError::Raster("resize target must be positive".into()));
    }
    let sx = img.width as f32 / width as f32;
    let sy = img.height as f32 / height as f32;
    let sample = |pos: f32, len: usize| -> (usize, usize, f32) {
        let p = pos.clamp(0.0, (len - 1) as f32);
        let i = p.floor() as usize;
        let j = (i + 1).min(len - 1);
        (i, j, p - i as f32)
    };
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = sample((y as f32 + 0.5) * sy - 0.5, img.height);
        for x in 0..width {
            let (x0, x1, fx) = sample((x as f32 + 0.5) * sx - 0.5, img.width);
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Gray::new(width, height, data, img.range)
}

pub const CLAHE_CLIP_LIMIT: f32 = 2.0;
pub const CLAHE_GRID: usize = 8;

/// Contrast limited adaptive histogram equalization on 256 levels.
///
/// Each of the `grid x grid` tiles gets a clipped, redistributed histogram
/// and its equalizing lookup table. Pixels blend the four nearest tile
/// tables bilinearly. The clip limit is relative to a flat histogram.
pub fn clahe(img: &Gray, clip_limit: f32, grid: usize) -> Result<Gray> {
    if grid == 0 || grid > img.width || grid > img.height {
        return Err(DataError::Raster(format!("CLAHE grid {grid} does not fit a {}x{} image", img.width, img.height)));
    }
    let src = img.to_byte();
    let tw = img.width.div_ceil(grid);
    let th = img.height.div_ceil(grid);
    let mut luts = vec![[0f32; 256]; grid * grid];
    for ty in 0..grid {
        for tx in 0..grid {
            let (x0, y0) = (tx * tw, ty * th);
            let (x1, y1) = ((x0 + tw).min(img.width), (y0 + th).min(img.height));
            let mut hist = [0u32; 256];
            if x0 < x1 && y0 < y1 {
                for y in y0..y1 {
                    for x in x0..x1 {
                        hist[src.get(x, y) as usize] += 1;
                    }
                }
            }
            let n: u32 = hist.iter().sum();
            let lut = &mut luts[ty * grid + tx];
            if n == 0 {
                for (v, l) in lut.iter_mut().enumerate() {
                    *l = v as f32;
                }
                continue;
            }
            let limit = ((clip_limit.max(0.0) * n as f32 / 256.0).floor() as u32).max(1);
            let mut excess = 0;
            for h in hist.iter_mut() {
                if *h > limit {
                    excess += *h - limit;
                    *h = limit;
                }
            }
            let (share, rest) = (excess / 256, excess % 256);
            for (v, h) in hist.iter_mut().enumerate() {
                *h += share + u32::from((v as u32) < rest);
            }
            let mut cdf = 0;
            for (v, &h) in hist.iter().enumerate() {
                cdf += h;
                lut[v] = (cdf as f32 * 255.0 / n as f32).round().min(255.0);
            }
        }
    }
    // Tile centres in pixel coordinates; blend weights clamp at the borders.
    let locate = |p: usize, tile: usize| -> (usize, usize, f32) {
        let g = (p as f32 + 0.5) / tile as f32 - 0.5;
        if g <= 0.0 {
            (0, 0, 0.0)
        } else if g >= (grid - 1) as f32 {
            (grid - 1, grid - 1, 0.0)
        } else {
            let i = g.floor() as usize;
            (i, i + 1, g - i as f32)
        }
    };
    let mut data = Vec::with_capacity(img.width * img.height);
    for y in 0..img.height {
        let (ty0, ty1, fy) = locate(y, th);
        for x in 0..img.width {
            let (tx0, tx1, fx) = locate(x, tw);
            let v = src.get(x, y) as usize;
            let a = luts[ty0 * grid + tx0][v] * (1.0 - fx) + luts[ty0 * grid + tx1][v] * fx;
            let b = luts[ty1 * grid + tx0][v] * (1.0 - fx) + luts[ty1 * grid + tx1][v] * fx;
            data.push((a * (1.0 - fy) + b * fy).round().clamp(0.0, 255.0));
        }
    }
    let out = Gray::new(img.width, img.height, data, ValueRange::Byte)?;
    Ok(if img.range == ValueRange::Unit { out.to_unit() } else { out })
}

/// Settings of the grayscale, mask-and-crop, resize and CLAHE chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Mask threshold on the byte scale.
    pub threshold: f32,
    pub size: usize,
    pub clip_limit: f32,
    pub grid: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { threshold: 10.0, size: 512, clip_limit: CLAHE_CLIP_LIMIT, grid: CLAHE_GRID }
    }
}

/// Mask and crop, resize, CLAHE. Returns a byte-range raster.
pub fn preprocess(img: &Gray, cfg: &PreprocessConfig, id: &str) -> Result<Gray> {
    let byte = img.to_byte();
    let cropped = mask_and_crop(&byte, cfg.threshold, id)?;
    let resized = resize(&cropped, cfg.size)?;
    clahe(&resized, cfg.clip_limit, cfg.grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_examples() {
        let px = |r, g, b| to_grayscale(1, 1, 3, &[r, g, b]).unwrap().data[0];
        assert_eq!(px(255, 255, 255), 255.0);
        assert_eq!(px(0, 0, 0), 0.0);
        assert_eq!(px(0, 255, 0), 150.0);
        assert!(to_grayscale(1, 1, 4, &[0; 4]).is_err());
    }

    fn disk(size: usize, r: f32) -> Gray {
        let c = size as f32 / 2.0;
        let mut g = Gray::filled(size, size, 0.0, ValueRange::Byte);
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f32 + 0.5 - c, y as f32 + 0.5 - c);
                if dx * dx + dy * dy <= r * r {
                    g.set(x, y, 255.0);
                }
            }
        }
        g
    }

    #[test]
    fn mask_and_crop_examples() {
        let black = Gray::filled(8, 8, 0.0, ValueRange::Byte);
        let err = mask_and_crop(&black, 10.0, "img_7").unwrap_err().to_string();
        assert!(err.contains("img_7"), "{err}");
        for r in [5.0f32, 10.0, 17.5] {
            let c = mask_and_crop(&disk(64, r), 10.0, "d").unwrap();
            assert!((c.width as f32 - 2.0 * r).abs() <= 1.0, "{} vs {r}", c.width);
            assert!((c.height as f32 - 2.0 * r).abs() <= 1.0);
        }
        let tight = Gray::new(3, 2, vec![20.0, 30.0, 40.0, 50.0, 60.0, 70.0], ValueRange::Byte).unwrap();
        assert_eq!(mask_and_crop(&tight, 10.0, "t").unwrap(), tight);
    }

    #[test]
    fn resize_examples() {
        let img = Gray::new(3, 2, vec![1.0, 5.0, 9.0, 2.0, 4.0, 8.0], ValueRange::Byte).unwrap();
        let same = resize_to(&img, 3, 2).unwrap();
        assert!(same.data.iter().zip(&img.data).all(|(a, b)| (a - b).abs() < 1e-6));
        let c = resize(&Gray::filled(7, 5, 42.0, ValueRange::Byte), 11).unwrap();
        assert!(c.data.iter().all(|&v| (v - 42.0).abs() < 1e-4));
        let checker = Gray::new(8, 8, (0..64).map(|i| if (i / 8 + i % 8) % 2 == 0 { 255.0 } else { 0.0 }).collect(), ValueRange::Byte).unwrap();
        let half = resize(&checker, 4).unwrap();
        assert!(half.data.iter().all(|&v| (v - 127.5).abs() < 1e-3), "{:?}", half.data);
        assert!(resize(&img, 0).is_err());
    }

    #[test]
    fn clahe_examples() {
        let flat = Gray::filled(32, 32, 77.0, ValueRange::Byte);
        let out = clahe(&flat, 2.0, 8).unwrap();
        assert!(out.data.iter().all(|&v| v == out.data[0]));
        assert!(clahe(&flat, 2.0, 33).is_err());

        // Low-contrast dark half, low-contrast bright half.
        let mut img = Gray::filled(64, 64, 0.0, ValueRange::Byte);
        for y in 0..64 {
            for x in 0..64 {
                let base = if x < 32 { 40.0 } else { 180.0 };
                img.set(x, y, base + ((x * 7 + y * 13) % 9) as f32);
            }
        }
        let eq = clahe(&img, 2.0, 8).unwrap();
        assert!(eq.data.iter().all(|&v| (0.0..=255.0).contains(&v)));
        for (tx, ty) in [(0, 0), (1, 3), (6, 5), (7, 7)] {
            let before = img.crop(tx * 8, ty * 8, 8, 8).std();
            let after = eq.crop(tx * 8, ty * 8, 8, 8).std();
            assert!(after >= before, "tile ({tx},{ty}): {after} < {before}");
        }
    }
}
