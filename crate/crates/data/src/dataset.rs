use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fdcnn::nn::Samples;
use fdcnn::{Scalar, Shape, Tensor};

use crate::error::{DataError, Result};
use crate::raster::{preprocess, to_grayscale, Gray, PreprocessConfig, ValueRange};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub image: Gray,
    /// 0 or 1.
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl SplitFractions {
    /// `(train, val, test)` sizes: floor, floor, remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = (n as f64 * self.train + 1e-9).floor() as usize;
        let val = ((n as f64 * self.val + 1e-9).floor() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledImage>,
    pub val: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
    pub fractions: SplitFractions,
}

impl Dataset {
    /// Seeded shuffle, then contiguous train/val/test slices.
    pub fn split(mut items: Vec<LabeledImage>, fractions: SplitFractions, seed: u64) -> Self {
        items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (tr, va, _) = fractions.sizes(items.len());
        let test = items.split_off(tr + va);
        let val = items.split_off(tr);
        Dataset { train: items, val, test, fractions }
    }

    pub fn get(&self, split: Split) -> &[LabeledImage] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unit-range tensor `(N, 1, H, W)`; every image must share one size.
    pub fn samples<T: Scalar>(&self, split: Split) -> Result<Samples<T>> {
        to_samples(self.get(split))
    }
}

pub fn to_samples<T: Scalar>(items: &[LabeledImage]) -> Result<Samples<T>> {
    let first = items.first().ok_or(DataError::Empty)?;
    let (w, h) = (first.image.width, first.image.height);
    let mut data = Vec::with_capacity(items.len() * w * h);
    for it in items {
        if (it.image.width, it.image.height) != (w, h) {
            return Err(DataError::Raster(format!(
                "image {} is {}x{}, expected {w}x{h}; resize before batching",
                it.id, it.image.width, it.image.height
            )));
        }
        data.extend(it.image.to_unit().data.iter().map(|&v| T::of(v as f64)));
    }
    let shape = Shape::new(items.len(), 1, h, w)?;
    Ok(Samples::new(Tensor::from_vec(shape, data)?, items.iter().map(|i| i.label).collect())?)
}

/// Diagnosis grade to binary class: 0 stays 0, grades 1 to 4 become 1.
pub fn binary_label(grade: &str) -> Option<usize> {
    match grade.trim() {
        "0" => Some(0),
        "1" | "2" | "3" | "4" => Some(1),
        _ => None,
    }
}

/// Reads a PNG or PPM file as a byte-range grayscale raster.
pub fn read_gray(path: &Path) -> Result<Gray> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => DataError::Io { path: path.to_path_buf(), source },
        other => DataError::Decode { path: path.to_path_buf(), message: other.to_string() },
    })?;
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        to_grayscale(rgb.width() as usize, rgb.height() as usize, 3, rgb.as_raw())
    } else {
        let l = img.to_luma8();
        Gray::new(l.width() as usize, l.height() as usize, l.as_raw().iter().map(|&v| v as f32).collect(), ValueRange::Byte)
    }
}

/// Writes a raster as an 8-bit grayscale PNG.
pub fn write_png(img: &Gray, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.to_byte().data.iter().map(|&v| v as u8).collect();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| DataError::Raster("buffer size mismatch".into()))?;
    buf.save(path).map_err(|e| DataError::Decode { path: path.to_path_buf(), message: e.to_string() })
}

fn find_image(dir: &Path, id: &str) -> Option<PathBuf> {
    ["png", "ppm"].iter().map(|ext| dir.join(format!("{id}.{ext}"))).find(|p| p.is_file())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadOptions {
    pub fractions: SplitFractions,
    pub seed: u64,
    /// Run [`preprocess`] on every image while loading.
    pub preprocess: Option<PreprocessConfig>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { fractions: SplitFractions::default(), seed: 0, preprocess: Some(PreprocessConfig::default()) }
    }
}

/// Reads the `id_code,diagnosis` CSV and its images, then splits.
pub fn load_dataset(image_dir: &Path, labels_csv: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(labels_csv)
        .map_err(|e| DataError::Csv { path: labels_csv.to_path_buf(), line: 1, message: e.to_string() })?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Csv { path: labels_csv.to_path_buf(), line: 1, message: e.to_string() })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| DataError::Csv {
            path: labels_csv.to_path_buf(),
            line: 1,
            message: format!("missing column {name:?} (expected header id_code,diagnosis)"),
        })
    };
    let (id_col, label_col) = (col("id_code")?, col("diagnosis")?);
    let mut items = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| DataError::Csv {
            path: labels_csv.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let (Some(id), Some(grade)) = (rec.get(id_col), rec.get(label_col)) else {
            return Err(DataError::Csv { path: labels_csv.to_path_buf(), line, message: "row is missing fields".into() });
        };
        if id.is_empty() {
            return Err(DataError::Csv { path: labels_csv.to_path_buf(), line, message: "empty id_code".into() });
        }
        let label = binary_label(grade).ok_or_else(|| DataError::UnknownLabel {
            path: labels_csv.to_path_buf(),
            line,
            label: grade.to_string(),
        })?;
        let path = find_image(image_dir, id).ok_or_else(|| DataError::MissingImage { id: id.to_string(), dir: image_dir.to_path_buf() })?;
        let mut image = read_gray(&path)?;
        if let Some(cfg) = &opts.preprocess {
            image = preprocess(&image, cfg, id)?;
        }
        items.push(LabeledImage { id: id.to_string(), image, label });
    }
    if items.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(Dataset::split(items, opts.fractions, opts.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(i: usize) -> LabeledImage {
        LabeledImage { id: format!("x{i}"), image: Gray::filled(2, 2, i as f32, ValueRange::Byte), label: i % 2 }
    }

    #[test]
    fn split_sizes() {
        let f = SplitFractions::default();
        assert_eq!(f.sizes(10), (6, 2, 2));
        assert_eq!(f.sizes(7), (4, 1, 2));
        assert_eq!(f.sizes(1), (0, 0, 1));
        for n in 0..200 {
            let (a, b, c) = f.sizes(n);
            assert_eq!(a + b + c, n);
        }
        let d = Dataset::split((0..10).map(item).collect(), f, 3);
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (6, 2, 2));
        let again = Dataset::split((0..10).map(item).collect(), f, 3);
        assert_eq!(d, again);
        let mut ids: Vec<_> = d.train.iter().chain(&d.val).chain(&d.test).map(|i| i.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn label_mapping() {
        assert_eq!(binary_label("3"), Some(1));
        assert_eq!(binary_label("0"), Some(0));
        assert_eq!(binary_label("4"), Some(1));
        assert_eq!(binary_label("5"), None);
        assert_eq!(binary_label("x"), None);
    }
}
