use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::loss::cross_entropy_batch;
use crate::nn::metrics::{metrics_from_scores, Metrics};
use crate::nn::model::Model;
use crate::nn::params::{adam_step, TrainConfig};
use crate::scalar::Scalar;
use crate::tensor::{RealTensor, Shape, Tensor};

/// Images `(N, C, H, W)` with one class index per image.
#[derive(Clone, Debug)]
pub struct Samples<T: Scalar> {
    pub images: RealTensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Samples<T> {
    pub fn new(images: RealTensor<T>, labels: Vec<usize>) -> Result<Self> {
        if images.shape().batch != labels.len() {
            return Err(shape_err(format!("{} images but {} labels", images.shape().batch, labels.len())));
        }
        Ok(Samples { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stacks the selected samples, passing each through `map` first.
    pub fn gather(&self, idx: &[usize], mut map: impl FnMut(usize, RealTensor<T>) -> RealTensor<T>) -> Result<(RealTensor<T>, Vec<usize>)> {
        let parts: Vec<RealTensor<T>> = idx
            .iter()
            .map(|&i| self.images.batch_slice(i, 1).map(|x| map(i, x)))
            .collect::<Result<_>>()?;
        Ok((Tensor::concat_batch(&parts)?, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Per-sample image transformation driven by a seed.
pub trait Augment<T: Scalar>: Sync {
    /// `image` has batch 1; the result must keep its shape.
    fn augment(&self, image: &RealTensor<T>, seed: u64) -> RealTensor<T>;
}

/// Seed for one sample in one epoch, independent of batch composition.
pub fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
    pub steps: usize,
}

/// Mini-batch Adam training with a seeded shuffle each epoch.
///
/// One `ChaCha8Rng` seeded with `cfg.seed` produces the epoch permutations,
/// consumed once per epoch in order. Augmentation seeds come from
/// [`sample_seed`] so they do not depend on that generator.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &Samples<T>,
    val: Option<&Samples<T>>,
    cfg: &TrainConfig,
    augment: Option<&dyn Augment<T>>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport { epochs: Vec::with_capacity(cfg.epochs), steps: 0 };
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = data.gather(batch, |i, img| match augment {
                Some(a) => a.augment(&img, sample_seed(cfg.seed, epoch, i)),
                None => img,
            })?;
            let logits = model.forward(&x)?;
            let (loss, g) = cross_entropy_batch(&logits, &y)?;
            let grads = model.backward(&g)?;
            adam_step(&mut model.store, &grads, cfg)?;
            total += loss.to_f64_lossy() * batch.len() as f64;
            report.steps += 1;
        }
        let val_loss = match val {
            Some(v) if !v.is_empty() => Some(mean_loss(model, v, cfg.batch_size)?),
            _ => None,
        };
        report.epochs.push(EpochLoss { epoch: epoch + 1, train_loss: total / data.len() as f64, val_loss });
    }
    Ok(report)
}

fn batches(n: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(size.max(1)).map(move |s| (s..(s + size).min(n)).collect())
}

/// Mean cross entropy without updating the model.
pub fn mean_loss<T: Scalar>(model: &mut Model<T>, data: &Samples<T>, batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for idx in batches(data.len(), batch_size.max(16)) {
        let (x, y) = data.gather(&idx, |_, img| img)?;
        let (loss, _) = cross_entropy_batch(&model.forward(&x)?, &y)?;
        total += loss.to_f64_lossy() * idx.len() as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Positive-class probabilities for every sample.
pub fn scores<T: Scalar>(model: &mut Model<T>, data: &Samples<T>, batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for idx in batches(data.len(), batch_size.max(16)) {
        let (x, _) = data.gather(&idx, |_, img| img)?;
        out.extend(model.predict(&x)?.iter().map(|p| p[1].to_f64_lossy()));
    }
    Ok(out)
}

pub fn evaluate<T: Scalar>(model: &mut Model<T>, data: &Samples<T>) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    metrics_from_scores(&scores(model, data, 64)?, &data.labels)
}

/// Per-pixel mean image and one global scale, fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shape: Shape,
    pub mean: Vec<f64>,
    pub std: f64,
}

impl Standardizer {
    pub fn fit<T: Scalar>(data: &Samples<T>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Data("cannot fit normalization on an empty split".into()));
        }
        let s = data.images.shape();
        let per = s.len() / s.batch;
        let v = data.images.to_vec();
        let mut mean = vec![0.0; per];
        for img in v.chunks_exact(per) {
            for (m, &x) in mean.iter_mut().zip(img) {
                *m += x.to_f64_lossy();
            }
        }
        mean.iter_mut().for_each(|m| *m /= s.batch as f64);
        let mut ss = 0.0;
        for img in v.chunks_exact(per) {
            ss += img.iter().zip(&mean).map(|(&x, m)| (x.to_f64_lossy() - m).powi(2)).sum::<f64>();
        }
        let std = (ss / s.len() as f64).sqrt();
        Ok(Standardizer { shape: Shape { batch: 1, ..s }, mean, std: if std > 0.0 { std } else { 1.0 } })
    }

    pub fn apply<T: Scalar>(&self, data: &Samples<T>) -> Result<Samples<T>> {
        let s = data.images.shape();
        if (Shape { batch: 1, ..s }) != self.shape {
            return Err(shape_err(format!("normalization fitted on {}, applied to {s}", self.shape)));
        }
        let per = self.mean.len();
        let v: Vec<T> = data
            .images
            .to_vec()
            .chunks_exact(per)
            .flat_map(|img| img.iter().zip(&self.mean).map(|(&x, m)| T::of((x.to_f64_lossy() - m) / self.std)).collect::<Vec<_>>())
            .collect();
        Samples::new(Tensor::from_vec(s, v)?, data.labels.clone())
    }
}
