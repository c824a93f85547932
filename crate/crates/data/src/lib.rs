//! Fundus preprocessing, augmentation, dataset loading and synthetic data.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod raster;
pub mod synth;

pub use augment::{augment, AugmentParams, RandomAugment};
pub use dataset::{load_dataset, to_samples, Dataset, LabeledImage, LoadOptions, Split, SplitFractions};
pub use error::{DataError, Result};
pub use raster::{clahe, mask_and_crop, preprocess, resize, to_grayscale, Gray, PreprocessConfig, ValueRange};
pub use synth::synth_dataset;
