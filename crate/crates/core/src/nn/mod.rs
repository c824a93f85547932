//! Spatial-domain training stack: layers, loss, Adam, training and metrics.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod train;

pub use gradcheck::{check_layer, gradient_check, GradCheckReport, LayerCheck};
pub use layers::{avg_pool2, fully_connected, max_pool2, relu, Activation, Layer};
pub use loss::{cross_entropy, cross_entropy_batch, softmax};
pub use metrics::{auc, metrics_from_scores, Metrics};
pub use model::Model;
pub use params::{adam_step, Gradients, ParamId, ParameterStore, TrainConfig};
pub use train::{evaluate, mean_loss, sample_seed, scores, train, Augment, EpochLoss, Samples, Standardizer, TrainReport};
