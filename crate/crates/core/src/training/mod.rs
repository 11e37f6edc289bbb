//! Head training: cross-entropy plus focal loss, Adam with step decay,
//! early stopping and embedding-space augmentation.

mod adam;
mod augment;
mod config;
mod loss;
mod metrics;
mod split;
mod trainer;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use augment::{augment_mixup, augment_noise, smote_interpolate, smote_oversample, NoiseMode};
pub use config::{AugmentationConfig, TrainConfig};
pub use loss::{
    cross_entropy, focal_loss, head_gradients, head_gradients_from_activations, total_loss, HeadGradients,
    HeadParams, LossConfig, PROB_FLOOR,
};
pub use metrics::{evaluate, Metrics};
pub use split::{stratified_split, stratified_split_manifest};
pub use trainer::{
    dataset_loss, group_images, inverse_frequency_alpha, train, EarlyStopping, EpochStats, ImageExamples,
    StopReason, TrainReport, TrainingData,
};

use crate::rbf::RbfError;
use crate::store::SegmentKey;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite {quantity} in a batch of {batch_size} (example {example})")]
    Numerical {
        quantity: &'static str,
        batch_size: usize,
        example: usize,
    },
    #[error("class {0} has no training examples")]
    EmptyClass(String),
    #[error("{split} split is empty")]
    EmptySplit { split: &'static str },
    #[error("class {class:?} has {count} image(s); stratified split needs at least 2")]
    TooFewImages { class: usize, count: usize },
    #[error("image {0} has no segment embeddings")]
    MissingImage(String),
    #[error("segment {0} has no embedding row")]
    MissingSegment(SegmentKey),
    #[error(transparent)]
    Model(#[from] RbfError),
}

pub type Result<T, E = TrainingError> = std::result::Result<T, E>;
