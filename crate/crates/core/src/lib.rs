//! Prototype-based interpretable image classification.
//!
//! The pipeline runs in stages:
//!
//! 1. [`segmentation`] splits each image into SLIC superpixels and cuts one
//!    224×224 crop per region.
//! 2. An external feature extractor turns crops into embeddings, exchanged
//!    through the binary format in [`store`].
//! 3. A human curator accepts or rejects segments ([`store::curation`],
//!    ranked by [`active`]).
//! 4. [`clustering`] runs PAM K-Medoids per class over the accepted pool to
//!    pick prototypes that are real segments.
//! 5. [`rbf`] scores embeddings against prototypes with a Gaussian kernel and
//!    a softmax head; every prediction carries the activations it was
//!    computed from.
//! 6. [`training`] fits the head with cross-entropy plus focal loss and Adam.

pub mod active;
pub mod clustering;
pub mod rbf;
pub mod segmentation;
pub mod store;
pub mod training;

pub use clustering::{kmedoids, select_prototypes, silhouette, ClusteringResult, Prototype, PrototypeSet};
pub use rbf::{default_sigma, Explanation, Prediction, RbfModel};
pub use segmentation::{extract_segment_crops, slic_segment, Image, LabelMap, SegmentCrop, SlicParams};
pub use store::{DatasetManifest, EmbeddingStore, SegmentKey};
pub use training::{train, TrainConfig, TrainReport};

/// Index of the largest value; ties resolve to the lowest index.
///
/// Returns `None` for an empty slice. NaN entries never win.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            None if !v.is_nan() => best = Some(i),
            Some(b) if v > values[b] => best = Some(i),
            _ => {}
        }
    }
    best
}
