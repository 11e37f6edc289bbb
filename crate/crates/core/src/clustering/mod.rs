//! Prototype selection: per-class PAM K-Medoids over the curated concept
//! pool, scored with silhouettes.

mod kmedoids;
mod prototypes;
mod silhouette;

use ndarray::ArrayView1;
use thiserror::Error;

pub use kmedoids::{kmedoids, medoid_cost, ClusteringResult};
pub use prototypes::{select_prototypes, Prototype, PrototypeSet, SilhouetteReport};
pub use silhouette::{silhouette, silhouette_samples};

use crate::store::{SegmentKey, StoreError};

/// Accepted-segment deficit for one class.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Shortfall {
    pub class_index: usize,
    pub class_name: String,
    pub accepted: usize,
    pub required: usize,
}

impl std::fmt::Display for Shortfall {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "class {:?} has {} accepted segments, needs {} (short by {})",
            self.class_name,
            self.accepted,
            self.required,
            self.required - self.accepted
        )
    }
}

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("k = {k} is invalid for {n} points (need 1 <= k <= n)")]
    InvalidK { k: usize, n: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{points} points but {labels} cluster labels")]
    ShapeMismatch { points: usize, labels: usize },
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("concept pool too small: {}", .0.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("; "))]
    InsufficientPool(Vec<Shortfall>),
    #[error("accepted segment {0} is not in the segment index")]
    UnknownSegment(SegmentKey),
    #[error("accepted segment {0} has no embedding row")]
    MissingEmbedding(SegmentKey),
    #[error("prototype spread is degenerate: {0}")]
    DegenerateSpread(String),
    #[error("invalid prototype set: {0}")]
    InvalidPrototypes(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T, E = ClusteringError> = std::result::Result<T, E>;

pub(crate) fn euclidean(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
