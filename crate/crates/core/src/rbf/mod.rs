//! Gaussian RBF layer with a softmax head, per-segment inference, image-level
//! averaging and explanations that reuse the exact values behind each
//! decision.

mod model;
mod persist;

use ndarray::{Array2, ArrayView1, ArrayView2};
use thiserror::Error;

pub(crate) use model::{average_probabilities, trace_segment};
pub use model::{Explanation, Prediction, RbfModel, SegmentExplanation, SegmentTrace, TopPrototype};
pub use persist::{load_model, save_model, MODEL_FORMAT, MODEL_VERSION};

#[derive(Debug, Error)]
pub enum RbfError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("at least one segment embedding is required")]
    EmptySegments,
    #[error("{0}")]
    DegenerateSpread(String),
    #[error("not a model file: {0}")]
    Format(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = RbfError> = std::result::Result<T, E>;

/// Frozen RBF feature map: prototype centers and a shared spread σ.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfFeatures {
    centers: Array2<f64>,
    sigma: f64,
}

impl RbfFeatures {
    pub fn new(centers: Array2<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(RbfError::InvalidModel(format!("sigma must be positive, got {sigma}")));
        }
        if centers.nrows() == 0 || centers.ncols() == 0 {
            return Err(RbfError::InvalidModel("no prototype centers".into()));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(RbfError::InvalidModel("non-finite prototype center".into()));
        }
        Ok(Self { centers, sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    /// Number of prototypes.
    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    /// `φᵢ(z) = exp(−‖z − cᵢ‖² / (2σ²))` for every prototype.
    ///
    /// Values stay inside `(0, 1]`: far-away points floor at the smallest
    /// positive normal, and only an exact match reaches 1.
    pub fn activations(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(RbfError::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        let denom = 2.0 * self.sigma * self.sigma;
        Ok(self
            .centers
            .rows()
            .into_iter()
            .map(|c| {
                let d2: f64 = c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                let phi = (-d2 / denom).exp();
                if d2 > 0.0 && phi >= 1.0 {
                    1.0 - f64::EPSILON / 2.0
                } else {
                    phi.max(f64::MIN_POSITIVE)
                }
            })
            .collect())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `W · Φ + b`, accumulated in 64-bit whatever the parameter storage.
pub(crate) fn head_logits<A: Copy + Into<f64>>(weights: ArrayView2<'_, A>, bias: ArrayView1<'_, A>, phi: &[f64]) -> Vec<f64> {
    weights
        .rows()
        .into_iter()
        .zip(bias.iter())
        .map(|(row, &b)| row.iter().zip(phi).map(|(&w, p)| w.into() * p).sum::<f64>() + b.into())
        .collect()
}

/// Median of pairwise Euclidean distances between prototype vectors.
///
/// When duplicates push the median to zero, the median of the strictly
/// positive distances is used instead. Fails when fewer than two distinct
/// vectors exist.
pub fn default_sigma(vectors: &[&[f32]]) -> Result<f64> {
    if vectors.len() < 2 {
        return Err(RbfError::DegenerateSpread(format!(
            "need at least 2 prototypes to estimate sigma, got {}",
            vectors.len()
        )));
    }
    let mut d = Vec::with_capacity(vectors.len() * (vectors.len() - 1) / 2);
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            let s: f64 = vectors[i]
                .iter()
                .zip(vectors[j])
                .map(|(&a, &b)| {
                    let t = a as f64 - b as f64;
                    t * t
                })
                .sum();
            d.push(s.sqrt());
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let m = median(&mut d);
    if m > 0.0 {
        return Ok(m);
    }
    let mut positive: Vec<f64> = d.into_iter().filter(|&v| v > 0.0).collect();
    if positive.is_empty() {
        return Err(RbfError::DegenerateSpread("all prototypes coincide".into()));
    }
    Ok(median(&mut positive))
}
