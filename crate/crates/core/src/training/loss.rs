use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{Result, TrainingError};
use crate::rbf::{head_logits, softmax, RbfFeatures};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

const ROW_SUM_TOL: f64 = 1e-6;

/// Loss mix and focal parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub ce_weight: f64,
    pub focal_weight: f64,
    pub gamma: f64,
    pub alpha: Vec<f64>,
}

impl LossConfig {
    /// Unit mix, given γ, α = 1 for every class.
    pub fn unit(classes: usize, gamma: f64) -> Self {
        Self {
            ce_weight: 1.0,
            focal_weight: 1.0,
            gamma,
            alpha: vec![1.0; classes],
        }
    }
}

// the negated comparisons below also reject NaN
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn check_shapes(probs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<()> {
    if probs.dim() != targets.dim() {
        return Err(TrainingError::ShapeMismatch(format!(
            "probs {:?} vs targets {:?}",
            probs.dim(),
            targets.dim()
        )));
    }
    if probs.nrows() == 0 || probs.ncols() == 0 {
        return Err(TrainingError::ShapeMismatch("empty batch".into()));
    }
    for (i, row) in probs.rows().into_iter().enumerate() {
        let s: f64 = row.sum();
        if !((s - 1.0).abs() <= ROW_SUM_TOL) {
            return Err(TrainingError::InvalidArgument(format!("probability row {i} sums to {s}")));
        }
    }
    Ok(())
}

#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn check_focal(classes: usize, alpha: &[f64], gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) {
        return Err(TrainingError::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    if alpha.len() != classes {
        return Err(TrainingError::ShapeMismatch(format!(
            "alpha has {} entries for {classes} classes",
            alpha.len()
        )));
    }
    Ok(())
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0)
}

fn ce_row(p: &[f64], y: &[f64]) -> f64 {
    -p.iter().zip(y).map(|(&p, &y)| if y == 0.0 { 0.0 } else { y * clamp(p).ln() }).sum::<f64>()
}

fn focal_row(p: &[f64], y: &[f64], alpha: &[f64], gamma: f64) -> f64 {
    -p.iter()
        .zip(y)
        .zip(alpha)
        .map(|((&p, &y), &a)| {
            if y == 0.0 {
                return 0.0;
            }
            let p = clamp(p);
            a * (1.0 - p).powf(gamma) * y * p.ln()
        })
        .sum::<f64>()
}

fn mean_over_rows(probs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, f: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let n = probs.nrows();
    let total: f64 = probs
        .rows()
        .into_iter()
        .zip(targets.rows())
        .map(|(p, y)| f(&p.to_vec(), &y.to_vec()))
        .sum();
    total / n as f64
}

/// Mean over the batch of `−Σ_c y_c ln p_c`.
pub fn cross_entropy(probs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<f64> {
    check_shapes(probs, targets)?;
    Ok(mean_over_rows(probs, targets, ce_row))
}

/// Mean over the batch of `−Σ_c α_c (1 − p_c)^γ y_c ln p_c`.
pub fn focal_loss(probs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, alpha: &[f64], gamma: f64) -> Result<f64> {
    check_shapes(probs, targets)?;
    check_focal(probs.ncols(), alpha, gamma)?;
    Ok(mean_over_rows(probs, targets, |p, y| focal_row(p, y, alpha, gamma)))
}

pub fn total_loss(probs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, cfg: &LossConfig) -> Result<f64> {
    let ce = cross_entropy(probs, targets)?;
    let focal = focal_loss(probs, targets, &cfg.alpha, cfg.gamma)?;
    Ok(cfg.ce_weight * ce + cfg.focal_weight * focal)
}

/// Per-example total loss without shape checks; used by the training loop.
pub(crate) fn example_loss(p: &[f64], y: &[f64], cfg: &LossConfig) -> f64 {
    cfg.ce_weight * ce_row(p, y) + cfg.focal_weight * focal_row(p, y, &cfg.alpha, cfg.gamma)
}

/// `∂L/∂p_c` for one example. Zero where the clamp is active.
fn dloss_dprob(p: &[f64], y: &[f64], cfg: &LossConfig) -> Vec<f64> {
    p.iter()
        .zip(y)
        .zip(&cfg.alpha)
        .map(|((&p, &y), &a)| {
            if y == 0.0 || p < PROB_FLOOR {
                return 0.0;
            }
            let omp = 1.0 - p;
            let ce = -y / p;
            let g = cfg.gamma;
            let pow_term = if g == 0.0 || omp == 0.0 { 0.0 } else { g * omp.powf(g - 1.0) * p.ln() };
            let focal = -a * y * (omp.powf(g) / p - pow_term);
            cfg.ce_weight * ce + cfg.focal_weight * focal
        })
        .collect()
}

/// Trainable head parameters in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl HeadParams {
    pub fn zeros(classes: usize, prototypes: usize) -> Self {
        Self {
            weights: Array2::zeros((classes, prototypes)),
            bias: Array1::zeros(classes),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights in row-major order followed by the bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().chain(self.bias.iter()).copied().collect()
    }

    pub fn assign(&mut self, flat: &[f64]) {
        let nw = self.weights.len();
        for (w, v) in self.weights.iter_mut().zip(&flat[..nw]) {
            *w = *v;
        }
        for (b, v) in self.bias.iter_mut().zip(&flat[nw..]) {
            *b = *v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Mean total loss of the batch at the given parameters.
    pub loss: f64,
}

impl HeadGradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().chain(self.bias.iter()).copied().collect()
    }
}

/// Analytic gradient of the mean total loss over a batch of precomputed
/// RBF activations `phi` (batch × k) with soft or one-hot `targets`.
pub fn head_gradients_from_activations(
    phi: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    head: &HeadParams,
    cfg: &LossConfig,
) -> Result<HeadGradients> {
    let (n, k) = phi.dim();
    let c = head.bias.len();
    if n == 0 {
        return Err(TrainingError::InvalidArgument("empty batch".into()));
    }
    if head.weights.dim() != (c, k) || targets.dim() != (n, c) || cfg.alpha.len() != c {
        return Err(TrainingError::ShapeMismatch(format!(
            "phi {:?}, targets {:?}, weights {:?}, alpha {}",
            phi.dim(),
            targets.dim(),
            head.weights.dim(),
            cfg.alpha.len()
        )));
    }
    let numerical = |quantity, example| TrainingError::Numerical {
        quantity,
        batch_size: n,
        example,
    };

    let mut dw = Array2::<f64>::zeros((c, k));
    let mut db = Array1::<f64>::zeros(c);
    let mut loss = 0.0;
    for (i, (phi_i, y_i)) in phi.rows().into_iter().zip(targets.rows()).enumerate() {
        let phi_i = phi_i.to_vec();
        let y_i = y_i.to_vec();
        let logits = head_logits(head.weights.view(), head.bias.view(), &phi_i);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(numerical("logit", i));
        }
        let p = softmax(&logits);
        let l = example_loss(&p, &y_i, cfg);
        if !l.is_finite() {
            return Err(numerical("loss", i));
        }
        loss += l;
        let g = dloss_dprob(&p, &y_i, cfg);
        let dot: f64 = g.iter().zip(&p).map(|(g, p)| g * p).sum();
        for j in 0..c {
            let delta = p[j] * (g[j] - dot);
            if !delta.is_finite() {
                return Err(numerical("gradient", i));
            }
            db[j] += delta;
            for (w, f) in dw.row_mut(j).iter_mut().zip(&phi_i) {
                *w += delta * f;
            }
        }
    }
    let inv = 1.0 / n as f64;
    dw.mapv_inplace(|v| v * inv);
    db.mapv_inplace(|v| v * inv);
    Ok(HeadGradients {
        weights: dw,
        bias: db,
        loss: loss * inv,
    })
}

/// Gradient of the mean total loss for a batch of raw embeddings.
pub fn head_gradients(
    embeddings: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    features: &RbfFeatures,
    head: &HeadParams,
    cfg: &LossConfig,
) -> Result<HeadGradients> {
    let mut phi = Array2::zeros((embeddings.nrows(), features.len()));
    for (i, z) in embeddings.rows().into_iter().enumerate() {
        let a = features.activations(&z.to_vec())?;
        phi.row_mut(i).assign(&Array1::from(a));
    }
    head_gradients_from_activations(phi.view(), targets, head, cfg)
}
