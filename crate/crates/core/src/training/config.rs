use serde::{Deserialize, Serialize};

use super::{Result, TrainingError};

/// Embedding-space augmentation, applied to training batches only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Std of additive Gaussian noise; 0 disables it.
    pub gaussian_sigma: f64,
    /// Half-width of additive uniform noise; 0 disables it.
    pub simple_amplitude: f64,
    pub mixup: bool,
    /// λ ~ Beta(mixup_beta, mixup_beta).
    pub mixup_beta: f64,
    pub smote: bool,
    pub smote_neighbors: usize,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            gaussian_sigma: 0.0,
            simple_amplitude: 0.0,
            mixup: false,
            mixup_beta: 0.2,
            smote: false,
            smote_neighbors: 5,
        }
    }
}

impl AugmentationConfig {
    pub fn any_enabled(&self) -> bool {
        self.gaussian_sigma > 0.0 || self.simple_amplitude > 0.0 || self.mixup || self.smote
    }
}

/// Contents of `train.config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Images per batch; all segments of an image share a batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub gamma: f64,
    /// Per-class focal weights; inverse class frequency when absent.
    pub alpha: Option<Vec<f64>>,
    pub ce_weight: f64,
    pub focal_weight: f64,
    /// RBF spread; the prototype set's default when absent.
    pub sigma: Option<f64>,
    pub val_fraction: f64,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 50,
            early_stop_patience: 10,
            lr_decay_every: 10,
            lr_decay_factor: 0.5,
            gamma: 2.0,
            alpha: None,
            ce_weight: 1.0,
            focal_weight: 1.0,
            sigma: None,
            val_fraction: 0.2,
            seed: 0,
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail validation
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainingError::InvalidConfig(m));
        let positive = [
            ("learning_rate", self.learning_rate),
            ("epsilon", self.epsilon),
            ("lr_decay_factor", self.lr_decay_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.lr_decay_every == 0 {
            return bad("batch_size, max_epochs and lr_decay_every must be >= 1".into());
        }
        if self.early_stop_patience == 0 || self.early_stop_patience > self.max_epochs {
            return bad(format!(
                "early_stop_patience must be in 1..={}, got {}",
                self.max_epochs, self.early_stop_patience
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if let Some(alpha) = &self.alpha {
            if alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                return bad("every alpha must be positive".into());
            }
        }
        if self.ce_weight < 0.0 || self.focal_weight < 0.0 || self.ce_weight + self.focal_weight == 0.0 {
            return bad("loss mix weights must be >= 0 and not both zero".into());
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("sigma must be positive, got {s}"));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        let a = &self.augmentation;
        if a.gaussian_sigma < 0.0 || a.simple_amplitude < 0.0 {
            return bad("noise amplitudes must be >= 0".into());
        }
        if a.mixup && !(a.mixup_beta > 0.0) {
            return bad("mixup_beta must be positive".into());
        }
        if a.smote && a.smote_neighbors == 0 {
            return bad("smote_neighbors must be >= 1".into());
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch under step decay.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }
}
