use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::loss::example_loss;
use super::{
    adam_step, augment_mixup, augment_noise, evaluate, head_gradients_from_activations, smote_oversample,
    stratified_split_manifest, AdamState, HeadParams, LossConfig, Metrics, NoiseMode, Result, TrainConfig,
    TrainingError,
};
use crate::argmax;
use crate::clustering::PrototypeSet;
use crate::rbf::{average_probabilities, head_logits, softmax, trace_segment, RbfError, RbfFeatures, RbfModel};
use crate::store::{DatasetManifest, EmbeddingStore};

/// One labelled image and the store rows of its segments, in segment order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageExamples {
    pub image_id: String,
    pub class_index: usize,
    pub rows: Vec<usize>,
}

/// Collects the store rows of each `(image_id, class_index)`.
pub fn group_images(store: &EmbeddingStore, images: &[(String, usize)]) -> Result<Vec<ImageExamples>> {
    let mut by_image: BTreeMap<&str, Vec<(u32, usize)>> = BTreeMap::new();
    for (row, key) in store.index().iter().enumerate() {
        by_image.entry(key.image_id.as_str()).or_default().push((key.segment_index, row));
    }
    images
        .iter()
        .map(|(id, class)| {
            let mut segs = by_image
                .get(id.as_str())
                .cloned()
                .ok_or_else(|| TrainingError::MissingImage(id.clone()))?;
            segs.sort_unstable();
            Ok(ImageExamples {
                image_id: id.clone(),
                class_index: *class,
                rows: segs.into_iter().map(|(_, r)| r).collect(),
            })
        })
        .collect()
}

/// Embeddings plus the train/validation partition over images.
#[derive(Debug, Clone)]
pub struct TrainingData<'a> {
    pub store: &'a EmbeddingStore,
    pub train: Vec<ImageExamples>,
    pub val: Vec<ImageExamples>,
}

impl<'a> TrainingData<'a> {
    /// Stratified split of the manifest's `train` images.
    pub fn from_manifest(store: &'a EmbeddingStore, manifest: &DatasetManifest, val_fraction: f64, seed: u64) -> Result<Self> {
        let (train_ids, val_ids) = stratified_split_manifest(manifest, val_fraction, seed)?;
        let labelled = |ids: Vec<String>| -> Vec<(String, usize)> {
            ids.into_iter()
                .map(|id| {
                    let c = manifest.image(&id).expect("split ids come from the manifest").class_index;
                    (id, c)
                })
                .collect()
        };
        Ok(Self {
            store,
            train: group_images(store, &labelled(train_ids))?,
            val: group_images(store, &labelled(val_ids))?,
        })
    }
}

/// `α_c = N / (C · N_c)` from per-class example counts.
pub fn inverse_frequency_alpha(counts: &[usize]) -> Vec<f64> {
    let n: usize = counts.iter().sum();
    let c = counts.len() as f64;
    counts.iter().map(|&nc| n as f64 / (c * nc as f64)).collect()
}

/// Stops once `patience` consecutive epochs fail to improve the best loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
        }
    }

    /// Records the loss of `epoch` and returns whether it is the new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean total loss over the (possibly augmented) training examples.
    pub train_loss: f64,
    /// Image-level accuracy on the unaugmented training split.
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// How much augmentation touched each phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationStats {
    pub noised_examples: u64,
    pub mixed_examples: u64,
    pub smote_synthetic: Vec<usize>,
    /// Augmented examples seen while computing validation numbers. Always 0
    /// unless the pipeline is miswired.
    pub val_augmented_examples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub sigma: f64,
    pub alpha: Vec<f64>,
    pub train_images: usize,
    pub val_images: usize,
    pub augmentation: AugmentationStats,
    /// Validation metrics of the returned model.
    pub final_metrics: Metrics,
}

#[derive(Debug, Clone)]
struct Example {
    z: Vec<f64>,
    /// Cached activations for unmodified store rows.
    phi: Option<Vec<f64>>,
    y: Vec<f64>,
    augmented: bool,
}

fn one_hot(class: usize, classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    y[class] = 1.0;
    y
}

/// One unaugmented example per segment, labelled with its image's class.
fn segment_examples(phi: &[Vec<f64>], images: &[ImageExamples], classes: usize) -> Vec<Example> {
    images
        .iter()
        .flat_map(|img| {
            img.rows.iter().map(move |&r| Example {
                z: Vec::new(),
                phi: Some(phi[r].clone()),
                y: one_hot(img.class_index, classes),
                augmented: false,
            })
        })
        .collect()
}

/// Mean total loss over cached-activation examples. Returns the loss and
/// how many of the examples were augmented.
fn examples_loss<A: Copy + Into<f64>>(
    examples: &[Example],
    weights: ArrayView2<'_, A>,
    bias: ArrayView1<'_, A>,
    cfg: &LossConfig,
) -> (f64, u64) {
    let mut sum = 0.0;
    let mut augmented = 0;
    for ex in examples {
        augmented += u64::from(ex.augmented);
        let phi = ex.phi.as_ref().expect("evaluation examples carry activations");
        let p = softmax(&head_logits(weights, bias, phi));
        sum += example_loss(&p, &ex.y, cfg);
    }
    (sum / examples.len() as f64, augmented)
}

fn image_accuracy(
    features: &RbfFeatures,
    store: &EmbeddingStore,
    weights: ArrayView2<'_, f32>,
    bias: ArrayView1<'_, f32>,
    images: &[ImageExamples],
) -> Result<f64> {
    let mut correct = 0usize;
    for img in images {
        let traces = img
            .rows
            .iter()
            .map(|&r| trace_segment(features, weights, bias, &store.row_f64(r)))
            .collect::<Result<Vec<_>, RbfError>>()?;
        if argmax(&average_probabilities(&traces)) == Some(img.class_index) {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len() as f64)
}

/// Mean per-segment total loss of a model over labelled images.
pub fn dataset_loss(model: &RbfModel, store: &EmbeddingStore, images: &[ImageExamples], cfg: &LossConfig) -> Result<f64> {
    if images.iter().all(|i| i.rows.is_empty()) {
        return Err(TrainingError::EmptySplit { split: "evaluation" });
    }
    let phi = activation_table(model.features(), store, images)?;
    let examples = segment_examples(&phi, images, model.classes().len());
    Ok(examples_loss(&examples, model.weights().view(), model.bias().view(), cfg).0)
}

/// Activations for every store row referenced by `images`; other rows stay empty.
fn activation_table(features: &RbfFeatures, store: &EmbeddingStore, images: &[ImageExamples]) -> Result<Vec<Vec<f64>>> {
    let mut table = vec![Vec::new(); store.rows()];
    for img in images {
        for &r in &img.rows {
            if table[r].is_empty() {
                table[r] = features.activations(&store.row_f64(r))?;
            }
        }
    }
    Ok(table)
}

fn to_f32(head: &HeadParams) -> (Array2<f32>, Array1<f32>) {
    (head.weights.mapv(|v| v as f32), head.bias.mapv(|v| v as f32))
}

fn augment_batch(
    batch: &mut [Example],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    stats: &mut AugmentationStats,
) -> Result<()> {
    let a = &cfg.augmentation;
    for (mode, amplitude) in [(NoiseMode::Gaussian, a.gaussian_sigma), (NoiseMode::Simple, a.simple_amplitude)] {
        if amplitude > 0.0 {
            for ex in batch.iter_mut() {
                ex.z = augment_noise(&ex.z, mode, amplitude, rng)?;
                ex.phi = None;
                ex.augmented = true;
                stats.noised_examples += 1;
            }
        }
    }
    if a.mixup && batch.len() > 1 {
        let beta = Beta::new(a.mixup_beta, a.mixup_beta)
            .map_err(|e| TrainingError::InvalidConfig(format!("mixup beta: {e}")))?;
        let mut partners: Vec<usize> = (0..batch.len()).collect();
        partners.shuffle(rng);
        let source = batch.to_vec();
        for (ex, &j) in batch.iter_mut().zip(&partners) {
            let lambda: f64 = beta.sample(rng);
            let (z, y) = augment_mixup(&ex.z, &source[j].z, &ex.y, &source[j].y, lambda)?;
            *ex = Example {
                z,
                phi: None,
                y,
                augmented: true,
            };
            stats.mixed_examples += 1;
        }
    }
    Ok(())
}

/// Fits the dense head over frozen prototypes.
///
/// Deterministic: the same data, prototypes and config give a bit-identical
/// model and report.
pub fn train(data: &TrainingData<'_>, prototypes: &PrototypeSet, cfg: &TrainConfig) -> Result<(RbfModel, TrainReport)> {
    cfg.validate()?;
    let store = data.store;
    if store.dim() != prototypes.dim() {
        return Err(RbfError::DimensionMismatch {
            expected: prototypes.dim(),
            got: store.dim(),
        }
        .into());
    }
    let classes = prototypes.classes.len();
    if data.val.is_empty() {
        return Err(TrainingError::EmptySplit { split: "validation" });
    }
    for img in data.train.iter().chain(&data.val) {
        if img.class_index >= classes {
            return Err(TrainingError::InvalidArgument(format!(
                "image {} has class {} but only {classes} classes exist",
                img.image_id, img.class_index
            )));
        }
        if img.rows.is_empty() {
            return Err(TrainingError::MissingImage(img.image_id.clone()));
        }
    }
    let mut segment_counts = vec![0usize; classes];
    let mut image_counts = vec![0usize; classes];
    for img in &data.train {
        segment_counts[img.class_index] += img.rows.len();
        image_counts[img.class_index] += 1;
    }
    if let Some(c) = image_counts.iter().position(|&n| n == 0) {
        return Err(TrainingError::EmptyClass(prototypes.classes[c].clone()));
    }

    let sigma = cfg.sigma.unwrap_or(prototypes.sigma_default) as f32;
    let zero = RbfModel::zeroed(prototypes.clone(), sigma)?;
    let features = zero.features().clone();
    let alpha = match &cfg.alpha {
        Some(a) if a.len() != classes => {
            return Err(TrainingError::InvalidConfig(format!("alpha has {} entries for {classes} classes", a.len())))
        }
        Some(a) => a.clone(),
        None => inverse_frequency_alpha(&segment_counts),
    };
    let loss_cfg = LossConfig {
        ce_weight: cfg.ce_weight,
        focal_weight: cfg.focal_weight,
        gamma: cfg.gamma,
        alpha: alpha.clone(),
    };

    let phi_train = activation_table(&features, store, &data.train)?;
    let val_examples = segment_examples(&activation_table(&features, store, &data.val)?, &data.val, classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stats = AugmentationStats {
        smote_synthetic: vec![0; classes],
        ..AugmentationStats::default()
    };

    // Training units: one per image, plus one per SMOTE row.
    let mut units: Vec<Vec<Example>> = data
        .train
        .iter()
        .map(|img| {
            img.rows
                .iter()
                .map(|&r| Example {
                    z: store.row_f64(r),
                    phi: Some(phi_train[r].clone()),
                    y: one_hot(img.class_index, classes),
                    augmented: false,
                })
                .collect()
        })
        .collect();
    if cfg.augmentation.smote {
        let target = segment_counts.iter().copied().max().unwrap_or(0);
        for c in 0..classes {
            let rows: Vec<usize> = data
                .train
                .iter()
                .filter(|i| i.class_index == c)
                .flat_map(|i| i.rows.iter().copied())
                .collect();
            if rows.len() < 2 || rows.len() >= target {
                continue;
            }
            let minority = Array2::from_shape_fn((rows.len(), store.dim()), |(i, j)| store.row(rows[i])[j] as f64);
            let synthetic = smote_oversample(minority.view(), target - rows.len(), cfg.augmentation.smote_neighbors, &mut rng)?;
            stats.smote_synthetic[c] = synthetic.nrows();
            for z in synthetic.rows() {
                units.push(vec![Example {
                    z: z.to_vec(),
                    phi: None,
                    y: one_hot(c, classes),
                    augmented: true,
                }]);
            }
        }
    }

    let mut head = HeadParams::zeros(classes, features.len());
    let mut adam = AdamState::new(head.len());
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best: Option<(Array2<f32>, Array1<f32>)> = None;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..units.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch: Vec<Example> = chunk.iter().flat_map(|&u| units[u].iter().cloned()).collect();
            augment_batch(&mut batch, cfg, &mut rng, &mut stats)?;
            let n = batch.len();
            let mut phi = Array2::zeros((n, features.len()));
            let mut targets = Array2::zeros((n, classes));
            for (i, ex) in batch.iter().enumerate() {
                let a = match &ex.phi {
                    Some(p) => p.clone(),
                    None => features.activations(&ex.z)?,
                };
                phi.row_mut(i).assign(&Array1::from(a));
                targets.row_mut(i).assign(&Array1::from(ex.y.clone()));
            }
            let g = head_gradients_from_activations(phi.view(), targets.view(), &head, &loss_cfg)?;
            loss_sum += g.loss * n as f64;
            seen += n;
            let mut flat = head.flatten();
            adam_step(&mut flat, &g.flatten(), &mut adam, lr, cfg.beta1, cfg.beta2, cfg.epsilon);
            head.assign(&flat);
        }

        // Validation runs on the stored parameters, straight from the store.
        let (w, b) = to_f32(&head);
        let (val_loss, val_augmented) = examples_loss(&val_examples, w.view(), b.view(), &loss_cfg);
        stats.val_augmented_examples += val_augmented;
        let val_accuracy = image_accuracy(&features, store, w.view(), b.view(), &data.val)?;
        let train_accuracy = image_accuracy(&features, store, w.view(), b.view(), &data.train)?;
        epochs.push(EpochStats {
            epoch: epoch + 1,
            learning_rate: lr,
            train_loss: loss_sum / seen as f64,
            train_accuracy,
            val_loss,
            val_accuracy,
        });
        if stopper.observe(epoch + 1, val_loss) {
            best = Some((w, b));
        }
        if stopper.should_stop() {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    let (best_epoch, best_val_loss) = stopper.best().ok_or(TrainingError::Numerical {
        quantity: "validation loss",
        batch_size: data.val.len(),
        example: 0,
    })?;
    let (w, b) = best.expect("a best epoch implies a snapshot");
    let model = RbfModel::new(prototypes.clone(), sigma, w, b)?;
    let final_metrics = evaluate(&model, store, &data.val)?;
    let report = TrainReport {
        epochs,
        best_epoch,
        best_val_loss,
        stop_reason,
        sigma: sigma as f64,
        alpha,
        train_images: data.train.len(),
        val_images: data.val.len(),
        augmentation: stats,
        final_metrics,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_on_strictly_worsening_loss() {
        let mut s = EarlyStopping::new(10);
        let mut stopped_at = None;
        for epoch in 1..=50 {
            s.observe(epoch, epoch as f64);
            if s.should_stop() {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(11));
        assert_eq!(s.best(), Some((1, 1.0)));
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = EarlyStopping::new(2);
        assert!(s.observe(1, 1.0));
        assert!(!s.observe(2, 1.0));
        assert!(s.observe(3, 0.5));
        assert!(!s.should_stop());
        s.observe(4, 0.6);
        s.observe(5, f64::NAN);
        assert!(s.should_stop());
        assert_eq!(s.best(), Some((3, 0.5)));
    }

    #[test]
    fn inverse_frequency() {
        assert_eq!(inverse_frequency_alpha(&[30, 10]), vec![40.0 / 60.0, 2.0]);
        assert_eq!(inverse_frequency_alpha(&[5, 5]), vec![1.0, 1.0]);
    }
}
