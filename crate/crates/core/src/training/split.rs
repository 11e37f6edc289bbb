use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, TrainingError};
use crate::store::{DatasetManifest, Split};

/// Splits `(image_id, class_index)` pairs into train and validation ids.
///
/// Each class contributes `round(n · val_fraction)` validation images,
/// at least 1 and at most `n − 1`. Output ids keep input order.
pub fn stratified_split(items: &[(String, usize)], val_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(TrainingError::InvalidArgument(format!("val_fraction must lie in (0, 1), got {val_fraction}")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (_, c)) in items.iter().enumerate() {
        by_class.entry(*c).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; items.len()];
    for (&class, members) in &by_class {
        let n = members.len();
        if n < 2 {
            return Err(TrainingError::TooFewImages { class, count: n });
        }
        let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        for &i in &shuffled[..n_val] {
            is_val[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for ((id, _), v) in items.iter().zip(is_val) {
        if v { &mut val } else { &mut train }.push(id.clone());
    }
    Ok((train, val))
}

/// [`stratified_split`] over the manifest's `train` images.
pub fn stratified_split_manifest(manifest: &DatasetManifest, val_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let items: Vec<(String, usize)> = manifest
        .split(Split::Train)
        .map(|r| (r.image_id.clone(), r.class_index))
        .collect();
    stratified_split(&items, val_fraction, seed)
}
