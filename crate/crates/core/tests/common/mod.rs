#![allow(dead_code)]

use std::collections::HashMap;

use ndarray::Array2;
use protorbf_core::store::{CurationState, Decision, ImageRecord, Split};
use protorbf_core::{DatasetManifest, EmbeddingStore, SegmentKey};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Two Gaussian blobs in `dim` dimensions whose centers sit `separation`
/// blob radii apart. The blob radius is the RMS distance of a point from its
/// center, so each coordinate has std `1/sqrt(dim)`.
pub struct Blobs {
    pub store: EmbeddingStore,
    pub manifest: DatasetManifest,
    pub classes: HashMap<SegmentKey, usize>,
}

pub fn blobs(dim: usize, train_per_class: usize, test_per_class: usize, separation: f64, seed: u64) -> Blobs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).unwrap();
    let mut center1 = vec![0.0; dim];
    center1[0] = separation;
    let centers = [vec![0.0; dim], center1];

    let mut rows = Vec::new();
    let mut keys = Vec::new();
    let mut images = Vec::new();
    for (split, per_class) in [(Split::Train, train_per_class), (Split::Test, test_per_class)] {
        for i in 0..per_class {
            for (c, center) in centers.iter().enumerate() {
                let id = format!("{}{c}_{i}", if split == Split::Train { "tr" } else { "te" });
                rows.extend(center.iter().map(|m| (m + noise.sample(&mut rng)) as f32));
                keys.push(SegmentKey::new(id.clone(), 0));
                images.push(ImageRecord {
                    image_id: id.clone(),
                    path: format!("{id}.png").into(),
                    class_index: c,
                    split,
                });
            }
        }
    }
    let n = keys.len();
    let store = EmbeddingStore::new(Array2::from_shape_vec((n, dim), rows).unwrap(), keys, "blobs").unwrap();
    let classes = images
        .iter()
        .map(|r| (SegmentKey::new(r.image_id.clone(), 0), r.class_index))
        .collect();
    let manifest = DatasetManifest::new("blobs", vec!["zero".into(), "one".into()], images).unwrap();
    Blobs {
        store,
        manifest,
        classes,
    }
}

/// Accepts every segment belonging to a `train` image.
pub fn accept_train(b: &Blobs) -> CurationState {
    let mut state = CurationState::new(b.manifest.classes.len());
    for r in b.manifest.split(Split::Train) {
        state = state.record(&SegmentKey::new(r.image_id.clone(), 0), Decision::Accepted, r.class_index);
    }
    state
}
