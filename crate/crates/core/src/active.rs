//! Candidate ranking for the curation loop.

use std::collections::HashMap;

use serde::Serialize;

use crate::rbf::{RbfError, RbfModel};
use crate::store::{CurationState, Decision, EmbeddingStore, SegmentKey};

/// How candidate scores were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    /// Entropy of the model's predicted distribution.
    Entropy,
    /// Distance to the nearest accepted segment of the same class.
    NearestAccepted,
    /// Distance to the class mean embedding.
    ClassMeanDeviation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub segment_key: SegmentKey,
    pub class_index: usize,
    pub score: f64,
}

/// Undecided segments of one class, highest score first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassQueue {
    pub class_index: usize,
    pub acquisition: Acquisition,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateQueue {
    pub per_class: Vec<ClassQueue>,
}

impl CandidateQueue {
    pub fn class(&self, class_index: usize) -> Option<&ClassQueue> {
        self.per_class.get(class_index)
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(|q| q.candidates.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Ranks every undecided segment with an embedding, per class.
///
/// With a model the score is prediction entropy. Without one, a class with
/// accepted segments scores by distance to the nearest of them; a class with
/// none falls back to distance from the class mean embedding.
pub fn rank_candidates(
    state: &CurationState,
    model: Option<&RbfModel>,
    store: &EmbeddingStore,
    classes: &HashMap<SegmentKey, usize>,
    class_count: usize,
) -> Result<CandidateQueue, RbfError> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (row, key) in store.index().iter().enumerate() {
        if let Some(&c) = classes.get(key) {
            if c < class_count {
                members[c].push(row);
            }
        }
    }

    let mut per_class = Vec::with_capacity(class_count);
    for (c, rows) in members.iter().enumerate() {
        let accepted: Vec<Vec<f64>> = rows
            .iter()
            .filter(|&&r| state.decision(&store.index()[r]) == Decision::Accepted)
            .map(|&r| store.row_f64(r))
            .collect();
        let acquisition = match (model, accepted.is_empty()) {
            (Some(_), _) => Acquisition::Entropy,
            (None, false) => Acquisition::NearestAccepted,
            (None, true) => Acquisition::ClassMeanDeviation,
        };
        let mean = (acquisition == Acquisition::ClassMeanDeviation && !rows.is_empty()).then(|| {
            let mut m = vec![0.0; store.dim()];
            for &r in rows {
                for (a, v) in m.iter_mut().zip(store.row(r)) {
                    *a += *v as f64;
                }
            }
            m.iter_mut().for_each(|a| *a /= rows.len() as f64);
            m
        });

        let mut candidates = Vec::new();
        for &r in rows {
            let key = &store.index()[r];
            if state.decision(key) != Decision::Undecided {
                continue;
            }
            let z = store.row_f64(r);
            let score = match acquisition {
                Acquisition::Entropy => entropy(&model.expect("entropy needs a model").forward(&z)?),
                Acquisition::NearestAccepted => accepted.iter().map(|a| distance(&z, a)).fold(f64::INFINITY, f64::min),
                Acquisition::ClassMeanDeviation => distance(&z, mean.as_ref().expect("class has rows")),
            };
            candidates.push(Candidate {
                segment_key: key.clone(),
                class_index: c,
                score,
            });
        }
        candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.segment_key.cmp(&b.segment_key)));
        per_class.push(ClassQueue {
            class_index: c,
            acquisition,
            candidates,
        });
    }
    Ok(CandidateQueue { per_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{Prototype, PrototypeSet};
    use ndarray::{array, Array1, Array2};

    fn fixture() -> (EmbeddingStore, HashMap<SegmentKey, usize>) {
        let keys: Vec<SegmentKey> = (0..4).map(|i| SegmentKey::new("img", i)).collect();
        let store = EmbeddingStore::new(array![[0.0, 0.0], [1.0, 0.0], [5.0, 0.0], [0.0, 0.0]], keys.clone(), "t").unwrap();
        let classes = keys.iter().map(|k| (k.clone(), 0)).collect();
        (store, classes)
    }

    #[test]
    fn cold_start_orders_by_mean_deviation() {
        let (store, classes) = fixture();
        let q = rank_candidates(&CurationState::new(1), None, &store, &classes, 1).unwrap();
        let c = &q.per_class[0];
        assert_eq!(c.acquisition, Acquisition::ClassMeanDeviation);
        // mean is (1.5, 0); the two zero rows tie and fall back to key order
        let order: Vec<u32> = c.candidates.iter().map(|c| c.segment_key.segment_index).collect();
        assert_eq!(order, vec![2, 0, 3, 1]);
        assert!((c.candidates[0].score - 3.5).abs() < 1e-12);
    }

    #[test]
    fn nearest_accepted_distance() {
        let (store, classes) = fixture();
        let state = CurationState::new(1).record(&SegmentKey::new("img", 1), Decision::Accepted, 0);
        let q = rank_candidates(&state, None, &store, &classes, 1).unwrap();
        let c = &q.per_class[0];
        assert_eq!(c.acquisition, Acquisition::NearestAccepted);
        assert_eq!(c.candidates.len(), 3);
        assert_eq!(c.candidates[0].segment_key, SegmentKey::new("img", 2));
        assert_eq!(c.candidates[0].score, 4.0);
    }

    #[test]
    fn uniform_prediction_ranks_first_with_ln_c() {
        let (store, classes) = fixture();
        let set = PrototypeSet {
            classes: vec!["a".into(), "b".into()],
            k_per_class: 1,
            seed: 0,
            extractor_tag: "t".into(),
            sigma_default: 1.0,
            prototypes: vec![
                Prototype {
                    class_index: 0,
                    source_segment: SegmentKey::new("p", 0),
                    vector: vec![0.0, 0.0],
                },
                Prototype {
                    class_index: 1,
                    source_segment: SegmentKey::new("p", 1),
                    vector: vec![5.0, 0.0],
                },
            ],
            silhouette: None,
        };
        let model = RbfModel::new(set, 1.0, array![[4.0, -4.0], [-4.0, 4.0]], Array1::zeros(2)).unwrap();
        let mid_keys = vec![SegmentKey::new("m", 0), SegmentKey::new("m", 1)];
        let store2 = EmbeddingStore::new(Array2::from(vec![[2.5f32, 0.0], [0.0, 0.0]]), mid_keys.clone(), "t").unwrap();
        let classes2: HashMap<_, _> = mid_keys.iter().map(|k| (k.clone(), 0)).collect();
        let q = rank_candidates(&CurationState::new(2), Some(&model), &store2, &classes2, 2).unwrap();
        let first = &q.per_class[0].candidates[0];
        assert_eq!(first.segment_key, SegmentKey::new("m", 0));
        assert!((first.score - std::f64::consts::LN_2).abs() < 1e-12);
        let _ = (store, classes);
    }

    #[test]
    fn all_decided_gives_empty_queue() {
        let (store, classes) = fixture();
        let mut state = CurationState::new(1);
        for i in 0..4 {
            state = state.record(&SegmentKey::new("img", i), Decision::Rejected, 0);
        }
        let q = rank_candidates(&state, None, &store, &classes, 1).unwrap();
        assert!(q.is_empty());
    }
}
