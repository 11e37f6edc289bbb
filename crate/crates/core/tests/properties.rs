use std::collections::{HashMap, VecDeque};

use ndarray::Array2;
use proptest::prelude::*;
use protorbf_core::clustering::{kmedoids, medoid_cost, silhouette_samples};
use protorbf_core::rbf::{softmax, RbfFeatures};
use protorbf_core::segmentation::{slic_segment, Image, LabelMap, SlicParams};
use protorbf_core::store::{read_embeddings, write_embeddings, CurationState, Decision, EmbeddingStore};
use protorbf_core::SegmentKey;

fn connected(labels: &LabelMap) -> bool {
    let (w, h) = (labels.width(), labels.height());
    let mut seen = vec![false; w * h];
    let mut starts = vec![0usize; labels.region_count()];
    for (i, &l) in labels.labels().iter().enumerate().rev() {
        starts[l as usize] = i;
    }
    for (l, &start) in starts.iter().enumerate() {
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 0;
        while let Some(i) = queue.pop_front() {
            count += 1;
            let (x, y) = (i % w, i / w);
            let mut push = |nx: usize, ny: usize| {
                let j = ny * w + nx;
                if !seen[j] && labels.labels()[j] as usize == l {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                push(x - 1, y);
            }
            if x + 1 < w {
                push(x + 1, y);
            }
            if y > 0 {
                push(x, y - 1);
            }
            if y + 1 < h {
                push(x, y + 1);
            }
        }
        if count != labels.region_sizes()[l] {
            return false;
        }
    }
    true
}

fn image_strategy() -> impl Strategy<Value = Image> {
    (2usize..24, 2usize..24).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f32..=1.0, w * h * 3).prop_map(move |data| Image::new(w, h, data).unwrap())
    })
}

fn points(max_n: usize, dim: usize) -> impl Strategy<Value = Array2<f64>> {
    (2..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-10.0f64..10.0, n * dim).prop_map(move |v| Array2::from_shape_vec((n, dim), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slic_partitions_into_connected_regions(img in image_strategy(), n in 1usize..10, m in 1.0f64..200.0) {
        let params = SlicParams { n_segments: n, compactness: m, ..SlicParams::default() };
        let labels = slic_segment(&img, &params).unwrap();
        prop_assert_eq!(labels.labels().len(), img.width() * img.height());
        prop_assert_eq!(labels.region_sizes().iter().sum::<usize>(), img.width() * img.height());
        prop_assert!(labels.region_sizes().iter().all(|&s| s > 0));
        prop_assert!(connected(&labels));
        prop_assert_eq!(slic_segment(&img, &params).unwrap(), labels);
    }

    #[test]
    fn softmax_normalised_and_shift_invariant(logits in prop::collection::vec(-50.0f64..50.0, 1..8), shift in -500.0f64..500.0) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn activations_bounded_and_monotone(c in prop::collection::vec(-5.0f64..5.0, 3), dir in prop::collection::vec(-1.0f64..1.0, 3), sigma in 0.05f64..5.0) {
        let f = RbfFeatures::new(Array2::from_shape_vec((1, 3), c.clone()).unwrap(), sigma).unwrap();
        prop_assert_eq!(f.activations(&c).unwrap()[0], 1.0);
        let mut last = 1.0;
        for step in 1..20 {
            let z: Vec<f64> = c.iter().zip(&dir).map(|(c, d)| c + d * step as f64 * 0.3).collect();
            let phi = f.activations(&z).unwrap()[0];
            prop_assert!(phi > 0.0 && phi <= 1.0);
            prop_assert!(phi <= last);
            last = phi;
        }
    }

    #[test]
    fn pam_is_a_local_optimum_made_of_input_rows(pts in points(12, 2), k in 1usize..4) {
        prop_assume!(k <= pts.nrows());
        let res = kmedoids(pts.view(), k).unwrap();
        prop_assert!((medoid_cost(pts.view(), &res.medoid_rows) - res.total_cost).abs() < 1e-9);
        for m in 0..k {
            for cand in 0..pts.nrows() {
                if res.medoid_rows.contains(&cand) { continue; }
                let mut swapped = res.medoid_rows.clone();
                swapped[m] = cand;
                prop_assert!(medoid_cost(pts.view(), &swapped) >= res.total_cost - 1e-9);
            }
        }
    }

    #[test]
    fn silhouette_matches_naive(pts in points(14, 3), labels_seed in prop::collection::vec(0usize..3, 14)) {
        let n = pts.nrows();
        let assignment: Vec<usize> = labels_seed[..n].to_vec();
        let mut distinct = assignment.clone();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assume!(distinct.len() >= 2);
        let fast = silhouette_samples(pts.view(), &assignment).unwrap();
        let d = |i: usize, j: usize| -> f64 {
            pts.row(i).iter().zip(pts.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        for i in 0..n {
            let own: Vec<usize> = (0..n).filter(|&j| j != i && assignment[j] == assignment[i]).collect();
            let expected = if own.is_empty() {
                0.0
            } else {
                let a = own.iter().map(|&j| d(i, j)).sum::<f64>() / own.len() as f64;
                let b = distinct
                    .iter()
                    .filter(|&&c| c != assignment[i])
                    .map(|&c| {
                        let members: Vec<usize> = (0..n).filter(|&j| assignment[j] == c).collect();
                        members.iter().map(|&j| d(i, j)).sum::<f64>() / members.len() as f64
                    })
                    .fold(f64::INFINITY, f64::min);
                if a.max(b) == 0.0 { 0.0 } else { (b - a) / a.max(b) }
            };
            prop_assert!((fast[i] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn curation_replay_matches_incremental(ops in prop::collection::vec((0u32..6, 0u8..3), 0..40)) {
        let classes: HashMap<SegmentKey, usize> = (0..6).map(|i| (SegmentKey::new("img", i), (i % 2) as usize)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curation.jsonl");
        let mut log = protorbf_core::store::CurationLog::open(&path, classes.clone(), 2).unwrap();
        let mut state = CurationState::new(2);
        for (seg, d) in ops {
            let decision = [Decision::Accepted, Decision::Rejected, Decision::Undecided][d as usize];
            let key = SegmentKey::new("img", seg);
            state = state.record(&key, decision, classes[&key]);
            log.record(&key, decision).unwrap();
        }
        prop_assert_eq!(log.state(), &state);
        let reopened = protorbf_core::store::CurationLog::open(&path, classes, 2).unwrap();
        prop_assert_eq!(reopened.state(), &state);
        let accepted: usize = state.accepted_per_class().iter().sum();
        prop_assert_eq!(accepted, state.accepted().count());
    }

    #[test]
    fn embedding_files_round_trip(rows in 1usize..12, dim in 1usize..9, seed in prop::collection::vec(-1e6f32..1e6, 96)) {
        let data: Vec<f32> = (0..rows * dim).map(|i| seed[i % seed.len()] * (i as f32 + 1.0).recip()).collect();
        let keys = (0..rows).map(|i| SegmentKey::new(format!("im{}", i / 4), (i % 4) as u32)).collect();
        let store = EmbeddingStore::new(Array2::from_shape_vec((rows, dim), data).unwrap(), keys, "prop").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.prbf");
        write_embeddings(&store, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        prop_assert_eq!(back.index(), store.index());
        prop_assert!(back.matrix().iter().zip(store.matrix()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn segment_keys_round_trip(id in "[A-Za-z0-9_:.-]{1,12}", k in any::<u32>()) {
        let key = SegmentKey::new(id, k);
        prop_assert_eq!(key.to_string().parse::<SegmentKey>().unwrap(), key);
    }
}

/// Pixels whose region disagrees with the initial grid cell that most of
/// the region covers.
fn grid_deviation(labels: &LabelMap, cell: impl Fn(usize, usize) -> usize, cells: usize) -> usize {
    let mut votes = vec![vec![0usize; cells]; labels.region_count()];
    for y in 0..labels.height() {
        for x in 0..labels.width() {
            votes[labels.get(x, y) as usize][cell(x, y)] += 1;
        }
    }
    votes.iter().map(|v| v.iter().sum::<usize>() - v.iter().max().unwrap()).sum()
}

#[test]
fn higher_compactness_never_moves_away_from_grid() {
    // colour edges at 6 while the 2x2 grid splits at 10
    for split in [10usize, 6] {
        let img = Image::from_fn(20, 20, |x, y| match (x < split, y < split) {
            (true, true) => [1.0, 0.0, 0.0],
            (false, true) => [0.0, 1.0, 0.0],
            (true, false) => [0.0, 0.0, 1.0],
            (false, false) => [1.0, 1.0, 0.0],
        });
        let mut last = usize::MAX;
        for m in [1.0, 10.0, 100.0, 1000.0, 10000.0] {
            let params = SlicParams { n_segments: 4, compactness: m, smoothing_sigma: 0.0, ..SlicParams::default() };
            let labels = slic_segment(&img, &params).unwrap();
            let dev = grid_deviation(&labels, |x, y| usize::from(x >= 10) + 2 * usize::from(y >= 10), 4);
            eprintln!("split {split} m {m}: deviation {dev}");
            assert!(dev <= last, "split {split}, compactness {m}: {dev} > {last}");
            last = dev;
        }
        assert_eq!(last, 0);
    }
}

#[test]
fn image_probabilities_ignore_segment_order() {
    use protorbf_core::clustering::{Prototype, PrototypeSet};
    use protorbf_core::RbfModel;
    let set = PrototypeSet {
        classes: vec!["a".into(), "b".into(), "c".into()],
        k_per_class: 1,
        seed: 0,
        extractor_tag: "t".into(),
        sigma_default: 1.0,
        prototypes: (0..3)
            .map(|c| Prototype {
                class_index: c,
                source_segment: SegmentKey::new("p", c as u32),
                vector: vec![c as f32, (c * c) as f32],
            })
            .collect(),
        silhouette: None,
    };
    let w = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 2.0 } else { -0.5 });
    let model = RbfModel::new(set, 1.3, w, ndarray::Array1::from(vec![0.1, 0.0, -0.1])).unwrap();
    let segs = vec![vec![0.1, 0.2], vec![1.5, 0.7], vec![2.2, 3.9], vec![-1.0, 0.0]];
    let base = model.predict_image(&segs).unwrap().probabilities;
    let mut rev = segs.clone();
    rev.reverse();
    let other = model.predict_image(&rev).unwrap().probabilities;
    for (a, b) in base.iter().zip(other) {
        assert!((a - b).abs() < 1e-15);
    }
}
