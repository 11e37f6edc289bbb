use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{kmedoids, silhouette, ClusteringError, Result, Shortfall};
use crate::rbf::default_sigma;
use crate::store::{atomic, CurationState, EmbeddingStore, SegmentKey, StoreError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub class_index: usize,
    pub source_segment: SegmentKey,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteReport {
    /// All accepted segments, clustered by their class-local medoid.
    pub pooled: Option<f64>,
    /// Within each class's own K-Medoids partition; `None` when k = 1 or
    /// every accepted segment is a medoid.
    pub per_class: Vec<Option<f64>>,
}

/// Class-tagged medoids; the contents of `prototypes.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub classes: Vec<String>,
    pub k_per_class: usize,
    pub seed: u64,
    pub extractor_tag: String,
    pub sigma_default: f64,
    pub prototypes: Vec<Prototype>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<SilhouetteReport>,
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, |p| p.vector.len())
    }

    pub fn for_class(&self, class_index: usize) -> impl Iterator<Item = &Prototype> {
        self.prototypes.iter().filter(move |p| p.class_index == class_index)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ClusteringError::InvalidPrototypes(m));
        if self.prototypes.is_empty() {
            return bad("no prototypes".into());
        }
        let dim = self.dim();
        if dim == 0 {
            return bad("zero-width prototype vectors".into());
        }
        let mut counts = vec![0usize; self.classes.len()];
        for (i, p) in self.prototypes.iter().enumerate() {
            if p.vector.len() != dim {
                return bad(format!("prototype {i} has dim {} but expected {dim}", p.vector.len()));
            }
            if let Some(col) = p.vector.iter().position(|v| !v.is_finite()) {
                return Err(ClusteringError::NonFinite { row: i, col });
            }
            match counts.get_mut(p.class_index) {
                Some(c) => *c += 1,
                None => return bad(format!("prototype {i} has unknown class {}", p.class_index)),
            }
        }
        if let Some((c, n)) = counts.iter().enumerate().find(|(_, &n)| n != self.k_per_class) {
            return bad(format!("class {c} has {n} prototypes, expected {}", self.k_per_class));
        }
        if !(self.sigma_default > 0.0 && self.sigma_default.is_finite()) {
            return bad(format!("sigma_default {} must be positive", self.sigma_default));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("prototype set serializes");
        atomic::write_atomic(path, &json).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let set: Self = serde_json::from_str(&text).map_err(|source| StoreError::Json {
            path: path.to_path_buf(),
            line: source.line(),
            source,
        })?;
        set.validate()?;
        Ok(set)
    }
}

fn gather(pool: &EmbeddingStore, rows: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), pool.dim()), |(i, j)| pool.matrix()[[rows[i], j]] as f64)
}

/// Runs K-Medoids independently per class over the accepted segments only.
///
/// Prototypes copy their medoid's embedding row verbatim and remember the
/// segment it came from. Within a class they are ordered by embedding row.
pub fn select_prototypes(
    pool: &EmbeddingStore,
    curation: &CurationState,
    segment_classes: &HashMap<SegmentKey, usize>,
    classes: &[String],
    k_per_class: usize,
    seed: u64,
) -> Result<PrototypeSet> {
    if k_per_class == 0 {
        return Err(ClusteringError::InvalidK { k: 0, n: 0 });
    }
    let mut rows_per_class: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for key in curation.accepted() {
        let class = *segment_classes
            .get(key)
            .ok_or_else(|| ClusteringError::UnknownSegment(key.clone()))?;
        let row = pool
            .row_of(key)
            .ok_or_else(|| ClusteringError::MissingEmbedding(key.clone()))?;
        rows_per_class
            .get_mut(class)
            .ok_or_else(|| ClusteringError::UnknownSegment(key.clone()))?
            .push(row);
    }
    rows_per_class.iter_mut().for_each(|r| r.sort_unstable());

    let shortfalls: Vec<Shortfall> = rows_per_class
        .iter()
        .enumerate()
        .filter(|(_, rows)| rows.len() < k_per_class)
        .map(|(c, rows)| Shortfall {
            class_index: c,
            class_name: classes[c].clone(),
            accepted: rows.len(),
            required: k_per_class,
        })
        .collect();
    if !shortfalls.is_empty() {
        return Err(ClusteringError::InsufficientPool(shortfalls));
    }

    let mut prototypes = Vec::with_capacity(k_per_class * classes.len());
    let mut per_class = Vec::with_capacity(classes.len());
    let mut pooled_rows = Vec::new();
    let mut pooled_assignment = Vec::new();
    for (class, rows) in rows_per_class.iter().enumerate() {
        let points = gather(pool, rows);
        let res = kmedoids(points.view(), k_per_class)?;

        // reorder medoids by embedding row; remap assignment ordinals
        let mut order: Vec<usize> = (0..k_per_class).collect();
        order.sort_by_key(|&m| rows[res.medoid_rows[m]]);
        let mut rank = vec![0; k_per_class];
        for (r, &m) in order.iter().enumerate() {
            rank[m] = r;
        }
        let base = prototypes.len();
        for &m in &order {
            let row = rows[res.medoid_rows[m]];
            prototypes.push(Prototype {
                class_index: class,
                source_segment: pool.index()[row].clone(),
                vector: pool.row(row).to_vec(),
            });
        }

        per_class.push(if k_per_class >= 2 && rows.len() > k_per_class {
            Some(silhouette(points.view(), &res.assignment)?)
        } else {
            None
        });
        pooled_rows.extend_from_slice(rows);
        pooled_assignment.extend(res.assignment.iter().map(|&a| base + rank[a]));
    }

    let pooled = if prototypes.len() >= 2 && pooled_rows.len() > prototypes.len() {
        Some(silhouette(gather(pool, &pooled_rows).view(), &pooled_assignment)?)
    } else {
        None
    };

    let vectors: Vec<&[f32]> = prototypes.iter().map(|p| p.vector.as_slice()).collect();
    let sigma_default = default_sigma(&vectors).map_err(|e| ClusteringError::DegenerateSpread(e.to_string()))?;

    let set = PrototypeSet {
        classes: classes.to_vec(),
        k_per_class,
        seed,
        extractor_tag: pool.extractor_tag().to_string(),
        sigma_default,
        prototypes,
        silhouette: Some(SilhouetteReport { pooled, per_class }),
    };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Decision;

    struct Fixture {
        pool: EmbeddingStore,
        classes: HashMap<SegmentKey, usize>,
    }

    /// `per_class` segments per class, one image each, class c centered at
    /// 10·c on every axis with a deterministic spread.
    fn fixture(per_class: usize, n_classes: usize, dim: usize) -> Fixture {
        let mut keys = Vec::new();
        let mut values = Vec::new();
        let mut classes = HashMap::new();
        for c in 0..n_classes {
            for i in 0..per_class {
                let key = SegmentKey::new(format!("c{c}_img{i}"), 0);
                classes.insert(key.clone(), c);
                keys.push(key);
                for d in 0..dim {
                    values.push(10.0 * c as f32 + ((i * 7 + d * 3) % 11) as f32 * 0.1);
                }
            }
        }
        let m = Array2::from_shape_vec((keys.len(), dim), values).unwrap();
        Fixture {
            pool: EmbeddingStore::new(m, keys, "test").unwrap(),
            classes,
        }
    }

    fn accept_all(f: &Fixture) -> CurationState {
        let mut s = CurationState::new(2);
        for k in f.pool.index() {
            s = s.record(k, Decision::Accepted, f.classes[k]);
        }
        s
    }

    fn names() -> Vec<String> {
        vec!["benign".into(), "malignant".into()]
    }

    #[test]
    fn fifteen_per_class_from_thirty_accepted() {
        let f = fixture(30, 2, 4);
        let set = select_prototypes(&f.pool, &accept_all(&f), &f.classes, &names(), 15, 7).unwrap();
        assert_eq!(set.len(), 30);
        assert_eq!(set.for_class(0).count(), 15);
        assert_eq!(set.for_class(1).count(), 15);
        // medoid property: every vector is a stored row, bit for bit
        for p in &set.prototypes {
            let row = f.pool.row_of(&p.source_segment).unwrap();
            assert_eq!(f.pool.row(row).to_vec(), p.vector);
            assert_eq!(f.classes[&p.source_segment], p.class_index);
        }
        assert!(set.sigma_default > 0.0);
        assert_eq!(set.seed, 7);
    }

    #[test]
    fn k_equal_to_pool_returns_pool() {
        let f = fixture(4, 2, 3);
        let set = select_prototypes(&f.pool, &accept_all(&f), &f.classes, &names(), 4, 0).unwrap();
        let mut got: Vec<_> = set.prototypes.iter().map(|p| p.source_segment.clone()).collect();
        got.sort();
        let mut want = f.pool.index().to_vec();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn rejected_medoid_drops_out() {
        let f = fixture(6, 2, 3);
        let state = accept_all(&f);
        let set = select_prototypes(&f.pool, &state, &f.classes, &names(), 2, 0).unwrap();
        let victim = set.prototypes[0].source_segment.clone();
        let state = state.record(&victim, Decision::Rejected, f.classes[&victim]);
        let again = select_prototypes(&f.pool, &state, &f.classes, &names(), 2, 0).unwrap();
        assert!(again.prototypes.iter().all(|p| p.source_segment != victim));
    }

    #[test]
    fn shortfall_names_class() {
        let f = fixture(5, 2, 2);
        let mut state = CurationState::new(2);
        for k in f.pool.index() {
            if f.classes[k] == 0 {
                state = state.record(k, Decision::Accepted, 0);
            }
        }
        match select_prototypes(&f.pool, &state, &f.classes, &names(), 3, 0) {
            Err(ClusteringError::InsufficientPool(s)) => {
                assert_eq!(s.len(), 1);
                assert_eq!(s[0].class_name, "malignant");
                assert_eq!((s[0].accepted, s[0].required), (0, 3));
                assert!(ClusteringError::InsufficientPool(s).to_string().contains("short by 3"));
            }
            other => panic!("expected shortfall, got {other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let f = fixture(6, 2, 3);
        let set = select_prototypes(&f.pool, &accept_all(&f), &f.classes, &names(), 3, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prototypes.json");
        set.write(&path).unwrap();
        assert_eq!(PrototypeSet::read(&path).unwrap(), set);
    }
}
