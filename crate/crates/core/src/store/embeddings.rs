use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{atomic, io_err, Result, SegmentKey, StoreError};

pub const MAGIC: [u8; 4] = *b"PRBF";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: u64 = 4 + 2 + 4 + 4;

/// Per-segment feature vectors plus the row → segment mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    matrix: Array2<f32>,
    index: Vec<SegmentKey>,
    extractor_tag: String,
    rows_by_key: HashMap<SegmentKey, usize>,
}

impl EmbeddingStore {
    pub fn new(matrix: Array2<f32>, index: Vec<SegmentKey>, extractor_tag: impl Into<String>) -> Result<Self> {
        if index.len() != matrix.nrows() {
            return Err(StoreError::IndexMismatch {
                index_rows: index.len(),
                payload_rows: matrix.nrows(),
            });
        }
        check_finite(&matrix)?;
        let mut rows_by_key = HashMap::with_capacity(index.len());
        for (i, k) in index.iter().enumerate() {
            if rows_by_key.insert(k.clone(), i).is_some() {
                return Err(StoreError::DuplicateKey(k.clone()));
            }
        }
        Ok(Self {
            matrix: matrix.as_standard_layout().into_owned(),
            index,
            extractor_tag: extractor_tag.into(),
            rows_by_key,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f32> {
        &self.matrix
    }

    pub fn index(&self) -> &[SegmentKey] {
        &self.index
    }

    pub fn extractor_tag(&self) -> &str {
        &self.extractor_tag
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.matrix.row(i)
    }

    /// Row widened to 64-bit.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.matrix.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn row_of(&self, key: &SegmentKey) -> Option<usize> {
        self.rows_by_key.get(key).copied()
    }
}

fn check_finite(matrix: &Array2<f32>) -> Result<()> {
    for ((row, col), v) in matrix.indexed_iter() {
        if !v.is_finite() {
            return Err(StoreError::NonFinite { row, col });
        }
    }
    Ok(())
}

/// `embeddings.prbf` → `embeddings.index.json`.
pub fn index_path_for(path: &Path) -> PathBuf {
    path.with_extension("index.json")
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexFile {
    extractor_tag: String,
    dim: usize,
    rows: Vec<IndexRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    image_id: String,
    segment_index: u32,
}

fn encode_payload(store: &EmbeddingStore) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN as usize + store.matrix.len() * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(store.rows() as u32).to_le_bytes());
    for v in store.matrix.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Writes the binary payload and its JSON sidecar, each atomically.
pub fn write_embeddings(store: &EmbeddingStore, path: &Path) -> Result<()> {
    write_embeddings_with(store, path, |_| Ok(()))
}

/// [`write_embeddings`] with a hook that runs after the payload temp file is
/// flushed and before it is renamed into place.
pub fn write_embeddings_with(
    store: &EmbeddingStore,
    path: &Path,
    before_rename: impl FnOnce(&Path) -> io::Result<()>,
) -> Result<()> {
    check_finite(&store.matrix)?;
    let index = IndexFile {
        extractor_tag: store.extractor_tag.clone(),
        dim: store.dim(),
        rows: store
            .index
            .iter()
            .map(|k| IndexRow {
                image_id: k.image_id.clone(),
                segment_index: k.segment_index,
            })
            .collect(),
    };
    let index_path = index_path_for(path);
    let json = serde_json::to_vec_pretty(&index).expect("index serializes");
    atomic::write_atomic(&index_path, &json).map_err(io_err(&index_path))?;
    atomic::write_atomic_with(path, &encode_payload(store), before_rename).map_err(io_err(path))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let actual = bytes.len() as u64;
    if actual < HEADER_LEN {
        if actual >= 4 && bytes[..4] != MAGIC {
            return Err(StoreError::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(StoreError::Truncated {
            expected: HEADER_LEN,
            actual,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(StoreError::BadMagic { found: magic });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let rows = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + (dim as u64) * (rows as u64) * 4;
    if actual < expected {
        return Err(StoreError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(StoreError::TrailingBytes { expected, actual });
    }

    let values: Vec<f32> = bytes[HEADER_LEN as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let matrix = Array2::from_shape_vec((rows, dim), values).expect("length checked above");

    let index_path = index_path_for(path);
    let text = std::fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
    let index: IndexFile = serde_json::from_str(&text).map_err(|source| StoreError::Json {
        path: index_path.clone(),
        line: source.line(),
        source,
    })?;
    if index.rows.len() != rows {
        return Err(StoreError::IndexMismatch {
            index_rows: index.rows.len(),
            payload_rows: rows,
        });
    }
    if index.dim != dim {
        return Err(StoreError::DimMismatch {
            index_dim: index.dim,
            payload_dim: dim,
        });
    }
    let keys = index
        .rows
        .into_iter()
        .map(|r| SegmentKey::new(r.image_id, r.segment_index))
        .collect();
    EmbeddingStore::new(matrix, keys, index.extractor_tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small() -> EmbeddingStore {
        EmbeddingStore::new(
            array![[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]],
            vec![SegmentKey::new("a", 0), SegmentKey::new("a", 1)],
            "resnet50",
        )
        .unwrap()
    }

    #[test]
    fn payload_is_header_plus_24_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.prbf");
        write_embeddings(&small(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len() as u64, HEADER_LEN + 24);
        assert_eq!(&bytes[..4], b"PRBF");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[3, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[2, 0, 0, 0]);
        assert_eq!(&bytes[14..18], &1.0f32.to_le_bytes());
        assert!(index_path_for(&path).ends_with("embeddings.index.json"));
        assert_eq!(read_embeddings(&path).unwrap(), small());
    }

    #[test]
    fn nan_is_refused_and_nothing_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.prbf");
        assert!(matches!(
            EmbeddingStore::new(array![[f32::NAN]], vec![SegmentKey::new("a", 0)], "x"),
            Err(StoreError::NonFinite { row: 0, col: 0 })
        ));
        // bypass the constructor to exercise the writer's own check
        let mut s = small();
        s.matrix[[1, 2]] = f32::INFINITY;
        assert!(matches!(write_embeddings(&s, &path), Err(StoreError::NonFinite { row: 1, col: 2 })));
        assert!(!path.exists());
        assert!(!index_path_for(&path).exists());
    }

    #[test]
    fn truncation_names_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.prbf");
        write_embeddings(&small(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        match read_embeddings(&path) {
            Err(StoreError::Truncated { expected, actual }) => {
                assert_eq!(expected, HEADER_LEN + 24);
                assert_eq!(actual, HEADER_LEN + 23);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&path, &extra).unwrap();
        assert!(matches!(read_embeddings(&path), Err(StoreError::TrailingBytes { .. })));
    }

    #[test]
    fn header_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.prbf");
        write_embeddings(&small(), &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_embeddings(&path), Err(StoreError::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 2;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(StoreError::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn index_listing_too_many_rows_is_a_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.prbf");
        let store = EmbeddingStore::new(
            Array2::zeros((4, 2)),
            (0..4).map(|i| SegmentKey::new("img", i)).collect(),
            "vgg16",
        )
        .unwrap();
        write_embeddings(&store, &path).unwrap();
        let index_path = index_path_for(&path);
        let mut idx: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&index_path).unwrap()).unwrap();
        idx["rows"]
            .as_array_mut()
            .unwrap()
            .push(serde_json::json!({"image_id": "img", "segment_index": 4}));
        std::fs::write(&index_path, idx.to_string()).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(StoreError::IndexMismatch { index_rows: 5, payload_rows: 4 })
        ));
    }

    #[test]
    fn crash_before_rename_keeps_previous_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.prbf");
        write_embeddings(&small(), &path).unwrap();
        let before = std::fs::read(&path).unwrap();

        let other = EmbeddingStore::new(
            array![[9.0f32, 9.0, 9.0], [8.0, 8.0, 8.0]],
            vec![SegmentKey::new("a", 0), SegmentKey::new("a", 1)],
            "resnet50",
        )
        .unwrap();
        let res = write_embeddings_with(&other, &path, |tmp| {
            assert!(tmp.exists());
            Err(io::Error::other("injected crash"))
        });
        assert!(res.is_err());
        assert_eq!(std::fs::read(&path).unwrap(), before);
        assert_eq!(read_embeddings(&path).unwrap(), small());
    }
}
