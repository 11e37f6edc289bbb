//! On-disk dataset model: manifests, segment index, curation log and the
//! binary embedding interchange format.

pub mod atomic;
pub mod curation;
mod embeddings;
mod manifest;
mod segments;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use curation::{CurationEvent, CurationLog, CurationState, Decision};
pub use embeddings::{
    index_path_for, read_embeddings, write_embeddings, write_embeddings_with, EmbeddingStore, FORMAT_VERSION, MAGIC,
};
pub use manifest::{DatasetManifest, ImageRecord, Split};
pub use segments::{SegmentIndex, SegmentRecord};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("bad magic {found:?}, expected {:?}", MAGIC)]
    BadMagic { found: [u8; 4] },
    #[error("format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("truncated embedding file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("embedding file has {actual} bytes, expected {expected}")]
    TrailingBytes { expected: u64, actual: u64 },
    #[error("index lists {index_rows} rows but payload holds {payload_rows}")]
    IndexMismatch { index_rows: usize, payload_rows: usize },
    #[error("index declares dim {index_dim} but payload header has {payload_dim}")]
    DimMismatch { index_dim: usize, payload_dim: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("duplicate segment key {0}")]
    DuplicateKey(SegmentKey),
    #[error("unknown segment {0}")]
    UnknownSegment(SegmentKey),
    #[error("invalid segment key {0:?}: expected <image_id>:<segment_index>")]
    BadKey(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Identifies one segment of one image. Rendered as `<image_id>:<index>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentKey {
    pub image_id: String,
    pub segment_index: u32,
}

impl SegmentKey {
    pub fn new(image_id: impl Into<String>, segment_index: u32) -> Self {
        Self {
            image_id: image_id.into(),
            segment_index,
        }
    }
}

impl fmt::Display for SegmentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.image_id, self.segment_index)
    }
}

impl FromStr for SegmentKey {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        let (id, idx) = s.rsplit_once(':').ok_or_else(|| StoreError::BadKey(s.to_string()))?;
        if id.is_empty() {
            return Err(StoreError::BadKey(s.to_string()));
        }
        let segment_index = idx.parse().map_err(|_| StoreError::BadKey(s.to_string()))?;
        Ok(Self::new(id, segment_index))
    }
}

impl Serialize for SegmentKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SegmentKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Reads a line-delimited JSON file, skipping blank lines.
pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| StoreError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub(crate) fn to_jsonl<T: Serialize>(records: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r).expect("records serialize"));
        out.push('\n');
    }
    out
}
