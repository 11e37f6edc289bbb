use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{atomic, io_err, read_jsonl, to_jsonl, Result, SegmentKey, StoreError};
use crate::segmentation::BoundingBox;

/// One line of `segments.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub image_id: String,
    pub segment_index: u32,
    pub class_index: usize,
    pub bbox: BoundingBox,
    pub pixel_count: usize,
    pub crop_path: PathBuf,
    pub mask_path: PathBuf,
}

impl SegmentRecord {
    pub fn key(&self) -> SegmentKey {
        SegmentKey::new(self.image_id.clone(), self.segment_index)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SegmentIndex {
    records: Vec<SegmentRecord>,
    by_key: HashMap<SegmentKey, usize>,
}

impl SegmentIndex {
    pub fn new(records: Vec<SegmentRecord>) -> Result<Self> {
        let mut by_key = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_key.insert(r.key(), i).is_some() {
                return Err(StoreError::DuplicateKey(r.key()));
            }
        }
        Ok(Self { records, by_key })
    }

    pub fn records(&self) -> &[SegmentRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &SegmentKey) -> Option<&SegmentRecord> {
        self.by_key.get(key).map(|&i| &self.records[i])
    }

    pub fn class_of(&self, key: &SegmentKey) -> Option<usize> {
        self.get(key).map(|r| r.class_index)
    }

    pub fn class_map(&self) -> HashMap<SegmentKey, usize> {
        self.records.iter().map(|r| (r.key(), r.class_index)).collect()
    }

    /// Segments of one image, ordered by segment index.
    pub fn for_image(&self, image_id: &str) -> Vec<&SegmentRecord> {
        let mut v: Vec<_> = self.records.iter().filter(|r| r.image_id == image_id).collect();
        v.sort_by_key(|r| r.segment_index);
        v
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::new(read_jsonl(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic::write_atomic(path, to_jsonl(&self.records).as_bytes()).map_err(io_err(path))
    }
}
