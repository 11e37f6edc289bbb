use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{atomic, io_err, read_jsonl, to_jsonl, Result, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub path: PathBuf,
    pub class_index: usize,
    pub split: Split,
}

/// `manifest.jsonl`: one `dataset` header line, then one `image` line per
/// image.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ManifestLine {
    Dataset { name: String, classes: Vec<String> },
    Image(ImageRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: Vec<String>,
    pub images: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, classes: Vec<String>, images: Vec<ImageRecord>) -> Result<Self> {
        let m = Self {
            name: name.into(),
            classes,
            images,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(StoreError::InvalidManifest("no classes declared".into()));
        }
        let mut ids = HashSet::new();
        for img in &self.images {
            if img.image_id.is_empty() || img.image_id.contains(['/', '\\']) {
                return Err(StoreError::InvalidManifest(format!(
                    "image id {:?} must be non-empty and free of path separators",
                    img.image_id
                )));
            }
            if !ids.insert(img.image_id.as_str()) {
                return Err(StoreError::InvalidManifest(format!("duplicate image id {}", img.image_id)));
            }
            if img.class_index >= self.classes.len() {
                return Err(StoreError::InvalidManifest(format!(
                    "image {} has class index {} but only {} classes exist",
                    img.image_id,
                    img.class_index,
                    self.classes.len()
                )));
            }
        }
        Ok(())
    }

    /// Training needs both a train and a test split.
    pub fn validate_for_training(&self) -> Result<()> {
        for split in [Split::Train, Split::Test] {
            if self.split(split).next().is_none() {
                return Err(StoreError::InvalidManifest(format!("{split:?} split is empty")));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |i| i.split == split)
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let lines: Vec<ManifestLine> = read_jsonl(path)?;
        let mut header = None;
        let mut images = Vec::new();
        for line in lines {
            match line {
                ManifestLine::Dataset { name, classes } => {
                    if header.replace((name, classes)).is_some() {
                        return Err(StoreError::InvalidManifest("more than one dataset record".into()));
                    }
                }
                ManifestLine::Image(rec) => images.push(rec),
            }
        }
        let (name, classes) =
            header.ok_or_else(|| StoreError::InvalidManifest("missing dataset record".into()))?;
        Self::new(name, classes, images)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = ManifestLine::Dataset {
            name: self.name.clone(),
            classes: self.classes.clone(),
        };
        let body = to_jsonl(std::iter::once(header).chain(self.images.iter().cloned().map(ManifestLine::Image)));
        atomic::write_atomic(path, body.as_bytes()).map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, class_index: usize, split: Split) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            path: format!("images/{id}.png").into(),
            class_index,
            split,
        }
    }

    #[test]
    fn round_trips_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let m = DatasetManifest::new(
            "isic2016",
            vec!["benign".into(), "malignant".into()],
            vec![rec("a", 0, Split::Train), rec("b", 1, Split::Test)],
        )
        .unwrap();
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with(r#"{"record":"dataset""#));
        assert_eq!(DatasetManifest::read(&path).unwrap(), m);
        m.validate_for_training().unwrap();
    }

    #[test]
    fn rejects_duplicates_and_bad_classes() {
        let classes = vec!["a".to_string()];
        assert!(DatasetManifest::new("x", classes.clone(), vec![rec("a", 0, Split::Train), rec("a", 0, Split::Test)]).is_err());
        assert!(DatasetManifest::new("x", classes.clone(), vec![rec("a", 1, Split::Train)]).is_err());
        assert!(DatasetManifest::new("x", classes.clone(), vec![rec("a/b", 0, Split::Train)]).is_err());
        let only_train = DatasetManifest::new("x", classes, vec![rec("a", 0, Split::Train)]).unwrap();
        assert!(only_train.validate_for_training().is_err());
    }
}
