//! Human-in-the-loop concept curation, persisted as an append-only event
//! log. The in-memory state is a fold over the log.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, read_jsonl, Result, SegmentKey, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected,
    #[default]
    Undecided,
}

/// One line of `curation.log.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationEvent {
    pub revision: u64,
    pub segment_key: SegmentKey,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CurationState {
    decisions: BTreeMap<SegmentKey, Decision>,
    accepted_per_class: Vec<usize>,
    revision: u64,
}

impl CurationState {
    pub fn new(class_count: usize) -> Self {
        Self {
            decisions: BTreeMap::new(),
            accepted_per_class: vec![0; class_count],
            revision: 0,
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn accepted_per_class(&self) -> &[usize] {
        &self.accepted_per_class
    }

    pub fn decision(&self, key: &SegmentKey) -> Decision {
        self.decisions.get(key).copied().unwrap_or_default()
    }

    pub fn decisions(&self) -> &BTreeMap<SegmentKey, Decision> {
        &self.decisions
    }

    pub fn accepted(&self) -> impl Iterator<Item = &SegmentKey> {
        self.decisions
            .iter()
            .filter(|(_, d)| **d == Decision::Accepted)
            .map(|(k, _)| k)
    }

    pub fn total_accepted(&self) -> usize {
        self.accepted_per_class.iter().sum()
    }

    /// Returns the state after recording `decision` for a segment of class
    /// `class_index`. Revision always advances, even when the decision is
    /// unchanged.
    pub fn record(&self, key: &SegmentKey, decision: Decision, class_index: usize) -> Self {
        let mut next = self.clone();
        next.apply(key, decision, class_index);
        next
    }

    fn apply(&mut self, key: &SegmentKey, decision: Decision, class_index: usize) {
        let prev = self.decision(key);
        if prev == Decision::Accepted {
            self.accepted_per_class[class_index] -= 1;
        }
        if decision == Decision::Accepted {
            self.accepted_per_class[class_index] += 1;
        }
        match decision {
            Decision::Undecided => {
                self.decisions.remove(key);
            }
            d => {
                self.decisions.insert(key.clone(), d);
            }
        }
        self.revision += 1;
    }

    /// Folds `events` from the empty state.
    pub fn replay<'a>(
        events: impl IntoIterator<Item = &'a CurationEvent>,
        classes: &HashMap<SegmentKey, usize>,
        class_count: usize,
    ) -> Result<Self> {
        let mut state = Self::new(class_count);
        for ev in events {
            let class = *classes
                .get(&ev.segment_key)
                .ok_or_else(|| StoreError::UnknownSegment(ev.segment_key.clone()))?;
            state.apply(&ev.segment_key, ev.decision, class);
        }
        Ok(state)
    }
}

/// Single-writer handle over `curation.log.jsonl`.
#[derive(Debug)]
pub struct CurationLog {
    path: PathBuf,
    classes: HashMap<SegmentKey, usize>,
    state: CurationState,
}

impl CurationLog {
    /// Opens (or starts) the log at `path`, replaying any existing events.
    /// `classes` maps every known segment to its class index.
    pub fn open(path: &Path, classes: HashMap<SegmentKey, usize>, class_count: usize) -> Result<Self> {
        let events: Vec<CurationEvent> = if path.exists() { read_jsonl(path)? } else { Vec::new() };
        let state = CurationState::replay(&events, &classes, class_count)?;
        Ok(Self {
            path: path.to_path_buf(),
            classes,
            state,
        })
    }

    pub fn state(&self) -> &CurationState {
        &self.state
    }

    pub fn class_of(&self, key: &SegmentKey) -> Option<usize> {
        self.classes.get(key).copied()
    }

    /// Appends the decision to disk, then applies it. Unknown keys leave both
    /// the file and the state untouched.
    pub fn record(&mut self, key: &SegmentKey, decision: Decision) -> Result<&CurationState> {
        let class = self
            .class_of(key)
            .ok_or_else(|| StoreError::UnknownSegment(key.clone()))?;
        let event = CurationEvent {
            revision: self.state.revision + 1,
            segment_key: key.clone(),
            decision,
        };
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&self.path))?;
        f.sync_data().map_err(io_err(&self.path))?;
        self.state.apply(key, decision, class);
        Ok(&self.state)
    }

    pub fn events(&self) -> Result<Vec<CurationEvent>> {
        if self.path.exists() {
            read_jsonl(&self.path)
        } else {
            Ok(Vec::new())
        }
    }
}
