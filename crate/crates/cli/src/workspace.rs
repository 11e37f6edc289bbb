//! On-disk layout of a pipeline workspace and its stage markers.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use protorbf_core::clustering::PrototypeSet;
use protorbf_core::rbf::{load_model, RbfModel};
use protorbf_core::store::{atomic, read_embeddings, CurationLog, SegmentIndex, Split};
use protorbf_core::{DatasetManifest, EmbeddingStore, SegmentKey};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

const RUN_FILE: &str = "workspace.json";
const RUN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Segmented,
    Embedded,
    Curated,
    Clustered,
    Trained,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Segmented, Stage::Embedded, Stage::Curated, Stage::Clustered, Stage::Trained];

    /// Stages that must be complete before this one may run.
    pub fn predecessors(self) -> &'static [Stage] {
        let i = Stage::ALL.iter().position(|s| *s == self).expect("listed");
        &Stage::ALL[..i]
    }

    /// The command that produces this stage.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Segmented => "segment",
            Stage::Embedded => "embed",
            Stage::Curated => "curate",
            Stage::Clustered => "cluster",
            Stage::Trained => "train",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Segmented => "segmented",
            Stage::Embedded => "embedded",
            Stage::Curated => "curated",
            Stage::Clustered => "clustered",
            Stage::Trained => "trained",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed_at_unix: u64,
    /// Settings the stage ran with.
    pub config: serde_json::Value,
}

/// Contents of `workspace.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub version: u32,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Default for PipelineRun {
    fn default() -> Self {
        Self {
            version: RUN_VERSION,
            stages: BTreeMap::new(),
        }
    }
}

impl PipelineRun {
    pub fn is_complete(&self, stage: Stage) -> bool {
        self.stages.contains_key(&stage)
    }

    /// Marks `stage` complete and drops every later marker, whose outputs
    /// were derived from the previous run of `stage`.
    pub fn mark(&mut self, stage: Stage, config: serde_json::Value) {
        self.stages.retain(|s, _| *s < stage);
        let completed_at_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        self.stages.insert(
            stage,
            StageRecord {
                completed_at_unix,
                config,
            },
        );
    }
}

/// A directory holding every artifact of one pipeline.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Creates the directory and an empty `workspace.json`.
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(CliError::io(root))?;
        let ws = Self { root: root.to_path_buf() };
        if ws.run_file().exists() {
            return Err(CliError::Usage(format!("{} is already a workspace", root.display())));
        }
        ws.save_run(&PipelineRun::default())?;
        Ok(ws)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let ws = Self { root: root.to_path_buf() };
        if !ws.run_file().exists() {
            return Err(CliError::Usage(format!(
                "{} is not a workspace; run `protorbf init` first",
                root.display()
            )));
        }
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_file(&self) -> PathBuf {
        self.root.join(RUN_FILE)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    pub fn segments_path(&self) -> PathBuf {
        self.root.join("segments.jsonl")
    }

    pub fn crops_dir(&self) -> PathBuf {
        self.root.join("crops")
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.root.join("embeddings.prbf")
    }

    pub fn curation_path(&self) -> PathBuf {
        self.root.join("curation.log.jsonl")
    }

    pub fn prototypes_path(&self) -> PathBuf {
        self.root.join("prototypes.json")
    }

    pub fn train_config_path(&self) -> PathBuf {
        self.root.join("train.config.json")
    }

    pub fn model_path(&self) -> PathBuf {
        self.root.join("model.prbf.json")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    /// Static UI assets served at `/`.
    pub fn ui_dir(&self) -> PathBuf {
        self.root.join("ui")
    }

    pub fn run(&self) -> Result<PipelineRun> {
        let path = self.run_file();
        let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
        let run: PipelineRun =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if run.version != RUN_VERSION {
            return Err(CliError::Data(format!(
                "{}: workspace version {} is not supported (expected {RUN_VERSION})",
                path.display(),
                run.version
            )));
        }
        Ok(run)
    }

    pub fn save_run(&self, run: &PipelineRun) -> Result<()> {
        let path = self.run_file();
        let json = serde_json::to_vec_pretty(run).expect("run serializes");
        atomic::write_atomic(&path, &json).map_err(CliError::io(&path))
    }

    /// Fails unless every predecessor of `stage` is complete and, without
    /// `force`, `stage` itself is not.
    pub fn require(&self, command: &'static str, stage: Stage, force: bool) -> Result<PipelineRun> {
        let run = self.run()?;
        self.require_done(command, &run, stage.predecessors())?;
        if run.is_complete(stage) && !force {
            return Err(CliError::AlreadyDone(stage));
        }
        Ok(run)
    }

    pub fn require_done(&self, command: &'static str, run: &PipelineRun, stages: &[Stage]) -> Result<()> {
        match stages.iter().find(|s| !run.is_complete(**s)) {
            Some(&missing) => Err(CliError::StageOrder {
                command,
                missing,
                hint: missing.command(),
            }),
            None => Ok(()),
        }
    }

    pub fn mark(&self, stage: Stage, config: serde_json::Value) -> Result<()> {
        let mut run = self.run()?;
        run.mark(stage, config);
        self.save_run(&run)
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        Ok(DatasetManifest::read(&self.manifest_path())?)
    }

    pub fn segments(&self) -> Result<SegmentIndex> {
        Ok(SegmentIndex::read(&self.segments_path())?)
    }

    pub fn embeddings(&self) -> Result<EmbeddingStore> {
        Ok(read_embeddings(&self.embeddings_path())?)
    }

    pub fn prototypes(&self) -> Result<PrototypeSet> {
        Ok(PrototypeSet::read(&self.prototypes_path())?)
    }

    pub fn model(&self) -> Result<RbfModel> {
        Ok(load_model(&self.model_path())?)
    }

    /// Segments eligible as concepts: those of `train`-split images.
    pub fn concept_classes(&self, manifest: &DatasetManifest, segments: &SegmentIndex) -> HashMap<SegmentKey, usize> {
        segments
            .records()
            .iter()
            .filter(|r| manifest.image(&r.image_id).is_some_and(|i| i.split == Split::Train))
            .map(|r| (r.key(), r.class_index))
            .collect()
    }

    pub fn curation_log(&self, manifest: &DatasetManifest, segments: &SegmentIndex) -> Result<CurationLog> {
        let classes = self.concept_classes(manifest, segments);
        Ok(CurationLog::open(&self.curation_path(), classes, manifest.classes.len())?)
    }
}
