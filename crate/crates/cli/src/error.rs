use std::path::PathBuf;

use protorbf_core::clustering::ClusteringError;
use protorbf_core::rbf::RbfError;
use protorbf_core::segmentation::SegmentationError;
use protorbf_core::store::StoreError;
use protorbf_core::training::TrainingError;
use thiserror::Error;

use crate::workspace::Stage;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("cannot run `{command}`: stage `{missing}` has not completed; run `protorbf {hint}` first")]
    StageOrder {
        command: &'static str,
        missing: Stage,
        hint: &'static str,
    },
    #[error("stage `{0}` is already complete; pass --force to redo it and discard later stages")]
    AlreadyDone(Stage),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Model(#[from] RbfError),
    #[error(transparent)]
    Training(#[from] TrainingError),
}

impl CliError {
    /// 1 for misuse of the command line, 2 for bad or inconsistent data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::StageOrder { .. } | CliError::AlreadyDone(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
