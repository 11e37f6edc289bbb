use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "protorbf", version, about = "Prototype-based RBF image classification pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Workspace directory holding every pipeline artifact.
    #[arg(long, global = true, default_value = ".")]
    pub workspace: PathBuf,
    /// Seed for clustering and the train/validation split.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Superpixels per image.
    #[arg(long, global = true, default_value_t = 4)]
    pub n_segments: usize,
    /// SLIC compactness.
    #[arg(long, global = true, default_value_t = 100.0)]
    pub compactness: f64,
    /// Prototypes per class.
    #[arg(long, global = true, default_value_t = 15)]
    pub k_per_class: usize,
    /// RBF width; defaults to the median pairwise prototype distance.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Port of the curation service (bound to 127.0.0.1).
    #[arg(long, global = true, default_value_t = 8711)]
    pub port: u16,
    /// Feature extractor command line; defaults to the bundled color extractor.
    #[arg(long, global = true)]
    pub extractor_cmd: Option<String>,
    /// Redo a completed stage, discarding every later one.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a workspace from a manifest or an image directory.
    Init(InitArgs),
    /// Split every image into superpixels and save the crops.
    Segment,
    /// Run the feature extractor over all crops.
    Embed {
        /// Backbone name passed to the extractor.
        #[arg(long)]
        backbone: Option<String>,
    },
    /// Accept or reject segments as concepts.
    Curate {
        /// Start the curation service.
        #[arg(long)]
        serve: bool,
        /// Accept every undecided training segment.
        #[arg(long)]
        auto_accept_all: bool,
    },
    /// Select prototypes with K-Medoids over the accepted segments.
    Cluster {
        /// Accept every undecided training segment first.
        #[arg(long)]
        auto_accept_all: bool,
    },
    /// Fit the RBF head.
    Train,
    /// Report accuracy on the test split (or val when there is none).
    Eval,
    /// Classify a workspace image id or an image file.
    Predict { image: String },
    /// Show which prototypes drove the prediction for an image.
    Explain { image_id: String },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct InitArgs {
    /// A manifest.jsonl to copy into the workspace.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// A directory laid out as `[split/]class/image`.
    #[arg(long)]
    pub from_dir: Option<PathBuf>,
}
