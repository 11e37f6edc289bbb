use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use protorbf_core::rbf::save_model;
use protorbf_core::segmentation::{extract_segment_crops, slic_segment};
use protorbf_core::store::{Decision, ImageRecord, SegmentIndex, SegmentRecord, Split};
use protorbf_core::training::{evaluate, group_images, TrainingData};
use protorbf_core::{select_prototypes, train, DatasetManifest, EmbeddingStore, Image, RbfModel, SlicParams, TrainConfig};
use serde_json::json;

use crate::args::{Cli, Command, GlobalOpts, InitArgs};
use crate::error::{CliError, Result};
use crate::extractor::{validate_output, ExtractorCommand};
use crate::service;
use crate::workspace::{Stage, Workspace};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Init(args) => init(g, &args, out),
        Command::Segment => segment(g, out),
        Command::Embed { backbone } => embed(g, backbone, out),
        Command::Curate { serve, auto_accept_all } => curate(g, serve, auto_accept_all, out),
        Command::Cluster { auto_accept_all } => cluster(g, auto_accept_all, out),
        Command::Train => train_cmd(g, out),
        Command::Eval => eval(g, out),
        Command::Predict { image } => predict(g, &image, out),
        Command::Explain { image_id } => explain(g, &image_id, out),
    }
}

fn say(out: &mut dyn Write, msg: impl std::fmt::Display) {
    // a closed stdout is not worth failing the command over
    let _ = writeln!(out, "{msg}");
}

fn seed(g: &GlobalOpts) -> u64 {
    g.seed.unwrap_or(0)
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).map_err(CliError::io(path))
}

fn init(g: &GlobalOpts, args: &InitArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = match (&args.manifest, &args.from_dir) {
        (Some(path), _) => {
            let mut m = DatasetManifest::read(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            for img in &mut m.images {
                img.path = absolute(&base.join(&img.path))?;
            }
            m
        }
        (None, Some(dir)) => manifest_from_dir(dir)?,
        (None, None) => return Err(CliError::Usage("pass --manifest or --from-dir".into())),
    };
    let ws = Workspace::create(&g.workspace)?;
    manifest.write(&ws.manifest_path())?;
    say(
        out,
        format_args!(
            "initialized {} with {} images in {} classes",
            ws.root().display(),
            manifest.images.len(),
            manifest.classes.len()
        ),
    );
    Ok(())
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(CliError::io(dir))? {
        let path = entry.map_err(CliError::io(dir))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn name_of(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Builds a manifest from `dir/class/*` (all `train`) or
/// `dir/{train,val,test}/class/*`.
pub fn manifest_from_dir(dir: &Path) -> Result<DatasetManifest> {
    let dir = absolute(dir)?;
    let top = subdirs(&dir)?;
    let split_of = |name: &str| match name {
        "train" => Some(Split::Train),
        "val" => Some(Split::Val),
        "test" => Some(Split::Test),
        _ => None,
    };
    let split_layout = !top.is_empty() && top.iter().all(|d| split_of(&name_of(d)).is_some());
    let roots: Vec<(Split, PathBuf)> = if split_layout {
        top.iter().map(|d| (split_of(&name_of(d)).expect("checked"), d.clone())).collect()
    } else {
        vec![(Split::Train, dir.clone())]
    };

    let mut classes = BTreeSet::new();
    for (_, root) in &roots {
        for d in subdirs(root)? {
            classes.insert(name_of(&d));
        }
    }
    let classes: Vec<String> = classes.into_iter().collect();
    let mut images = Vec::new();
    for (split, root) in &roots {
        for class_dir in subdirs(root)? {
            let class_index = classes.iter().position(|c| *c == name_of(&class_dir)).expect("collected");
            let mut files: Vec<PathBuf> = std::fs::read_dir(&class_dir)
                .map_err(CliError::io(&class_dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_string_lossy().to_lowercase().as_str()))
                })
                .collect();
            files.sort();
            for path in files {
                let image_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                images.push(ImageRecord {
                    image_id,
                    path,
                    class_index,
                    split: *split,
                });
            }
        }
    }
    if images.is_empty() {
        return Err(CliError::Data(format!("{}: no images found", dir.display())));
    }
    Ok(DatasetManifest::new(name_of(&dir), classes, images)?)
}

fn slic_params(g: &GlobalOpts) -> SlicParams {
    SlicParams {
        n_segments: g.n_segments,
        compactness: g.compactness,
        seed: seed(g),
        ..SlicParams::default()
    }
}

/// Segments `images`, writing crops into `root/crops` and returning records
/// whose crop paths are relative to `root`.
fn segment_images(images: &[ImageRecord], params: &SlicParams, root: &Path) -> Result<Vec<SegmentRecord>> {
    let crops = root.join("crops");
    std::fs::create_dir_all(&crops).map_err(CliError::io(&crops))?;
    let mut records = Vec::new();
    for rec in images {
        let img = Image::open(&rec.path)?;
        let labels = slic_segment(&img, params)?;
        for crop in extract_segment_crops(&img, &labels, &rec.image_id)? {
            let (crop_path, mask_path) = crop.save(&crops)?;
            let rel = |p: &Path| Path::new("crops").join(p.file_name().expect("saved file"));
            records.push(SegmentRecord {
                image_id: rec.image_id.clone(),
                segment_index: crop.segment_index as u32,
                class_index: rec.class_index,
                bbox: crop.bounding_box,
                pixel_count: crop.pixel_count(),
                crop_path: rel(&crop_path),
                mask_path: rel(&mask_path),
            });
        }
    }
    Ok(records)
}

fn segment(g: &GlobalOpts, out: &mut dyn Write) -> Result<()> {
    let ws = Workspace::open(&g.workspace)?;
    ws.require("segment", Stage::Segmented, g.force)?;
    let manifest = ws.manifest()?;
    let params = slic_params(g);
    let crops = ws.crops_dir();
    if crops.exists() {
        std::fs::remove_dir_all(&crops).map_err(CliError::io(&crops))?;
    }
    let index = SegmentIndex::new(segment_images(&manifest.images, &params, ws.root())?)?;
    index.write(&ws.segments_path())?;
    ws.mark(Stage::Segmented, serde_json::to_value(&params).expect("params serialize"))?;
    say(
        out,
        format_args!("segmented {} images into {} segments", manifest.images.len(), index.len()),
    );
    Ok(())
}

fn extractor(g: &GlobalOpts, backbone: Option<String>) -> Result<ExtractorCommand> {
    match &g.extractor_cmd {
        Some(cmd) => ExtractorCommand::parse(cmd, backbone),
        None => ExtractorCommand::bundled(backbone),
    }
}

fn embed(g: &GlobalOpts, backbone: Option<String>, out: &mut dyn Write) -> Result<()> {
    let ws = Workspace::open(&g.workspace)?;
    ws.require("embed", Stage::Embedded, g.force)?;
    let cmd = extractor(g, backbone)?;
    cmd.run(&ws.manifest_path(), &ws.segments_path(), &ws.embeddings_path())?;
    let store = ws.embeddings()?;
    validate_output(&store, &ws.segments()?)?;
    ws.mark(
        Stage::Embedded,
        json!({
            "extractor": cmd,
            "extractor_tag": store.extractor_tag(),
            "dim": store.dim(),
            "rows": store.rows(),
        }),
    )?;
    say(
        out,
        format_args!(
            "embedded {} segments: dim {}, extractor {}",
            store.rows(),
            store.dim(),
            store.extractor_tag()
        ),
    );
    Ok(())
}

/// Accepts every undecided training segment; returns how many changed.
fn auto_accept(ws: &Workspace) -> Result<usize> {
    let manifest = ws.manifest()?;
    let segments = ws.segments()?;
    let mut log = ws.curation_log(&manifest, &segments)?;
    let mut keys: Vec<_> = ws.concept_classes(&manifest, &segments).into_keys().collect();
    keys.sort();
    let mut changed = 0;
    for key in keys {
        if log.state().decision(&key) == Decision::Undecided {
            log.record(&key, Decision::Accepted)?;
            changed += 1;
        }
    }
    Ok(changed)
}

fn mark_curated(ws: &Workspace) -> Result<protorbf_core::store::CurationState> {
    let manifest = ws.manifest()?;
    let segments = ws.segments()?;
    let log = ws.curation_log(&manifest, &segments)?;
    let state = log.state().clone();
    ws.mark(
        Stage::Curated,
        json!({ "revision": state.revision(), "accepted_per_class": state.accepted_per_class() }),
    )?;
    Ok(state)
}

fn curate(g: &GlobalOpts, serve: bool, auto_accept_all: bool, out: &mut dyn Write) -> Result<()> {
    if !serve && !auto_accept_all {
        return Err(CliError::Usage("curate needs --serve, --auto-accept-all or both".into()));
    }
    let ws = Workspace::open(&g.workspace)?;
    let run = ws.run()?;
    ws.require_done("curate", &run, Stage::Curated.predecessors())?;
    if auto_accept_all {
        if run.is_complete(Stage::Curated) && !g.force && !serve {
            return Err(CliError::AlreadyDone(Stage::Curated));
        }
        let changed = auto_accept(&ws)?;
        let state = mark_curated(&ws)?;
        say(
            out,
            format_args!(
                "accepted {changed} segments; {} accepted in total (revision {})",
                state.total_accepted(),
                state.revision()
            ),
        );
    }
    if serve {
        let state = service::AppState::load(ws.clone(), g.k_per_class, seed(g))?;
        say(
            out,
            format_args!("curation service listening on http://127.0.0.1:{} (Ctrl-C to stop)", g.port),
        );
        let _ = out.flush();
        service::serve_blocking(state, g.port)?;
        // record where curation left off unless a recluster already did
        let revision = ws.curation_log(&ws.manifest()?, &ws.segments()?)?.state().revision();
        let recorded = ws.run()?.stages.get(&Stage::Curated).and_then(|r| r.config["revision"].as_u64());
        if recorded != Some(revision) {
            mark_curated(&ws)?;
        }
    }
    Ok(())
}

fn cluster(g: &GlobalOpts, auto_accept_all: bool, out: &mut dyn Write) -> Result<()> {
    let ws = Workspace::open(&g.workspace)?;
    let run = ws.run()?;
    ws.require_done("cluster", &run, &[Stage::Segmented, Stage::Embedded])?;
    if run.is_complete(Stage::Clustered) && !g.force {
        return Err(CliError::AlreadyDone(Stage::Clustered));
    }
    if auto_accept_all {
        auto_accept(&ws)?;
    }
    let manifest = ws.manifest()?;
    let segments = ws.segments()?;
    let log = ws.curation_log(&manifest, &segments)?;
    if log.state().total_accepted() == 0 {
        return Err(CliError::Data(
            "empty concept pool: no segment has been accepted; run `protorbf curate` or pass --auto-accept-all".into(),
        ));
    }
    let recorded = run.stages.get(&Stage::Curated).and_then(|r| r.config["revision"].as_u64());
    if recorded != Some(log.state().revision()) {
        mark_curated(&ws)?;
    }
    let store = ws.embeddings()?;
    let classes = ws.concept_classes(&manifest, &segments);
    let set = select_prototypes(&store, log.state(), &classes, &manifest.classes, g.k_per_class, seed(g))?;
    set.write(&ws.prototypes_path())?;
    ws.mark(
        Stage::Clustered,
        json!({
            "k_per_class": g.k_per_class,
            "seed": seed(g),
            "revision": log.state().revision(),
            "silhouette": set.silhouette,
        }),
    )?;
    say(
        out,
        format_args!(
            "selected {} prototypes ({} per class), sigma_default {:.6}",
            set.len(),
            set.k_per_class,
            set.sigma_default
        ),
    );
    if let Some(s) = &set.silhouette {
        for (c, v) in s.per_class.iter().enumerate() {
            match v {
                Some(v) => say(out, format_args!("  silhouette {}: {v:.4}", manifest.classes[c])),
                None => say(out, format_args!("  silhouette {}: n/a", manifest.classes[c])),
            }
        }
        if let Some(p) = s.pooled {
            say(out, format_args!("  silhouette pooled: {p:.4}"));
        }
    }
    Ok(())
}

fn train_config(ws: &Workspace, g: &GlobalOpts) -> Result<TrainConfig> {
    let path = ws.train_config_path();
    let mut cfg: TrainConfig = if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
    } else {
        TrainConfig::default()
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(s) = g.sigma {
        cfg.sigma = Some(s);
    }
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let json = serde_json::to_vec_pretty(value).expect("value serializes");
    protorbf_core::store::atomic::write_atomic(path, &json).map_err(CliError::io(path))
}

fn train_cmd(g: &GlobalOpts, out: &mut dyn Write) -> Result<()> {
    let ws = Workspace::open(&g.workspace)?;
    ws.require("train", Stage::Trained, g.force)?;
    let cfg = train_config(&ws, g)?;
    let manifest = ws.manifest()?;
    let store = ws.embeddings()?;
    let prototypes = ws.prototypes()?;
    let data = TrainingData::from_manifest(&store, &manifest, cfg.val_fraction, cfg.seed)?;
    let (model, report) = train(&data, &prototypes, &cfg)?;
    save_model(&model, &ws.model_path())?;
    write_json(&ws.report_path(), &report)?;
    ws.mark(Stage::Trained, serde_json::to_value(&cfg).expect("config serializes"))?;
    say(
        out,
        format_args!(
            "trained {} epochs ({:?}); best epoch {} with val loss {:.6}; sigma {:.6}",
            report.epochs.len(),
            report.stop_reason,
            report.best_epoch,
            report.best_val_loss,
            report.sigma
        ),
    );
    say(out, format_args!("validation accuracy {:.4}", report.final_metrics.accuracy));
    Ok(())
}

fn trained(g: &GlobalOpts, command: &'static str) -> Result<(Workspace, RbfModel)> {
    let ws = Workspace::open(&g.workspace)?;
    let run = ws.run()?;
    ws.require_done(command, &run, &Stage::ALL)?;
    let model = ws.model()?;
    Ok((ws, model))
}

fn eval(g: &GlobalOpts, out: &mut dyn Write) -> Result<()> {
    let (ws, model) = trained(g, "eval")?;
    let manifest = ws.manifest()?;
    let (split, name) = if manifest.split(Split::Test).next().is_some() {
        (Split::Test, "test")
    } else if manifest.split(Split::Val).next().is_some() {
        (Split::Val, "val")
    } else {
        return Err(CliError::Data("manifest has no test or val images to evaluate".into()));
    };
    let ids: Vec<(String, usize)> = manifest
        .split(split)
        .map(|r| (r.image_id.clone(), r.class_index))
        .collect();
    let store = ws.embeddings()?;
    let images = group_images(&store, &ids)?;
    let metrics = evaluate(&model, &store, &images)?;
    write_json(&ws.metrics_path(), &json!({ "split": name, "metrics": metrics }))?;
    say(out, format_args!("split: {name}"));
    let _ = write!(out, "{}", metrics.to_table(model.classes()));
    Ok(())
}

fn image_rows(store: &EmbeddingStore, image_id: &str) -> Vec<(u32, Vec<f64>)> {
    let mut rows: Vec<(u32, Vec<f64>)> = store
        .index()
        .iter()
        .enumerate()
        .filter(|(_, k)| k.image_id == image_id)
        .map(|(r, k)| (k.segment_index, store.row_f64(r)))
        .collect();
    rows.sort_by_key(|(i, _)| *i);
    rows
}

/// Segments and embeds an image file outside the workspace, using the
/// settings the workspace was built with.
fn embed_external(ws: &Workspace, path: &Path, model: &RbfModel) -> Result<Vec<Vec<f64>>> {
    let run = ws.run()?;
    let params: SlicParams = serde_json::from_value(run.stages[&Stage::Segmented].config.clone())
        .map_err(|e| CliError::Data(format!("segmentation settings in workspace.json: {e}")))?;
    let cmd: ExtractorCommand = serde_json::from_value(run.stages[&Stage::Embedded].config["extractor"].clone())
        .map_err(|e| CliError::Data(format!("extractor settings in workspace.json: {e}")))?;

    let tmp = tempfile::tempdir().map_err(CliError::io(std::env::temp_dir()))?;
    let image_id = "query".to_string();
    let record = ImageRecord {
        image_id: image_id.clone(),
        path: absolute(path)?,
        class_index: 0,
        split: Split::Test,
    };
    let manifest = DatasetManifest::new("query", model.classes().to_vec(), vec![record.clone()])?;
    let manifest_path = tmp.path().join("manifest.jsonl");
    let segments_path = tmp.path().join("segments.jsonl");
    let out_path = tmp.path().join("embeddings.prbf");
    manifest.write(&manifest_path)?;
    SegmentIndex::new(segment_images(&[record], &params, tmp.path())?)?.write(&segments_path)?;
    cmd.run(&manifest_path, &segments_path, &out_path)?;
    let store = protorbf_core::store::read_embeddings(&out_path)?;
    if store.extractor_tag() != model.prototypes().extractor_tag {
        return Err(CliError::Data(format!(
            "extractor produced {:?} embeddings but the model was trained on {:?}",
            store.extractor_tag(),
            model.prototypes().extractor_tag
        )));
    }
    Ok(image_rows(&store, &image_id).into_iter().map(|(_, z)| z).collect())
}

fn predict(g: &GlobalOpts, image: &str, out: &mut dyn Write) -> Result<()> {
    let (ws, model) = trained(g, "predict")?;
    let store = ws.embeddings()?;
    let rows = image_rows(&store, image);
    let segments: Vec<Vec<f64>> = if !rows.is_empty() {
        rows.into_iter().map(|(_, z)| z).collect()
    } else if Path::new(image).is_file() {
        embed_external(&ws, Path::new(image), &model)?
    } else {
        return Err(CliError::Data(format!("{image:?} is neither a workspace image id nor an image file")));
    };
    let p = model.predict_image(&segments)?;
    say(out, format_args!("predicted: {}", model.classes()[p.predicted_class]));
    for (c, prob) in model.classes().iter().zip(&p.probabilities) {
        say(out, format_args!("  {c}: {prob:.4}"));
    }
    Ok(())
}

fn explain(g: &GlobalOpts, image_id: &str, out: &mut dyn Write) -> Result<()> {
    let (ws, model) = trained(g, "explain")?;
    let store = ws.embeddings()?;
    let segments = ws.segments()?;
    let rows = image_rows(&store, image_id);
    if rows.is_empty() {
        return Err(CliError::Data(format!("unknown image id {image_id:?}")));
    }
    let keys: Vec<u32> = rows.iter().map(|(i, _)| *i).collect();
    let vectors: Vec<Vec<f64>> = rows.into_iter().map(|(_, z)| z).collect();
    let e = model.explain(&vectors)?;
    let crop = |key: &protorbf_core::SegmentKey| -> String {
        segments
            .get(key)
            .map_or_else(|| "(no crop)".into(), |r| ws.root().join(&r.crop_path).display().to_string())
    };
    let classes = model.classes();
    say(
        out,
        format_args!(
            "image {image_id}: predicted {} (p = {:.4})",
            classes[e.predicted_class],
            e.image_probabilities[e.predicted_class]
        ),
    );
    for s in &e.per_segment {
        let key = protorbf_core::SegmentKey::new(image_id, keys[s.segment_index]);
        let top = &s.top_prototype;
        say(
            out,
            format_args!(
                "  segment {}: top prototype #{} ({}, from {}) activation {:.6}",
                key.segment_index, top.ordinal, classes[top.class_index], top.source_segment, top.activation
            ),
        );
        say(out, format_args!("    segment crop:   {}", crop(&key)));
        say(out, format_args!("    prototype crop: {}", crop(&top.source_segment)));
    }
    Ok(())
}
