#![allow(dead_code)]

use std::path::{Path, PathBuf};

use protorbf_core::Image;

pub const CLASSES: [&str; 2] = ["blue", "red"];

/// 40×40 image with four flat quadrants in the class's hue family.
pub fn quadrant_image(class: usize, variant: usize) -> Image {
    let j = variant as f32 * 0.03;
    let palette: [[f32; 3]; 4] = if class == 1 {
        [[0.85 - j, 0.10, 0.10], [0.70, 0.25 + j, 0.10], [0.95, 0.35, 0.25 + j], [0.60 + j, 0.05, 0.20]]
    } else {
        [[0.10, 0.10, 0.85 - j], [0.10, 0.25 + j, 0.70], [0.25 + j, 0.35, 0.95], [0.20, 0.05 + j, 0.60]]
    };
    Image::from_fn(40, 40, |x, y| palette[(y / 20) * 2 + x / 20])
}

/// Writes `root/{train,test}/{blue,red}/<id>.png` and returns `root`.
pub fn image_tree(root: &Path, train_per_class: usize, test_per_class: usize) -> PathBuf {
    for (split, n) in [("train", train_per_class), ("test", test_per_class)] {
        for (c, name) in CLASSES.iter().enumerate() {
            let dir = root.join(split).join(name);
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..n {
                let variant = if split == "train" { i } else { i + train_per_class };
                quadrant_image(c, variant)
                    .save_png(dir.join(format!("{split}_{name}_{i}.png")))
                    .unwrap();
            }
        }
    }
    root.to_path_buf()
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the CLI in-process against `workspace`.
pub fn protorbf(workspace: &Path, args: &[&str]) -> Output {
    let mut argv = vec!["protorbf".to_string(), "--workspace".into(), workspace.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = protorbf_cli::main_with(argv, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn ok(o: Output) -> Output {
    assert_eq!(o.code, 0, "stdout: {}\nstderr: {}", o.stdout, o.stderr);
    o
}

/// The bundled extractor, as built for this test run.
pub fn extractor_cmd() -> String {
    env!("CARGO_BIN_EXE_protorbf-color-extractor").to_string()
}

/// A workspace that has been initialized, segmented and embedded.
pub fn embedded_workspace(root: &Path, train_per_class: usize, test_per_class: usize) -> PathBuf {
    let images = image_tree(&root.join("images"), train_per_class, test_per_class);
    let ws = root.join("ws");
    ok(protorbf(&ws, &["init", "--from-dir", images.to_str().unwrap()]));
    ok(protorbf(&ws, &["segment"]));
    ok(protorbf(&ws, &["embed", "--extractor-cmd", &extractor_cmd(), "--backbone", "color-stats"]));
    ws
}
