use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{RbfError, RbfModel, Result};
use crate::clustering::PrototypeSet;
use crate::store::atomic;

pub const MODEL_FORMAT: &str = "protorbf-model";
pub const MODEL_VERSION: u32 = 1;

/// Layout of `model.prbf.json`.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    classes: Vec<String>,
    sigma: f32,
    weights: Vec<Vec<f32>>,
    bias: Vec<f32>,
    prototypes: PrototypeSet,
}

pub fn save_model(model: &RbfModel, path: &Path) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        classes: model.classes().to_vec(),
        sigma: model.sigma(),
        weights: model.weights().rows().into_iter().map(|r| r.to_vec()).collect(),
        bias: model.bias().to_vec(),
        prototypes: model.prototypes().clone(),
    };
    let json = serde_json::to_vec_pretty(&file).expect("model serializes");
    atomic::write_atomic(path, &json).map_err(|source| RbfError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<RbfModel> {
    let text = std::fs::read_to_string(path).map_err(|source| RbfError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| RbfError::Format(format!("{}: {e}", path.display())))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(MODEL_FORMAT) => {}
        other => {
            return Err(RbfError::Format(format!(
                "{}: format marker is {other:?}, expected {MODEL_FORMAT:?}",
                path.display()
            )))
        }
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != MODEL_VERSION {
        return Err(RbfError::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| RbfError::InvalidModel(format!("{}: {e}", path.display())))?;
    if file.classes != file.prototypes.classes {
        return Err(RbfError::InvalidModel("class list disagrees with prototype set".into()));
    }
    let rows = file.weights.len();
    let cols = file.weights.first().map_or(0, Vec::len);
    if file.weights.iter().any(|r| r.len() != cols) {
        return Err(RbfError::InvalidModel("ragged weight matrix".into()));
    }
    let weights = Array2::from_shape_vec((rows, cols), file.weights.concat()).expect("shape checked");
    RbfModel::new(file.prototypes, file.sigma, weights, Array1::from(file.bias))
}
