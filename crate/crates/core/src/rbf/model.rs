use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use super::{head_logits, softmax, RbfError, RbfFeatures, Result};
use crate::argmax;
use crate::clustering::PrototypeSet;
use crate::store::SegmentKey;

/// Everything computed for one segment on the way to its class
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentTrace {
    pub activations: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopPrototype {
    pub ordinal: usize,
    pub activation: f64,
    pub class_index: usize,
    pub source_segment: SegmentKey,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentExplanation {
    pub segment_index: usize,
    pub activations: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub top_prototype: TopPrototype,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub per_segment: Vec<SegmentExplanation>,
    pub image_probabilities: Vec<f64>,
    pub predicted_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub predicted_class: usize,
    pub probabilities: Vec<f64>,
    pub explanation: Explanation,
}

/// Runs one segment through the feature map and head.
pub(crate) fn trace_segment<A: Copy + Into<f64>>(
    features: &RbfFeatures,
    weights: ArrayView2<'_, A>,
    bias: ArrayView1<'_, A>,
    z: &[f64],
) -> Result<SegmentTrace> {
    let activations = features.activations(z)?;
    let logits = head_logits(weights, bias, &activations);
    let probabilities = softmax(&logits);
    Ok(SegmentTrace {
        activations,
        logits,
        probabilities,
    })
}

/// Arithmetic mean of per-segment probability vectors.
pub(crate) fn average_probabilities(traces: &[SegmentTrace]) -> Vec<f64> {
    let classes = traces[0].probabilities.len();
    let mut mean = vec![0.0; classes];
    for t in traces {
        for (m, p) in mean.iter_mut().zip(&t.probabilities) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= traces.len() as f64);
    mean
}

/// The interpretable classifier. Parameters are held in 32-bit; all
/// arithmetic runs in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfModel {
    prototypes: PrototypeSet,
    sigma: f32,
    weights: Array2<f32>,
    bias: Array1<f32>,
    features: RbfFeatures,
}

impl RbfModel {
    pub fn new(prototypes: PrototypeSet, sigma: f32, weights: Array2<f32>, bias: Array1<f32>) -> Result<Self> {
        prototypes
            .validate()
            .map_err(|e| RbfError::InvalidModel(e.to_string()))?;
        let classes = prototypes.classes.len();
        let k = prototypes.len();
        if weights.dim() != (classes, k) {
            return Err(RbfError::InvalidModel(format!(
                "weights are {:?}, expected ({classes}, {k})",
                weights.dim()
            )));
        }
        if bias.len() != classes {
            return Err(RbfError::InvalidModel(format!("bias has {} entries, expected {classes}", bias.len())));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(RbfError::InvalidModel("non-finite parameter".into()));
        }
        let centers = Array2::from_shape_fn((k, prototypes.dim()), |(i, j)| prototypes.prototypes[i].vector[j] as f64);
        let features = RbfFeatures::new(centers, sigma as f64)?;
        Ok(Self {
            prototypes,
            sigma,
            weights: weights.as_standard_layout().into_owned(),
            bias,
            features,
        })
    }

    /// Zero weights and bias: every prediction is uniform.
    pub fn zeroed(prototypes: PrototypeSet, sigma: f32) -> Result<Self> {
        let (c, k) = (prototypes.classes.len(), prototypes.len());
        Self::new(prototypes, sigma, Array2::zeros((c, k)), Array1::zeros(c))
    }

    pub fn classes(&self) -> &[String] {
        &self.prototypes.classes
    }

    pub fn prototypes(&self) -> &PrototypeSet {
        &self.prototypes
    }

    pub fn sigma(&self) -> f32 {
        self.sigma
    }

    pub fn weights(&self) -> &Array2<f32> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f32> {
        &self.bias
    }

    pub fn features(&self) -> &RbfFeatures {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn rbf_activations(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.features.activations(z)
    }

    pub fn trace(&self, z: &[f64]) -> Result<SegmentTrace> {
        trace_segment(&self.features, self.weights.view(), self.bias.view(), z)
    }

    /// Class probabilities for one segment embedding.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(z)?.probabilities)
    }

    pub fn predict_image<S: AsRef<[f64]>>(&self, segments: &[S]) -> Result<Prediction> {
        self.predict_image_observed(segments, |_, _| {})
    }

    /// [`predict_image`](Self::predict_image), handing every segment trace to
    /// `observer` before it is folded into the decision and explanation.
    pub fn predict_image_observed<S: AsRef<[f64]>>(
        &self,
        segments: &[S],
        mut observer: impl FnMut(usize, &SegmentTrace),
    ) -> Result<Prediction> {
        if segments.is_empty() {
            return Err(RbfError::EmptySegments);
        }
        let traces = segments
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let t = self.trace(z.as_ref())?;
                observer(i, &t);
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;

        let image_probabilities = average_probabilities(&traces);
        let predicted_class = argmax(&image_probabilities).expect("at least one class");
        let per_segment = traces
            .into_iter()
            .enumerate()
            .map(|(segment_index, t)| {
                let ordinal = argmax(&t.activations).expect("at least one prototype");
                let proto = &self.prototypes.prototypes[ordinal];
                SegmentExplanation {
                    segment_index,
                    top_prototype: TopPrototype {
                        ordinal,
                        activation: t.activations[ordinal],
                        class_index: proto.class_index,
                        source_segment: proto.source_segment.clone(),
                    },
                    activations: t.activations,
                    probabilities: t.probabilities,
                }
            })
            .collect();
        Ok(Prediction {
            predicted_class,
            probabilities: image_probabilities.clone(),
            explanation: Explanation {
                per_segment,
                image_probabilities,
                predicted_class,
            },
        })
    }

    /// The explanation attached to [`predict_image`](Self::predict_image).
    pub fn explain<S: AsRef<[f64]>>(&self, segments: &[S]) -> Result<Explanation> {
        Ok(self.predict_image(segments)?.explanation)
    }
}
