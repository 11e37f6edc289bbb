use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{Result, TrainingError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Additive `N(0, amplitude²)`.
    Gaussian,
    /// Additive `U(−amplitude, amplitude)`.
    Simple,
}

/// Perturbs every coordinate independently. Amplitude 0 returns `z`
/// unchanged without touching the generator.
pub fn augment_noise<R: Rng + ?Sized>(z: &[f64], mode: NoiseMode, amplitude: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(TrainingError::InvalidArgument(format!("noise amplitude must be >= 0, got {amplitude}")));
    }
    if amplitude == 0.0 {
        return Ok(z.to_vec());
    }
    Ok(match mode {
        NoiseMode::Gaussian => {
            let d = Normal::new(0.0, amplitude).expect("finite positive std");
            z.iter().map(|v| v + d.sample(rng)).collect()
        }
        NoiseMode::Simple => {
            let d = Uniform::new_inclusive(-amplitude, amplitude).expect("finite bounds");
            z.iter().map(|v| v + d.sample(rng)).collect()
        }
    })
}

/// Convex combination of two examples and their label distributions.
pub fn augment_mixup(zi: &[f64], zj: &[f64], yi: &[f64], yj: &[f64], lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TrainingError::InvalidArgument(format!("mixup lambda must lie in [0, 1], got {lambda}")));
    }
    if zi.len() != zj.len() || yi.len() != yj.len() {
        return Err(TrainingError::ShapeMismatch("mixup operands differ in length".into()));
    }
    let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter()
            .zip(b)
            .map(|(&a, &b)| {
                // keep the result inside [min, max] despite rounding
                let v = lambda * a + (1.0 - lambda) * b;
                v.clamp(a.min(b), a.max(b))
            })
            .collect()
    };
    Ok((mix(zi, zj), mix(yi, yj)))
}

/// `x + u·(neighbor − x)`, clamped per coordinate to the segment's box.
pub fn smote_interpolate(x: &[f64], neighbor: &[f64], u: f64) -> Vec<f64> {
    x.iter()
        .zip(neighbor)
        .map(|(&a, &b)| (a + u * (b - a)).clamp(a.min(b), a.max(b)))
        .collect()
}

/// Generates exactly `target_count` synthetic rows by interpolating random
/// minority rows toward one of their nearest minority neighbours.
pub fn smote_oversample<R: Rng + ?Sized>(
    minority: ArrayView2<'_, f64>,
    target_count: usize,
    neighbor_count: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let (n, d) = minority.dim();
    if n < 2 {
        return Err(TrainingError::InvalidArgument(format!("SMOTE needs at least 2 minority rows, got {n}")));
    }
    if neighbor_count == 0 {
        return Err(TrainingError::InvalidArgument("SMOTE neighbor_count must be >= 1".into()));
    }
    let k = neighbor_count.min(n - 1);
    let rows: Vec<Vec<f64>> = minority.rows().into_iter().map(|r| r.to_vec()).collect();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d2: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2, j)
                })
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();

    let mut out = Array2::zeros((target_count, d));
    for mut row in out.rows_mut() {
        let i = rng.random_range(0..n);
        let j = neighbors[i][rng.random_range(0..k)];
        let u: f64 = rng.random();
        for (o, v) in row.iter_mut().zip(smote_interpolate(&rows[i], &rows[j], u)) {
            *o = v;
        }
    }
    Ok(out)
}
