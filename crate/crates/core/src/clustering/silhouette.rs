use std::collections::BTreeMap;

use ndarray::ArrayView2;

use super::{kmedoids::distance_matrix, ClusteringError, Result};

/// Per-point silhouette values `(b − a) / max(a, b)`.
///
/// Cluster ids in `assignment` are arbitrary labels. Points in singleton
/// clusters score 0, as do points with `a = b = 0`.
pub fn silhouette_samples(points: ArrayView2<'_, f64>, assignment: &[usize]) -> Result<Vec<f64>> {
    let n = points.nrows();
    if assignment.len() != n {
        return Err(ClusteringError::ShapeMismatch {
            points: n,
            labels: assignment.len(),
        });
    }
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in assignment {
        *sizes.entry(c).or_default() += 1;
    }
    if sizes.len() < 2 {
        return Err(ClusteringError::SingleCluster);
    }
    let slot: BTreeMap<usize, usize> = sizes.keys().enumerate().map(|(i, &c)| (c, i)).collect();
    let counts: Vec<usize> = sizes.values().copied().collect();

    let dist = distance_matrix(points);
    let mut out = Vec::with_capacity(n);
    let mut sums = vec![0.0; counts.len()];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[slot[&assignment[j]]] += dist[i][j];
        }
        let own = slot[&assignment[i]];
        if counts[own] == 1 {
            out.push(0.0);
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..counts.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        out.push(if denom > 0.0 { (b - a) / denom } else { 0.0 });
    }
    Ok(out)
}

/// Mean silhouette over all points, in `[-1, 1]`.
pub fn silhouette(points: ArrayView2<'_, f64>, assignment: &[usize]) -> Result<f64> {
    let s = silhouette_samples(points, assignment)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}
