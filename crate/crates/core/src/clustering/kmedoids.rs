use ndarray::ArrayView2;

use super::{euclidean, ClusteringError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    /// Row indices into the input matrix, one per cluster.
    pub medoid_rows: Vec<usize>,
    /// Point → medoid ordinal (index into `medoid_rows`).
    pub assignment: Vec<usize>,
    /// Sum of distances from each point to its assigned medoid.
    pub total_cost: f64,
}

#[allow(clippy::needless_range_loop)] // symmetric fill reads clearest with indices
pub(crate) fn distance_matrix(points: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = euclidean(points.row(i), points.row(j));
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Nearest and second-nearest medoid ordinal/distance for each point.
struct Nearest {
    near: Vec<(usize, f64)>,
    second: Vec<f64>,
}

fn nearest(dist: &[Vec<f64>], medoids: &[usize]) -> Nearest {
    let n = dist.len();
    let mut near = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for row in dist.iter().take(n) {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut next = f64::INFINITY;
        for (m, &r) in medoids.iter().enumerate() {
            let d = row[r];
            if d < best.1 {
                next = best.1;
                best = (m, d);
            } else if d < next {
                next = d;
            }
        }
        near.push(best);
        second.push(next);
    }
    Nearest { near, second }
}

/// Greedy BUILD: first the 1-medoid optimum, then repeatedly the point with
/// the largest cost reduction. Ties go to the lowest row index.
fn build(dist: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = dist.len();
    let first = (0..n)
        .map(|i| (i, dist[i].iter().sum::<f64>()))
        .fold((0, f64::INFINITY), |best, (i, c)| if c < best.1 { (i, c) } else { best });
    let mut medoids = vec![first.0];
    let mut is_medoid = vec![false; n];
    is_medoid[first.0] = true;
    let mut dnear: Vec<f64> = (0..n).map(|j| dist[j][first.0]).collect();

    while medoids.len() < k {
        let mut best = (usize::MAX, -1.0);
        for c in (0..n).filter(|&c| !is_medoid[c]) {
            let gain: f64 = (0..n).map(|j| (dnear[j] - dist[j][c]).max(0.0)).sum();
            if gain > best.1 {
                best = (c, gain);
            }
        }
        let c = best.0;
        medoids.push(c);
        is_medoid[c] = true;
        for j in 0..n {
            dnear[j] = dnear[j].min(dist[j][c]);
        }
    }
    medoids
}

/// Cost change from replacing medoid ordinal `m` with point `candidate`.
fn swap_delta(dist: &[Vec<f64>], nn: &Nearest, m: usize, candidate: usize) -> f64 {
    let mut delta = 0.0;
    for (j, row) in dist.iter().enumerate() {
        let (near_m, near_d) = nn.near[j];
        let dc = row[candidate];
        let new = if near_m == m { dc.min(nn.second[j]) } else { dc.min(near_d) };
        delta += new - near_d;
    }
    delta
}

/// PAM K-Medoids (BUILD then best-improvement SWAP) under Euclidean
/// distance.
///
/// The result is a 1-swap local optimum: no exchange of a medoid with a
/// non-medoid lowers `total_cost`. Among equally good swaps the lowest
/// candidate row, then the lowest medoid ordinal, wins, so the output is a
/// pure function of the input.
pub fn kmedoids(points: ArrayView2<'_, f64>, k: usize) -> Result<ClusteringResult> {
    let n = points.nrows();
    if k == 0 {
        return Err(ClusteringError::InvalidK { k, n });
    }
    if k > n {
        return Err(ClusteringError::InvalidK { k, n });
    }
    if let Some(((row, col), _)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(ClusteringError::NonFinite { row, col });
    }

    let dist = distance_matrix(points);
    let mut medoids = build(&dist, k);
    let mut is_medoid = vec![false; n];
    medoids.iter().for_each(|&m| is_medoid[m] = true);

    let mut nn = nearest(&dist, &medoids);
    loop {
        let cost: f64 = nn.near.iter().map(|p| p.1).sum();
        let threshold = -1e-12 * cost.max(1.0);
        let mut best = (0.0, usize::MAX, usize::MAX);
        for c in (0..n).filter(|&c| !is_medoid[c]) {
            for m in 0..k {
                let d = swap_delta(&dist, &nn, m, c);
                if d < best.0 {
                    best = (d, m, c);
                }
            }
        }
        if best.0 >= threshold {
            break;
        }
        let (_, m, c) = best;
        is_medoid[medoids[m]] = false;
        is_medoid[c] = true;
        medoids[m] = c;
        nn = nearest(&dist, &medoids);
    }

    Ok(assign(&dist, medoids))
}

/// Assigns every point to its nearest medoid (lowest ordinal on ties) and
/// sums the cost.
fn assign(dist: &[Vec<f64>], medoid_rows: Vec<usize>) -> ClusteringResult {
    let nn = nearest(dist, &medoid_rows);
    let assignment = nn.near.iter().map(|p| p.0).collect();
    let total_cost = nn.near.iter().map(|p| p.1).sum();
    ClusteringResult {
        medoid_rows,
        assignment,
        total_cost,
    }
}

/// Total cost of an arbitrary medoid choice.
pub fn medoid_cost(points: ArrayView2<'_, f64>, medoid_rows: &[usize]) -> f64 {
    (0..points.nrows())
        .map(|i| {
            medoid_rows
                .iter()
                .map(|&m| euclidean(points.row(i), points.row(m)))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}
