//! Deterministic point-set primitives: kNN centers, farthest point sampling
//! and inverse-distance interpolation. All searches are exhaustive.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Default neighborhood size for kNN centers.
pub const DEFAULT_KNN: usize = 16;
/// Default neighbor count for interpolation.
pub const DEFAULT_IDW_K: usize = 3;
/// Regularizer in the inverse-squared-distance weights.
pub const IDW_EPS: f64 = 1e-8;

#[inline]
pub fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Indices of the `k` nearest points to `query`, nearest first; equal
/// distances resolve to the lower index.
pub fn knn_indices(points: &[[f64; 3]], query: [f64; 3], k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, &p)| (dist2(p, query), i)).collect();
    let k = k.min(order.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < order.len() {
        order.select_nth_unstable_by(k, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    order.into_iter().map(|(_, i)| i).collect()
}

/// Centroid of each point's `k` nearest neighbors (the point itself
/// included). `k` is clamped to `[1, N]`.
pub fn knn_centers(points: &[[f64; 3]], k: usize) -> Result<Vec<[f64; 3]>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("knn_centers"));
    }
    let k = k.clamp(1, points.len());
    Ok(points
        .iter()
        .map(|&q| {
            let nn = knn_indices(points, q, k);
            let mut c = [0.0; 3];
            for i in &nn {
                for (cv, pv) in c.iter_mut().zip(points[*i]) {
                    *cv += pv;
                }
            }
            c.map(|v| v / k as f64)
        })
        .collect())
}

/// Greedy farthest point sampling starting at `seed_index`; returns indices
/// in selection order. Distance ties resolve to the lower index.
pub fn fps(points: &[[f64; 3]], m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m > n {
        return Err(Error::Argument(alloc::format!("fps: m={m} exceeds N={n}")));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if seed_index >= n {
        return Err(Error::Argument(alloc::format!("fps: seed {seed_index} out of range for N={n}")));
    }
    let mut selected = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut current = seed_index;
    for _ in 0..m {
        selected.push(current);
        taken[current] = true;
        let c = points[current];
        let mut best = None::<(f64, usize)>;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = dist2(points[i], c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if best.is_none_or(|(bd, _)| min_d[i] > bd) {
                best = Some((min_d[i], i));
            }
        }
        match best {
            Some((_, i)) => current = i,
            None => break,
        }
    }
    Ok(selected)
}

/// Neighbor indices and normalized weights (`k` per query) for
/// inverse-squared-distance interpolation. A query closer than 1e-12 to a
/// source point takes that source with weight one.
pub fn idw_weights(src: &[[f64; 3]], queries: &[[f64; 3]], k: usize) -> Result<(Vec<u32>, Vec<f64>, usize)> {
    if src.is_empty() {
        return Err(Error::EmptyInput("idw_interpolate"));
    }
    let k = k.clamp(1, src.len());
    let mut idx = Vec::with_capacity(queries.len() * k);
    let mut weights = Vec::with_capacity(queries.len() * k);
    for &q in queries {
        let nn = knn_indices(src, q, k);
        let d2: Vec<f64> = nn.iter().map(|&i| dist2(src[i], q)).collect();
        if d2[0] < 1e-24 {
            for (j, &i) in nn.iter().enumerate() {
                idx.push(i as u32);
                weights.push(if j == 0 { 1.0 } else { 0.0 });
            }
            continue;
        }
        let raw: Vec<f64> = d2.iter().map(|d| 1.0 / (d + IDW_EPS)).collect();
        let total: f64 = raw.iter().sum();
        for (&i, r) in nn.iter().zip(raw) {
            idx.push(i as u32);
            weights.push(r / total);
        }
    }
    Ok((idx, weights, k))
}

/// Interpolates source features at query positions.
pub fn idw_interpolate(src: &[[f64; 3]], features: &Matrix, queries: &[[f64; 3]], k: usize) -> Result<Matrix> {
    if features.rows() != src.len() {
        return Err(Error::shape(
            "idw_interpolate",
            alloc::format!("{} sources but {} feature rows", src.len(), features.rows()),
        ));
    }
    let (idx, weights, k) = idw_weights(src, queries, k)?;
    let mut out = Matrix::zeros(queries.len(), features.cols());
    for q in 0..queries.len() {
        for j in 0..k {
            let w = weights[q * k + j];
            let row = features.row(idx[q * k + j] as usize).to_vec();
            for (o, v) in out.row_mut(q).iter_mut().zip(row) {
                *o += w * v;
            }
        }
    }
    Ok(out)
}
