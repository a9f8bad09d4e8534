//! Lloyd's K-means with deterministic empty-cluster recovery.

use crate::error::Error;
use crate::tensor::{Scalar, Tensor};
use crate::Result;

/// Outcome of one K-means run. `wcss` holds the within-cluster sum of
/// squares measured at each assignment step; Lloyd guarantees it is
/// non-increasing.
#[derive(Clone, Debug)]
pub struct KmeansResult<T> {
    pub centroids: Tensor<T>, // [K, D]
    pub assignments: Vec<usize>,
    pub wcss: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd iterations from the given initial centroids: assign each point to
/// its nearest centroid (squared Euclidean, ties to the lowest index),
/// recompute means, until the assignment reaches a fixpoint, centroid
/// movement drops below `tol`, or `max_iters` passes.
///
/// A cluster left empty after assignment is re-seeded at the point farthest
/// from its nearest centroid (never silently dropped).
pub fn kmeans<T: Scalar>(
    points: &Tensor<T>,
    k: usize,
    init_centroids: &Tensor<T>,
    max_iters: usize,
    tol: f64,
) -> Result<KmeansResult<T>> {
    if points.rank() != 2 {
        return Err(Error::shape(format!(
            "kmeans wants [M,D] points, got {:?}",
            points.shape()
        )));
    }
    let (m, d) = (points.shape()[0], points.shape()[1]);
    if m < k {
        return Err(Error::contract(format!(
            "kmeans needs at least K={k} points, got {m}"
        )));
    }
    if init_centroids.shape() != [k, d] {
        return Err(Error::shape(format!(
            "init centroids shape {:?}, want [{k}, {d}]",
            init_centroids.shape()
        )));
    }

    let pts = points.data();
    let mut centroids: Vec<f64> = init_centroids.data().iter().map(|v| v.to_f64()).collect();
    let mut assignments = vec![0usize; m];
    let mut wcss_history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;

        // assignment step
        let mut changed = false;
        let mut wcss = 0.0;
        let mut dist_to_own = vec![0.0f64; m];
        for i in 0..m {
            let p = &pts[i * d..(i + 1) * d];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let cen = &centroids[c * d..(c + 1) * d];
                let mut acc = 0.0;
                for (pv, cv) in p.iter().zip(cen.iter()) {
                    let diff = pv.to_f64() - cv;
                    acc += diff * diff;
                }
                if acc < best_d {
                    best_d = acc;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
            dist_to_own[i] = best_d;
            wcss += best_d;
        }

        // empty-cluster recovery: seed at the point farthest from its
        // nearest centroid, one point per empty cluster
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..m)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    dist_to_own[a]
                        .partial_cmp(&dist_to_own[b])
                        .unwrap()
                        .then(b.cmp(&a)) // ties to the lowest index
                })
                .ok_or_else(|| {
                    Error::contract("cannot recover empty cluster: all clusters singleton")
                })?;
            counts[assignments[far]] -= 1;
            counts[c] += 1;
            wcss -= dist_to_own[far];
            assignments[far] = c;
            dist_to_own[far] = 0.0;
            centroids[c * d..(c + 1) * d]
                .iter_mut()
                .zip(pts[far * d..(far + 1) * d].iter())
                .for_each(|(cv, pv)| *cv = pv.to_f64());
            reseeded = true;
            changed = true;
        }

        wcss_history.push(wcss);

        // update step
        let mut sums = vec![0.0f64; k * d];
        for i in 0..m {
            let base = assignments[i] * d;
            for (j, pv) in pts[i * d..(i + 1) * d].iter().enumerate() {
                sums[base + j] += pv.to_f64();
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            for j in 0..d {
                let new = sums[c * d + j] * inv;
                movement = movement.max((new - centroids[c * d + j]).abs());
                centroids[c * d + j] = new;
            }
        }

        if (!changed || movement < tol) && !reseeded {
            break;
        }
    }

    let centroids = Tensor::from_vec(&[k, d], centroids.iter().map(|&v| T::from_f64(v)).collect())?;
    Ok(KmeansResult {
        centroids,
        assignments,
        wcss: wcss_history,
        iterations,
    })
}

/// Squared Euclidean distance between a point and each centroid row;
/// returns the index of the nearest (ties to the lowest index).
pub(crate) fn nearest_centroid<T: Scalar>(point: &[T], centroids: &Tensor<T>) -> usize {
    let d = centroids.shape()[1];
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cen) in centroids.data().chunks_exact(d).enumerate() {
        let mut acc = 0.0;
        for (pv, cv) in point.iter().zip(cen.iter()) {
            let diff = pv.to_f64() - cv.to_f64();
            acc += diff * diff;
        }
        if acc < best_d {
            best_d = acc;
            best = c;
        }
    }
    best
}
