use std::cmp::Ordering;

use super::cloud::PointCloud;
use crate::error::{Error, Result};

/// Row-major neighbor table: `rows × k` point indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighbors {
    k: usize,
    indices: Vec<usize>,
}

impl Neighbors {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    /// All rows concatenated.
    pub fn flat(&self) -> &[usize] {
        &self.indices
    }
}

/// Exhaustive k-nearest-neighbor search over flat `dim`-dimensional points.
///
/// Each row lists the `k` nearest other points by Euclidean distance,
/// ascending, with ties going to the lower index. `query` restricts which
/// rows are produced (in the given order); `None` means every point.
pub fn knn_points(points: &[f64], dim: usize, k: usize, query: Option<&[usize]>) -> Result<Neighbors> {
    let n = if dim == 0 { 0 } else { points.len() / dim };
    if k < 1 || k + 1 > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside [1, N-1] for N = {n}"
        )));
    }
    let all: Vec<usize>;
    let query = match query {
        Some(q) => {
            if let Some(bad) = q.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidArgument(format!("query index {bad} >= {n}")));
            }
            q
        }
        None => {
            all = (0..n).collect();
            &all
        }
    };
    let mut indices = Vec::with_capacity(query.len() * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for &i in query {
        let pi = &points[i * dim..(i + 1) * dim];
        cand.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            let pj = &points[j * dim..(j + 1) * dim];
            let d2: f64 = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum();
            cand.push((d2, j));
        }
        let by = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by);
        }
        let head = &mut cand[..k];
        head.sort_unstable_by(by);
        indices.extend(head.iter().map(|&(_, j)| j));
    }
    Ok(Neighbors { k, indices })
}

/// k-NN on 3-D coordinates only.
pub fn knn(coords: &[[f64; 3]], k: usize, query: Option<&[usize]>) -> Result<Neighbors> {
    let flat: Vec<f64> = coords.iter().flatten().copied().collect();
    knn_points(&flat, 3, k, query)
}

/// Fraction of `(point, neighbor slot)` pairs whose coordinate neighbor
/// changed between the clean and perturbed clouds.
pub fn neighborhood_change_rate(clean: &PointCloud, perturbed: &PointCloud, k: usize) -> Result<f64> {
    if clean.len() != perturbed.len() {
        return Err(Error::Shape(format!(
            "clean has {} points, perturbed {}",
            clean.len(),
            perturbed.len()
        )));
    }
    let a = knn(clean.coords(), k, None)?;
    let b = knn(perturbed.coords(), k, None)?;
    let changed = a
        .flat()
        .iter()
        .zip(b.flat())
        .filter(|(x, y)| x != y)
        .count();
    Ok(changed as f64 / a.flat().len() as f64)
}
