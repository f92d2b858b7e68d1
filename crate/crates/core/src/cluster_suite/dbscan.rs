use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{squared_distance, Scalar};

/// Cluster label per point; `None` marks noise.
pub type DbscanLabels = Vec<Option<usize>>;

/// Density-based clustering. Points are visited in index order, so a
/// border point reachable from several clusters joins the first to reach it.
pub fn dbscan<T: Scalar>(x: &Matrix<T>, eps: f64, min_pts: usize) -> Result<DbscanLabels> {
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::InvalidArgument(format!(
            "dbscan needs eps > 0 and min_pts >= 1, got ({eps}, {min_pts})"
        )));
    }
    let n = x.rows();
    let eps2 = T::of(eps * eps);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| squared_distance(x.row(i), x.row(j)) <= eps2)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels: DbscanLabels = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if labels[start].is_some() || !core[start] {
            continue;
        }
        let c = next;
        next += 1;
        labels[start] = Some(c);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            if !core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(c);
                    queue.push_back(q);
                }
            }
        }
    }
    Ok(labels)
}

/// Total labeling with every noise point in its own cluster, numbered after
/// the real clusters.
pub fn noise_as_singletons(labels: &[Option<usize>]) -> Vec<usize> {
    let mut next = labels.iter().flatten().max().map_or(0, |m| m + 1);
    labels
        .iter()
        .map(|l| {
            l.unwrap_or_else(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}
