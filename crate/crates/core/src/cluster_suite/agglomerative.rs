use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{squared_distance, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Ward,
    Average,
    Single,
}

/// Bottom-up merging with Lance-Williams updates until `k` clusters remain.
/// Equal merge costs resolve to the pair with the smallest indices. Labels
/// are numbered by first appearance.
pub fn agglomerative<T: Scalar>(x: &Matrix<T>, k: usize, linkage: Linkage) -> Result<Vec<usize>> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot cut {n} points into {k} clusters")));
    }
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d2 = squared_distance(x.row(i), x.row(j)).as_f64();
            let d = match linkage {
                Linkage::Ward => d2,
                Linkage::Average | Linkage::Single => d2.sqrt(),
            };
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut size = vec![1usize; n];
    let mut active: Vec<bool> = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut clusters = n;
    while clusters > k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && dist[i * n + j] < best.0 {
                    best = (dist[i * n + j], i, j);
                }
            }
        }
        let (dij, i, j) = best;
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for m in 0..n {
            if !active[m] || m == i || m == j {
                continue;
            }
            let (dim, djm) = (dist[i * n + m], dist[j * n + m]);
            let nm = size[m] as f64;
            let updated = match linkage {
                Linkage::Ward => ((ni + nm) * dim + (nj + nm) * djm - nm * dij) / (ni + nj + nm),
                Linkage::Average => (ni * dim + nj * djm) / (ni + nj),
                Linkage::Single => dim.min(djm),
            };
            dist[i * n + m] = updated;
            dist[m * n + i] = updated;
        }
        size[i] += size[j];
        active[j] = false;
        for o in owner.iter_mut() {
            if *o == j {
                *o = i;
            }
        }
        clusters -= 1;
    }
    Ok(super::relabel_by_first_appearance(&owner))
}
