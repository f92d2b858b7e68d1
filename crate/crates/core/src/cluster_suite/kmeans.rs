use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{squared_distance, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KMeansFit<T> {
    pub labels: Vec<usize>,
    pub centroids: Matrix<T>,
    pub inertia: T,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<T>,
}

pub(crate) fn check_k<T: Scalar>(x: &Matrix<T>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if x.rows() < k {
        return Err(Error::Size(format!("{} points cannot form {k} clusters", x.rows())));
    }
    Ok(())
}

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
pub fn kmeans_plus_plus<T: Scalar>(x: &Matrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Result<Matrix<T>> {
    check_k(x, k)?;
    let n = x.rows();
    let mut centers = Matrix::zeros(k, x.cols());
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = x
        .iter_rows()
        .map(|r| squared_distance(r, centers.row(0)).as_f64())
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(x.row(pick));
        for (i, r) in x.iter_rows().enumerate() {
            d2[i] = d2[i].min(squared_distance(r, centers.row(c)).as_f64());
        }
    }
    Ok(centers)
}

/// Index of the nearest row of `centers`, ties to the lowest index, and the
/// squared distance to it.
pub(crate) fn nearest<T: Scalar>(point: &[T], centers: &Matrix<T>) -> (usize, T) {
    let mut best = (0, squared_distance(point, centers.row(0)));
    for j in 1..centers.rows() {
        let d = squared_distance(point, centers.row(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd iterations from a k-means++ start. Empty clusters are re-seeded at
/// the point farthest from its assigned centroid.
pub fn kmeans<T: Scalar>(x: &Matrix<T>, k: usize, max_iter: usize, seed: u64) -> Result<KMeansFit<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_plus_plus(x, k, &mut rng)?;
    lloyd(x, centers, max_iter)
}

pub(crate) fn lloyd<T: Scalar>(x: &Matrix<T>, mut centers: Matrix<T>, max_iter: usize) -> Result<KMeansFit<T>> {
    let (n, k) = (x.rows(), centers.rows());
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![T::zero(); n];
    let mut trace = Vec::new();
    let iters = max_iter.max(1);
    for it in 0..iters {
        let mut changed = false;
        for (i, r) in x.iter_rows().enumerate() {
            let (j, d) = nearest(r, &centers);
            changed |= labels[i] != j;
            labels[i] = j;
            dists[i] = d;
        }
        trace.push(dists.iter().copied().sum());
        if !changed || it + 1 == iters {
            break;
        }
        let mut sums: Matrix<T> = Matrix::zeros(k, x.cols());
        let mut counts = vec![0usize; k];
        for (r, &l) in x.iter_rows().zip(&labels) {
            counts[l] += 1;
            for (s, &v) in sums.row_mut(l).iter_mut().zip(r) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let c = T::of_usize(counts[j]);
                for (dst, &s) in centers.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *dst = s / c;
                }
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].partial_cmp(&dists[b]).unwrap().then(b.cmp(&a)))
                    .expect("nonempty");
                centers.row_mut(j).copy_from_slice(x.row(far));
                dists[far] = T::zero();
            }
        }
    }
    let inertia = *trace.last().expect("at least one assignment");
    Ok(KMeansFit {
        labels,
        centroids: centers,
        inertia,
        inertia_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster_suite::tests::two_blobs;
    use crate::eval_metrics::ari;

    #[test]
    fn single_cluster_is_the_mean() {
        let x = Matrix::from_vec(4, 2, vec![0.0, 0.0, 2.0, 0.0, 2.0, 4.0, 0.0, 4.0]).unwrap();
        let fit = kmeans(&x, 1, 10, 0).unwrap();
        assert_eq!(fit.centroids.row(0), &[1.0, 2.0]);
        assert_eq!(fit.labels, vec![0; 4]);
    }

    #[test]
    fn two_blobs_are_recovered() {
        let (x, truth) = two_blobs(7);
        let fit = kmeans(&x, 2, 100, 3).unwrap();
        assert_eq!(ari(&fit.labels, &truth).unwrap(), 1.0);
    }

    #[test]
    fn n_equals_k_has_zero_inertia() {
        let x = Matrix::from_vec(3, 1, vec![1.0, 5.0, 9.0]).unwrap();
        assert_eq!(kmeans(&x, 3, 10, 1).unwrap().inertia, 0.0);
        assert!(matches!(kmeans(&x, 4, 10, 1), Err(Error::Size(_))));
    }

    #[test]
    fn identical_points_do_not_break_seeding() {
        let x = Matrix::from_vec(5, 2, vec![1.0; 10]).unwrap();
        let fit = kmeans(&x, 3, 10, 0).unwrap();
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn empty_cluster_is_reseeded_at_farthest_point() {
        let x = Matrix::from_vec(4, 1, vec![0.0, 0.1, 0.2, 10.0]).unwrap();
        let start = Matrix::from_vec(2, 1, vec![0.1, 100.0]).unwrap();
        let fit = lloyd(&x, start.clone(), 1).unwrap();
        assert_eq!(fit.labels, vec![0; 4]);
        let fit = lloyd(&x, start, 10).unwrap();
        assert_eq!(fit.labels, vec![0, 0, 0, 1]);
    }
}
