//! Anomaly clustering: Gaussian mixtures with BIC selection, k-means,
//! DBSCAN, agglomerative clustering and self-organizing maps.

mod agglomerative;
mod dbscan;
mod gmm;
mod kmeans;
mod som;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use agglomerative::{agglomerative, Linkage};
pub use dbscan::{dbscan, noise_as_singletons, DbscanLabels};
pub use gmm::{fit_gmm, select_gmm, select_gmm_with, EmOptions, GmmModel, GmmSelection, SelectionEntry, VARIANCE_FLOOR};
pub use kmeans::{kmeans, kmeans_plus_plus, KMeansFit};
pub use som::{som_assign, som_fit, Schedule, SomGrid};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Renumbers labels `0, 1, ...` in order of first occurrence.
pub fn relabel_by_first_appearance<L: Eq + std::hash::Hash + Copy>(labels: &[L]) -> Vec<usize> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    #[default]
    Gmm,
    Kmeans,
    Dbscan,
    Agglomerative,
    Som,
}

impl ClusterMethod {
    pub const ALL: [ClusterMethod; 5] = [
        ClusterMethod::Gmm,
        ClusterMethod::Kmeans,
        ClusterMethod::Dbscan,
        ClusterMethod::Agglomerative,
        ClusterMethod::Som,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ClusterMethod::Gmm => "gmm",
            ClusterMethod::Kmeans => "kmeans",
            ClusterMethod::Dbscan => "dbscan",
            ClusterMethod::Agglomerative => "agglomerative",
            ClusterMethod::Som => "som",
        }
    }
}

impl std::str::FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClusterMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown clustering method '{s}'")))
    }
}

/// Hyperparameters for every method; each method reads its own fields.
/// `k` fixes the cluster count for the non-mixture methods (and for the
/// mixture when set); otherwise the mixture picks it by BIC over
/// `k_min..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub em: EmOptions,
    pub kmeans_max_iter: usize,
    pub eps: f64,
    pub min_pts: usize,
    pub linkage: Linkage,
    pub som_epochs: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: None,
            k_min: 1,
            k_max: 8,
            restarts: 3,
            em: EmOptions::default(),
            kmeans_max_iter: 300,
            eps: 1.0,
            min_pts: 5,
            linkage: Linkage::Ward,
            som_epochs: 50,
            seed: 0,
        }
    }
}

/// Hard labels, member-mean centroids and, for mixtures, the BIC trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Clustering<T> {
    pub method: ClusterMethod,
    pub labels: Vec<usize>,
    pub centroids: Matrix<T>,
    pub selection: Vec<SelectionEntry>,
    /// Points DBSCAN left as noise (each is its own cluster in `labels`).
    pub noise: Vec<bool>,
}

impl<T: Scalar> Clustering<T> {
    pub fn num_clusters(&self) -> usize {
        self.centroids.rows()
    }
}

/// Mean of the rows in every cluster `0..k`.
pub fn member_means<T: Scalar>(x: &Matrix<T>, labels: &[usize]) -> Matrix<T> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sums = Matrix::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (r, &l) in x.iter_rows().zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums.row_mut(l).iter_mut().zip(r) {
            *s += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            let c = T::of_usize(c);
            sums.row_mut(j).iter_mut().for_each(|s| *s /= c);
        }
    }
    sums
}

fn required_k(cfg: &ClusterConfig, method: ClusterMethod) -> Result<usize> {
    cfg.k.ok_or_else(|| {
        Error::InvalidArgument(format!("method '{}' needs an explicit cluster count", method.name()))
    })
}

/// Clusters abnormal events with `method`. Fewer than two events yield a
/// single cluster (or none for empty input).
pub fn cluster_anomalies<T: Scalar>(x: &Matrix<T>, method: ClusterMethod, cfg: &ClusterConfig) -> Result<Clustering<T>> {
    let n = x.rows();
    let done = |labels: Vec<usize>, selection: Vec<SelectionEntry>, noise: Vec<bool>| {
        let labels = relabel_by_first_appearance(&labels);
        Clustering {
            method,
            centroids: member_means(x, &labels),
            labels,
            selection,
            noise,
        }
    };
    if n < 2 {
        return Ok(done(vec![0; n], vec![], vec![false; n]));
    }
    let out = match method {
        ClusterMethod::Gmm => {
            let (lo, hi) = match cfg.k {
                Some(k) => (k, k),
                None => (cfg.k_min, cfg.k_max.min(n)),
            };
            let sel = select_gmm_with(x, lo.min(hi), hi, cfg.restarts, cfg.seed, &cfg.em)?;
            done(sel.labels, sel.trace, vec![false; n])
        }
        ClusterMethod::Kmeans => {
            let k = required_k(cfg, method)?.min(n);
            done(kmeans(x, k, cfg.kmeans_max_iter, cfg.seed)?.labels, vec![], vec![false; n])
        }
        ClusterMethod::Dbscan => {
            let raw = dbscan(x, cfg.eps, cfg.min_pts)?;
            let noise = raw.iter().map(Option::is_none).collect();
            done(noise_as_singletons(&raw), vec![], noise)
        }
        ClusterMethod::Agglomerative => {
            let k = required_k(cfg, method)?.min(n);
            done(agglomerative(x, k, cfg.linkage)?, vec![], vec![false; n])
        }
        ClusterMethod::Som => {
            let k = required_k(cfg, method)?;
            let grid = som_fit(x, &SomGrid::new(k, 1, x.cols())?, cfg.som_epochs, cfg.seed)?;
            done(som_assign(&grid, x)?, vec![], vec![false; n])
        }
    };
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabel {
    pub id: String,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub method: ClusterMethod,
    pub config: ClusterConfig,
    pub labels: Vec<ClusterLabel>,
    pub centroids: Vec<Vec<f64>>,
    pub selection: Vec<SelectionEntry>,
}

impl ClusterReport {
    pub fn build<T: Scalar>(ids: &[String], c: &Clustering<T>, config: &ClusterConfig) -> Result<Self> {
        if ids.len() != c.labels.len() {
            return Err(Error::Shape("ids and labels differ in length".into()));
        }
        Ok(Self {
            method: c.method,
            config: config.clone(),
            labels: ids
                .iter()
                .zip(&c.labels)
                .map(|(id, &cluster)| ClusterLabel {
                    id: id.clone(),
                    cluster,
                })
                .collect(),
            centroids: c
                .centroids
                .iter_rows()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
            selection: c.selection.clone(),
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    /// Event ids per cluster, in label order.
    pub fn members(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for l in &self.labels {
            out[l.cluster].push(l.id.clone());
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::persist::save_document(path, "cluster_report", self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::persist::load_document(path, "cluster_report")
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// `k` isotropic blobs in `d` dimensions, centers `spacing` apart along axes.
    pub(crate) fn blobs(k: usize, d: usize, per: usize, spacing: f64, seed: u64) -> (Matrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(k * per * d);
        let mut truth = Vec::with_capacity(k * per);
        for c in 0..k {
            for _ in 0..per {
                for j in 0..d {
                    let center = if j == c % d { spacing * (1 + c / d) as f64 } else { 0.0 };
                    data.push(center + rng.sample::<f64, _>(StandardNormal));
                }
                truth.push(c);
            }
        }
        (Matrix::from_vec(k * per, d, data).unwrap(), truth)
    }

    /// Two tight 2-D blobs, 30 points each, twelve units apart.
    pub(crate) fn two_blobs(seed: u64) -> (Matrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![];
        let mut truth = vec![];
        for (c, cx) in [-6.0, 6.0].iter().enumerate() {
            for _ in 0..30 {
                data.push(cx + 0.5 * rng.sample::<f64, _>(StandardNormal));
                data.push(0.5 * rng.sample::<f64, _>(StandardNormal));
                truth.push(c);
            }
        }
        (Matrix::from_vec(60, 2, data).unwrap(), truth)
    }

    #[test]
    fn relabeling_follows_first_appearance() {
        assert_eq!(relabel_by_first_appearance(&[7, 7, 3, 9, 3]), vec![0, 0, 1, 2, 1]);
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let (x, _) = two_blobs(3);
        let cfg = ClusterConfig {
            k: Some(2),
            eps: 2.0,
            min_pts: 3,
            seed: 5,
            ..Default::default()
        };
        let direct_gmm = select_gmm_with(&x, 2, 2, cfg.restarts, cfg.seed, &cfg.em).unwrap();
        let c = cluster_anomalies(&x, ClusterMethod::Gmm, &cfg).unwrap();
        assert_eq!(c.labels, relabel_by_first_appearance(&direct_gmm.labels));
        let c = cluster_anomalies(&x, ClusterMethod::Kmeans, &cfg).unwrap();
        assert_eq!(c.labels, relabel_by_first_appearance(&kmeans(&x, 2, 300, 5).unwrap().labels));
        let c = cluster_anomalies(&x, ClusterMethod::Dbscan, &cfg).unwrap();
        assert_eq!(c.labels, relabel_by_first_appearance(&noise_as_singletons(&dbscan(&x, 2.0, 3).unwrap())));
        let c = cluster_anomalies(&x, ClusterMethod::Agglomerative, &cfg).unwrap();
        assert_eq!(c.labels, agglomerative(&x, 2, Linkage::Ward).unwrap());
        let grid = som_fit(&x, &SomGrid::new(2, 1, 2).unwrap(), 50, 5).unwrap();
        let c = cluster_anomalies(&x, ClusterMethod::Som, &cfg).unwrap();
        assert_eq!(c.labels, relabel_by_first_appearance(&som_assign(&grid, &x).unwrap()));
    }

    #[test]
    fn default_method_is_gmm_and_single_event_is_one_cluster() {
        assert_eq!(ClusterMethod::default(), ClusterMethod::Gmm);
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let c = cluster_anomalies(&x, ClusterMethod::Gmm, &ClusterConfig::default()).unwrap();
        assert_eq!(c.labels, vec![0]);
        assert_eq!(c.centroids.row(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn report_round_trip() {
        let (x, _) = two_blobs(3);
        let cfg = ClusterConfig::default();
        let c = cluster_anomalies(&x, ClusterMethod::Gmm, &cfg).unwrap();
        let ids: Vec<String> = (0..60).map(|i| format!("e{i}")).collect();
        let r = ClusterReport::build(&ids, &c, &cfg).unwrap();
        assert_eq!(r.num_clusters(), 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clusters.json");
        r.save(&p).unwrap();
        assert_eq!(ClusterReport::load(&p).unwrap(), r);
    }
}
