//! Semi-supervised deep embedded clustering head: supervised centroid
//! initialization, Student-t soft assignment, sharpened targets, the KL
//! clustering loss and a latent-space pairwise constraint loss.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{check_finite_loss, epoch_order, MlpParams, Objective, OptimizerKind, OptimizerState};
use crate::data_model::{ConstraintKind, PairConstraintSet, TypeId};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{squared_distance, Scalar};

/// Minimum total soft mass a cluster may carry during training.
pub const DEGENERATE_MASS: f64 = 1e-8;

/// One centroid row per type, rows sorted by ascending type id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Centroids<T> {
    pub means: Matrix<T>,
    pub type_ids: Vec<TypeId>,
}

impl<T: Scalar> Centroids<T> {
    pub fn new(means: Matrix<T>, type_ids: Vec<TypeId>) -> Result<Self> {
        if means.rows() != type_ids.len() {
            return Err(Error::Shape(format!(
                "{} centroid rows for {} type ids",
                means.rows(),
                type_ids.len()
            )));
        }
        if type_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "centroid type ids must be strictly increasing".into(),
            ));
        }
        Ok(Self { means, type_ids })
    }

    pub fn k(&self) -> usize {
        self.type_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }
}

/// Row-stochastic responsibilities, `n x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment<T> {
    pub q: Matrix<T>,
}

/// Mean latent vector of every type in `types`, summed in event order.
pub fn init_centroids_supervised<T: Scalar>(z: &Matrix<T>, labels: &[TypeId], types: &[TypeId]) -> Result<Centroids<T>> {
    if labels.len() != z.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} latent rows",
            labels.len(),
            z.rows()
        )));
    }
    let mut sorted = types.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let slot: BTreeMap<TypeId, usize> = sorted.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let mut sums = Matrix::zeros(sorted.len(), z.cols());
    let mut counts = vec![0usize; sorted.len()];
    for (row, label) in z.iter_rows().zip(labels) {
        let j = *slot.get(label).ok_or_else(|| {
            Error::Initialization(format!("label {label} is not one of the base types"))
        })?;
        counts[j] += 1;
        for (s, &v) in sums.row_mut(j).iter_mut().zip(row) {
            *s += v;
        }
    }
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::Initialization(format!(
                "type {} has no events to initialize its centroid",
                sorted[j]
            )));
        }
        let n = T::of_usize(c);
        for s in sums.row_mut(j) {
            *s /= n;
        }
    }
    Centroids::new(sums, sorted)
}

fn kernel_row<T: Scalar>(z: &[T], mu: &Matrix<T>, out: &mut [T]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = T::one() / (T::one() + squared_distance(z, mu.row(j)));
    }
}

/// Student-t (one degree of freedom) soft assignment of latents to centroids.
pub fn soft_assign<T: Scalar>(z: &Matrix<T>, mu: &Centroids<T>) -> Result<SoftAssignment<T>> {
    if mu.k() < 1 {
        return Err(Error::InvalidArgument("soft assignment needs at least one centroid".into()));
    }
    if z.cols() != mu.dim() {
        return Err(Error::Shape(format!(
            "latents have dimension {}, centroids {}",
            z.cols(),
            mu.dim()
        )));
    }
    let k = mu.k();
    let mut q = Matrix::zeros(z.rows(), k);
    for i in 0..z.rows() {
        let row = q.row_mut(i);
        kernel_row(z.row(i), &mu.means, row);
        let s: T = row.iter().copied().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(SoftAssignment { q })
}

/// Sharpened targets `p_ij ∝ q_ij^2 / f_j` with cluster frequencies `f_j = Σ_i q_ij`.
pub fn target_distribution<T: Scalar>(q: &SoftAssignment<T>) -> Result<Matrix<T>> {
    let q = &q.q;
    let f = column_mass(q);
    if let Some(j) = f.iter().position(|&m| m <= T::zero()) {
        return Err(Error::DegenerateCluster {
            cluster: j,
            mass: 0.0,
        });
    }
    let mut p = Matrix::zeros(q.rows(), q.cols());
    for i in 0..q.rows() {
        let row = p.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            let qij = q.get(i, j);
            *v = qij * qij / f[j];
        }
        let s: T = row.iter().copied().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(p)
}

fn column_mass<T: Scalar>(q: &Matrix<T>) -> Vec<T> {
    let mut f = vec![T::zero(); q.cols()];
    for r in q.iter_rows() {
        for (fj, &v) in f.iter_mut().zip(r) {
            *fj += v;
        }
    }
    f
}

/// `KL(P || Q) = Σ_i Σ_j p_ij ln(p_ij / q_ij)` with `0 ln 0 = 0`.
pub fn kl_loss<T: Scalar>(p: &Matrix<T>, q: &Matrix<T>) -> Result<T> {
    if p.rows() != q.rows() || p.cols() != q.cols() {
        return Err(Error::Shape("P and Q shapes differ".into()));
    }
    let mut total = T::zero();
    for i in 0..p.rows() {
        for j in 0..p.cols() {
            let (pij, qij) = (p.get(i, j), q.get(i, j));
            if pij > T::zero() {
                if qij <= T::zero() {
                    return Err(Error::InfiniteDivergence { row: i, col: j });
                }
                total += pij * (pij / qij).ln();
            }
        }
    }
    Ok(total)
}

/// A constraint resolved to latent row indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowPair {
    pub a: usize,
    pub b: usize,
    pub kind: ConstraintKind,
}

/// Resolves id pairs against `rows` (event id to latent row).
pub fn resolve_pairs(set: &PairConstraintSet, rows: &HashMap<&str, usize>) -> Result<Vec<RowPair>> {
    Ok(set
        .resolve(rows)?
        .into_iter()
        .map(|(a, b, kind)| RowPair { a, b, kind })
        .collect())
}

/// Loss of one pair and its gradient with respect to `z_a` (the gradient for
/// `z_b` is the negation).
fn pair_term<T: Scalar>(za: &[T], zb: &[T], kind: ConstraintKind, margin: T, grad_a: Option<&mut Vec<T>>) -> T {
    let d2 = squared_distance(za, zb);
    match kind {
        ConstraintKind::MustLink => {
            if let Some(g) = grad_a {
                g.clear();
                g.extend(za.iter().zip(zb).map(|(&x, &y)| T::of(2.0) * (x - y)));
            }
            d2
        }
        ConstraintKind::CannotLink => {
            let d = d2.sqrt();
            let gap = margin - d;
            if let Some(g) = grad_a {
                g.clear();
                if gap > T::zero() && d > T::zero() {
                    let c = -T::of(2.0) * gap / d;
                    g.extend(za.iter().zip(zb).map(|(&x, &y)| c * (x - y)));
                } else {
                    g.resize(za.len(), T::zero());
                }
            }
            if gap > T::zero() {
                gap * gap
            } else {
                T::zero()
            }
        }
    }
}

/// Mean over pairs of `||z_a - z_b||^2` (must-link) and
/// `max(0, margin - ||z_a - z_b||)^2` (cannot-link). Empty set gives 0.
pub fn constraint_loss<T: Scalar>(z: &Matrix<T>, pairs: &[RowPair], margin: T) -> Result<T> {
    if pairs.is_empty() {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for p in pairs {
        if p.a >= z.rows() || p.b >= z.rows() {
            return Err(Error::Integrity(format!(
                "constraint row ({}, {}) outside {} latents",
                p.a,
                p.b,
                z.rows()
            )));
        }
        total += pair_term(z.row(p.a), z.row(p.b), p.kind, margin, None);
    }
    Ok(total / T::of_usize(pairs.len()))
}

/// Hard assignment: highest responsibility, ties to the lowest type id.
pub fn assign_types<T: Scalar>(z: &Matrix<T>, mu: &Centroids<T>) -> Result<Vec<TypeId>> {
    let q = soft_assign(z, mu)?;
    Ok(q.q
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            mu.type_ids[best]
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterTrainConfig {
    pub lambda_constraint: f64,
    pub margin: f64,
    pub target_update_interval: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for ClusterTrainConfig {
    fn default() -> Self {
        Self {
            lambda_constraint: 0.1,
            margin: 1.0,
            target_update_interval: 5,
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl ClusterTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_constraint >= 0.0) {
            return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
        }
        if self.target_update_interval == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "target update interval and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Composite clustering loss over explicit batches, as a function of the
/// flat vector `[mlp parameters..., centroid entries...]`.
pub struct CompositeObjective<'a, T> {
    pub template: &'a MlpParams<T>,
    pub x: &'a Matrix<T>,
    /// Rows of `x` in the KL batch.
    pub rows: &'a [usize],
    /// Target rows aligned with `rows`.
    pub targets: &'a Matrix<T>,
    /// Constraint pairs over rows of `x`.
    pub pairs: &'a [RowPair],
    pub k: usize,
    pub lambda: T,
    pub margin: T,
}

impl<T: Scalar> CompositeObjective<'_, T> {
    fn split<'t>(&self, theta: &'t [T]) -> (&'t [T], Matrix<T>) {
        let np = self.template.num_params();
        let mu = Matrix::from_vec(self.k, self.template.latent_dim(), theta[np..].to_vec())
            .expect("theta layout");
        (&theta[..np], mu)
    }

    /// Loss with gradients accumulated into `grad_params` / `grad_mu` when given.
    fn evaluate(&self, params: &[T], mu: &Matrix<T>, mut grads: Option<(&mut [T], &mut Matrix<T>)>) -> T {
        let net = self.template;
        let l = net.latent_dim();
        let mut trace = Vec::new();
        let mut kernel = vec![T::zero(); self.k];
        let mut g_z = vec![T::zero(); l];
        let inv_b = T::one() / T::of_usize(self.rows.len().max(1));
        let mut loss = T::zero();
        for (bi, &i) in self.rows.iter().enumerate() {
            let z = net.encode_traced(params, self.x.row(i), &mut trace);
            kernel_row(&z, mu, &mut kernel);
            let s: T = kernel.iter().copied().sum();
            let p_row = self.targets.row(bi);
            for j in 0..self.k {
                let q = kernel[j] / s;
                let p = p_row[j];
                if p > T::zero() {
                    loss += inv_b * p * (p / q).ln();
                }
            }
            if let Some((gp, gmu)) = grads.as_mut() {
                g_z.iter_mut().for_each(|v| *v = T::zero());
                for j in 0..self.k {
                    let q = kernel[j] / s;
                    let c = T::of(2.0) * inv_b * kernel[j] * (p_row[j] - q);
                    let mrow = gmu.row_mut(j);
                    for t in 0..l {
                        let diff = z[t] - mu.get(j, t);
                        g_z[t] += c * diff;
                        mrow[t] -= c * diff;
                    }
                }
                net.encoder_backward(params, &trace, &g_z, gp);
            }
        }
        if !self.pairs.is_empty() && self.lambda > T::zero() {
            let scale = self.lambda / T::of_usize(self.pairs.len());
            let mut trace_b = Vec::new();
            let mut g_a = Vec::with_capacity(l);
            for pr in self.pairs {
                let za = net.encode_traced(params, self.x.row(pr.a), &mut trace);
                let zb = net.encode_traced(params, self.x.row(pr.b), &mut trace_b);
                let want = grads.is_some();
                let term = pair_term(&za, &zb, pr.kind, self.margin, want.then_some(&mut g_a));
                loss += scale * term;
                if let Some((gp, _)) = grads.as_mut() {
                    let ga: Vec<T> = g_a.iter().map(|&v| v * scale).collect();
                    let gb: Vec<T> = ga.iter().map(|&v| -v).collect();
                    net.encoder_backward(params, &trace, &ga, gp);
                    net.encoder_backward(params, &trace_b, &gb, gp);
                }
            }
        }
        loss
    }
}

impl<T: Scalar> Objective<T> for CompositeObjective<'_, T> {
    fn dim(&self) -> usize {
        self.template.num_params() + self.k * self.template.latent_dim()
    }

    fn eval(&self, theta: &[T], grad: Option<&mut [T]>) -> Result<T> {
        let (params, mu) = self.split(theta);
        match grad {
            None => Ok(self.evaluate(params, &mu, None)),
            Some(g) => {
                let np = self.template.num_params();
                let mut gp = vec![T::zero(); np];
                let mut gmu = Matrix::zeros(self.k, self.template.latent_dim());
                let loss = self.evaluate(params, &mu, Some((&mut gp, &mut gmu)));
                g[..np].copy_from_slice(&gp);
                g[np..].copy_from_slice(gmu.as_slice());
                Ok(loss)
            }
        }
    }
}

/// Result of the clustering phase.
#[derive(Debug, Clone)]
pub struct ClusterFit<T> {
    pub params: MlpParams<T>,
    pub centroids: Centroids<T>,
    pub losses: Vec<T>,
}

fn full_targets<T: Scalar>(params: &MlpParams<T>, x: &Matrix<T>, mu: &Centroids<T>) -> Result<Matrix<T>> {
    let z = params.encode(x)?;
    let q = soft_assign(&z, mu)?;
    let mass = column_mass(&q.q);
    if let Some((j, m)) = mass
        .iter()
        .enumerate()
        .find(|(_, m)| m.as_f64() < DEGENERATE_MASS)
    {
        return Err(Error::DegenerateCluster {
            cluster: mu.type_ids[j].0 as usize,
            mass: m.as_f64(),
        });
    }
    target_distribution(&q)
}

/// Jointly trains encoder parameters and centroids on
/// `KL(P || Q) + lambda * constraint_loss`, refreshing `P` every
/// `target_update_interval` epochs.
pub fn train_cluster_phase<T: Scalar>(
    params: &MlpParams<T>,
    x: &Matrix<T>,
    pairs: &[RowPair],
    mu: &Centroids<T>,
    cfg: &ClusterTrainConfig,
) -> Result<ClusterFit<T>> {
    cfg.validate()?;
    if mu.k() < 2 {
        return Err(Error::InvalidArgument(format!(
            "clustering phase needs at least 2 centroids, got {}",
            mu.k()
        )));
    }
    if mu.dim() != params.latent_dim() {
        return Err(Error::Shape("centroid and latent dimensions differ".into()));
    }
    let mut net = params.clone();
    let mut centroids = mu.clone();
    let n = x.rows();
    if cfg.epochs == 0 || n == 0 {
        return Ok(ClusterFit {
            params: net,
            centroids,
            losses: vec![],
        });
    }
    let enc = net.encoder_range();
    let mut opt_net = OptimizerState::new(cfg.optimizer, enc.len());
    let mut opt_mu = OptimizerState::new(cfg.optimizer, centroids.means.as_slice().len());
    let batch = cfg.batch_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let use_pairs = cfg.lambda_constraint > 0.0 && !pairs.is_empty();
    let mut pair_order: Vec<usize> = (0..pairs.len()).collect();
    let mut pair_cursor = 0;
    let lambda = T::of(cfg.lambda_constraint);
    let margin = T::of(cfg.margin);
    let all_rows: Vec<usize> = (0..n).collect();
    let mut targets = Matrix::zeros(0, 0);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut gp = vec![T::zero(); net.num_params()];
    let mut gmu = Matrix::zeros(centroids.k(), centroids.dim());

    for epoch in 1..=cfg.epochs {
        if (epoch - 1) % cfg.target_update_interval == 0 {
            targets = full_targets(&net, x, &centroids)?;
        }
        let order = epoch_order(n, true, &mut rng);
        for chunk in order.chunks(batch) {
            let batch_targets = targets.select_rows(chunk);
            let mut batch_pairs = Vec::new();
            if use_pairs {
                for _ in 0..batch.min(pairs.len()) {
                    if pair_cursor == 0 {
                        pair_order.shuffle(&mut rng);
                    }
                    batch_pairs.push(pairs[pair_order[pair_cursor]]);
                    pair_cursor = (pair_cursor + 1) % pairs.len();
                }
            }
            let obj = CompositeObjective {
                template: &net,
                x,
                rows: chunk,
                targets: &batch_targets,
                pairs: &batch_pairs,
                k: centroids.k(),
                lambda,
                margin,
            };
            gp.iter_mut().for_each(|v| *v = T::zero());
            gmu.as_mut_slice().iter_mut().for_each(|v| *v = T::zero());
            let values = net.as_slice().to_vec();
            let loss = obj.evaluate(&values, &centroids.means, Some((&mut gp, &mut gmu)));
            check_finite_loss(loss, epoch)?;
            opt_net.step(&mut net.as_mut_slice()[enc.clone()], &gp[enc.clone()], cfg.learning_rate);
            opt_mu.step(centroids.means.as_mut_slice(), gmu.as_slice(), cfg.learning_rate);
        }
        let obj = CompositeObjective {
            template: &net,
            x,
            rows: &all_rows,
            targets: &targets,
            pairs: if use_pairs { pairs } else { &[] },
            k: centroids.k(),
            lambda,
            margin,
        };
        let loss = obj.evaluate(net.as_slice(), &centroids.means, None);
        check_finite_loss(loss, epoch)?;
        losses.push(loss);
    }
    Ok(ClusterFit {
        params: net,
        centroids,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{grad_check, init_params, pretrain, Activation, LayerSpec, TrainConfig};
    use crate::data_model::{build_constraints, Event};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows, rows[0].len()).unwrap()
    }

    fn cents(rows: &[&[f64]]) -> Centroids<f64> {
        Centroids::new(m(rows), (0..rows.len() as u32).map(TypeId).collect()).unwrap()
    }

    #[test]
    fn supervised_init_examples() {
        let z = m(&[&[0.0, 0.0], &[2.0, 2.0], &[5.0, -1.0]]);
        let c = init_centroids_supervised(&z, &[TypeId(3), TypeId(3), TypeId(1)], &[TypeId(3), TypeId(1)])
            .unwrap();
        assert_eq!(c.type_ids, vec![TypeId(1), TypeId(3)]);
        assert_eq!(c.means.row(0), &[5.0, -1.0]);
        assert_eq!(c.means.row(1), &[1.0, 1.0]);
        let err = init_centroids_supervised(&z, &[TypeId(3); 3], &[TypeId(3), TypeId(1)]);
        assert!(matches!(err, Err(Error::Initialization(msg)) if msg.contains('1')));
        assert!(init_centroids_supervised(&z, &[TypeId(9); 3], &[TypeId(3)]).is_err());
    }

    #[test]
    fn supervised_init_recovers_gaussian_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = [[0.0, 0.0], [10.0, 0.0], [0.0, -10.0]];
        let mut rows = vec![];
        let mut labels = vec![];
        for (t, c) in truth.iter().enumerate() {
            for _ in 0..100 {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                rows.push(vec![c[0] + a, c[1] + b]);
                labels.push(TypeId(t as u32));
            }
        }
        let z = Matrix::from_rows(&rows, 2).unwrap();
        let c = init_centroids_supervised(&z, &labels, &[TypeId(0), TypeId(1), TypeId(2)]).unwrap();
        for (j, t) in truth.iter().enumerate() {
            for d in 0..2 {
                assert!((c.means.get(j, d) - t[d]).abs() < 3.0 / 10.0);
            }
        }
    }

    #[test]
    fn soft_assign_examples() {
        let z = m(&[&[0.0, 0.0]]);
        let one = soft_assign(&z, &cents(&[&[3.0, 1.0]])).unwrap();
        assert_eq!(one.q.row(0), &[1.0]);
        let eq = soft_assign(&z, &cents(&[&[1.0, 0.0], &[-1.0, 0.0]])).unwrap();
        assert_eq!(eq.q.row(0), &[0.5, 0.5]);
        let q = soft_assign(&z, &cents(&[&[0.0, 0.0], &[2.0, 0.0]])).unwrap();
        assert!((q.q.get(0, 0) - 5.0 / 6.0).abs() < 1e-15);
        assert!(soft_assign(&m(&[&[0.0]]), &cents(&[&[0.0, 0.0]])).is_err());
    }

    #[test]
    fn target_distribution_examples() {
        let p = target_distribution(&SoftAssignment { q: m(&[&[1.0]]) }).unwrap();
        assert_eq!(p.row(0), &[1.0]);
        let p = target_distribution(&SoftAssignment {
            q: m(&[&[0.5, 0.5], &[0.5, 0.5]]),
        })
        .unwrap();
        assert_eq!(p.as_slice(), &[0.5; 4]);
        let p = target_distribution(&SoftAssignment { q: m(&[&[0.8, 0.2]]) }).unwrap();
        // Direct formula: (0.64/0.8) / (0.64/0.8 + 0.04/0.2) = 0.8 / 1.0.
        assert!((p.get(0, 0) - 0.8).abs() < 1e-15);
        assert!((p.get(0, 1) - 0.2).abs() < 1e-15);
        let zero_col = SoftAssignment { q: m(&[&[1.0, 0.0]]) };
        assert!(matches!(
            target_distribution(&zero_col),
            Err(Error::DegenerateCluster { cluster: 1, .. })
        ));
    }

    #[test]
    fn target_sharpens_non_uniform_rows() {
        let q = m(&[&[0.7, 0.3], &[0.3, 0.7]]);
        let p = target_distribution(&SoftAssignment { q: q.clone() }).unwrap();
        for i in 0..2 {
            let mq = q.row(i).iter().copied().fold(0.0, f64::max);
            let mp = p.row(i).iter().copied().fold(0.0, f64::max);
            assert!(mp >= mq);
        }
    }

    #[test]
    fn kl_examples() {
        let q = m(&[&[0.5, 0.5]]);
        assert_eq!(kl_loss(&q, &q).unwrap(), 0.0);
        let p = m(&[&[1.0, 0.0]]);
        assert!((kl_loss(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            kl_loss(&q, &p),
            Err(Error::InfiniteDivergence { row: 0, col: 1 })
        ));
    }

    #[test]
    fn kl_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut stoch = |n: usize, k: usize| {
            let mut mtx = Matrix::zeros(n, k);
            for i in 0..n {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                for j in 0..k {
                    mtx.set(i, j, raw[j] / s);
                }
            }
            mtx
        };
        let p = stoch(6, 4);
        let q = stoch(6, 4);
        let mut oracle = 0.0;
        for i in 0..6 {
            for j in 0..4 {
                oracle += p.get(i, j) * (p.get(i, j).ln() - q.get(i, j).ln());
            }
        }
        assert!((kl_loss(&p, &q).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn constraint_loss_examples() {
        let must = [RowPair { a: 0, b: 1, kind: ConstraintKind::MustLink }];
        let z = m(&[&[1.0, 2.0], &[1.0, 2.0], &[1.5, 2.0], &[9.0, 2.0]]);
        assert_eq!(constraint_loss(&z, &must, 1.0).unwrap(), 0.0);
        let far = [RowPair { a: 0, b: 3, kind: ConstraintKind::CannotLink }];
        assert_eq!(constraint_loss(&z, &far, 1.0).unwrap(), 0.0);
        let near = [RowPair { a: 0, b: 2, kind: ConstraintKind::CannotLink }];
        assert!((constraint_loss(&z, &near, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(constraint_loss(&z, &[], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn assign_types_ties_go_to_lowest_id() {
        let c = Centroids::new(m(&[&[1.0, 0.0], &[-1.0, 0.0]]), vec![TypeId(2), TypeId(5)]).unwrap();
        let z = m(&[&[0.0, 0.0], &[-1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(assign_types(&z, &c).unwrap(), vec![TypeId(2), TypeId(5), TypeId(2)]);
    }

    proptest! {
        #[test]
        fn q_and_p_rows_are_stochastic(
            zs in proptest::collection::vec(-20.0f64..20.0, 6..30),
            mus in proptest::collection::vec(-20.0f64..20.0, 6),
        ) {
            let n = zs.len() / 2;
            let z = Matrix::from_vec(n, 2, zs[..2 * n].to_vec()).unwrap();
            let mu = Centroids::new(Matrix::from_vec(3, 2, mus).unwrap(), vec![TypeId(0), TypeId(1), TypeId(2)]).unwrap();
            let q = soft_assign(&z, &mu).unwrap();
            let p = target_distribution(&q).unwrap();
            for i in 0..n {
                prop_assert!((q.q.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(q.q.row(i).iter().all(|&v| v >= 0.0));
            }
            let kl = kl_loss(&p, &q.q).unwrap();
            prop_assert!(kl >= -1e-12);
            prop_assert!(kl_loss(&q.q, &q.q).unwrap().abs() < 1e-12);
        }

        #[test]
        fn centroid_init_is_permutation_equivariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 20;
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
            let labels: Vec<TypeId> = (0..n).map(|i| TypeId((i % 3) as u32)).collect();
            let types = [TypeId(0), TypeId(1), TypeId(2)];
            let a = init_centroids_supervised(&Matrix::from_rows(&rows, 2).unwrap(), &labels, &types).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let prow: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
            let plab: Vec<TypeId> = perm.iter().map(|&i| labels[i]).collect();
            let b = init_centroids_supervised(&Matrix::from_rows(&prow, 2).unwrap(), &plab, &types).unwrap();
            for (x, y) in a.means.as_slice().iter().zip(b.means.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn assignment_is_invariant_to_monotone_rescaling(
            zs in proptest::collection::vec(-5.0f64..5.0, 2),
            mus in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let z = Matrix::from_vec(1, 2, zs).unwrap();
            let mu = Centroids::new(Matrix::from_vec(4, 2, mus).unwrap(), (0..4).map(TypeId).collect()).unwrap();
            let q = soft_assign(&z, &mu).unwrap().q;
            let hard = assign_types(&z, &mu).unwrap()[0];
            let transformed: Vec<f64> = q.row(0).iter().map(|v| (3.0 * v).exp()).collect();
            let mut best = 0;
            for j in 1..4 {
                if transformed[j] > transformed[best] {
                    best = j;
                }
            }
            prop_assert_eq!(mu.type_ids[best], hard);
        }
    }

    fn blobs(seed: u64, sigma: f64, spacing: f64, per: usize) -> (Matrix<f64>, Vec<TypeId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 6;
        let mut rows = vec![];
        let mut labels = vec![];
        for c in 0..3 {
            for _ in 0..per {
                let mut r: Vec<f64> = (0..d).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
                r[c] += spacing / std::f64::consts::SQRT_2;
                rows.push(r);
                labels.push(TypeId(c as u32));
            }
        }
        (Matrix::from_rows(&rows, d).unwrap(), labels)
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let (x, labels) = blobs(3, 0.5, 3.0, 4);
        let spec = LayerSpec::new(vec![6, 8, 5, 2], Activation::Relu).unwrap();
        let mut net: MlpParams<f64> = init_params(&spec, 17).unwrap();
        // Zero biases put ReLU inputs exactly on the kink for some rows.
        for (i, v) in net.as_mut_slice().iter_mut().enumerate() {
            *v += 0.05 * (i as f64).sin();
        }
        let z = net.encode(&x).unwrap();
        let mu = init_centroids_supervised(&z, &labels, &[TypeId(0), TypeId(1), TypeId(2)]).unwrap();
        let q = soft_assign(&z, &mu).unwrap();
        let targets = target_distribution(&q).unwrap();
        let events: Vec<Event> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Event::base(i.to_string(), i, l))
            .collect();
        let set = build_constraints(&events, 3, 1).unwrap();
        let ids: Vec<String> = (0..x.rows()).map(|i| i.to_string()).collect();
        let rows: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let pairs = resolve_pairs(&set, &rows).unwrap();
        let all: Vec<usize> = (0..x.rows()).collect();
        let obj = CompositeObjective {
            template: &net,
            x: &x,
            rows: &all,
            targets: &targets,
            pairs: &pairs,
            k: 3,
            lambda: 0.7,
            margin: 4.0,
        };
        let mut theta = net.as_slice().to_vec();
        theta.extend_from_slice(mu.means.as_slice());
        let err = grad_check(&obj, &theta, 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    fn trained_fixture(lambda: f64) -> (ClusterFit<f64>, Matrix<f64>, Vec<TypeId>, f64) {
        let (x, labels) = blobs(5, 0.2, 6.0, 100);
        let spec = LayerSpec::new(vec![6, 16, 3], Activation::Relu).unwrap();
        let net: MlpParams<f64> = init_params(&spec, 2).unwrap();
        let pre = pretrain(
            &net,
            &x,
            &TrainConfig {
                epochs: 30,
                learning_rate: 3e-3,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap()
        .params;
        let z = pre.encode(&x).unwrap();
        let types = [TypeId(0), TypeId(1), TypeId(2)];
        let mu = init_centroids_supervised(&z, &labels, &types).unwrap();
        let events: Vec<Event> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Event::base(i.to_string(), i, l))
            .collect();
        let set = build_constraints(&events, 100, 3).unwrap();
        let ids: Vec<String> = (0..x.rows()).map(|i| i.to_string()).collect();
        let rows: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let pairs = resolve_pairs(&set, &rows).unwrap();
        let cfg = ClusterTrainConfig {
            lambda_constraint: lambda,
            epochs: 15,
            seed: 4,
            ..Default::default()
        };
        let initial = {
            let targets = target_distribution(&soft_assign(&z, &mu).unwrap()).unwrap();
            let all: Vec<usize> = (0..x.rows()).collect();
            CompositeObjective {
                template: &pre,
                x: &x,
                rows: &all,
                targets: &targets,
                pairs: if lambda > 0.0 { &pairs } else { &[] },
                k: 3,
                lambda,
                margin: 1.0,
            }
            .evaluate(pre.as_slice(), &mu.means, None)
        };
        let fit = train_cluster_phase(&pre, &x, &pairs, &mu, &cfg).unwrap();
        (fit, x, labels, initial)
    }

    #[test]
    fn cluster_phase_separates_gaussian_classes() {
        let (fit, x, labels, _) = trained_fixture(0.1);
        let z = fit.params.encode(&x).unwrap();
        let hard = assign_types(&z, &fit.centroids).unwrap();
        let correct = hard.iter().zip(&labels).filter(|(a, b)| a == b).count();
        assert!(correct as f64 / labels.len() as f64 >= 0.99, "{correct}/300");
    }

    #[test]
    fn unsupervised_phase_reduces_loss() {
        let (fit, _, _, initial) = trained_fixture(0.0);
        assert!(*fit.losses.last().unwrap() < initial);
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let (x, labels) = blobs(1, 0.2, 6.0, 5);
        let spec = LayerSpec::new(vec![6, 4, 2], Activation::Relu).unwrap();
        let net: MlpParams<f64> = init_params(&spec, 2).unwrap();
        let z = net.encode(&x).unwrap();
        let mu = init_centroids_supervised(&z, &labels, &[TypeId(0), TypeId(1), TypeId(2)]).unwrap();
        let cfg = ClusterTrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let fit = train_cluster_phase(&net, &x, &[], &mu, &cfg).unwrap();
        assert_eq!(fit.params, net);
        assert_eq!(fit.centroids, mu);
    }
}
