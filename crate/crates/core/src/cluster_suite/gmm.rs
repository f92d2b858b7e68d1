use serde::{Deserialize, Serialize};

use super::kmeans::{check_k, kmeans};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{log_sum_exp, Scalar};

pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GmmModel<T> {
    pub k: usize,
    pub weights: Vec<T>,
    pub means: Matrix<T>,
    pub variances: Matrix<T>,
    pub log_likelihood: T,
    /// Log-likelihood of the initial parameters and after every EM step.
    pub ll_trace: Vec<T>,
}

impl<T: Scalar> GmmModel<T> {
    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// Free parameters: means, variances and `k - 1` weights.
    pub fn num_params(&self) -> usize {
        self.k * (2 * self.dim() + 1) - 1
    }

    /// `-2 ln L + p ln n`.
    pub fn bic(&self, n: usize) -> f64 {
        -2.0 * self.log_likelihood.as_f64() + self.num_params() as f64 * (n as f64).ln()
    }

    /// Responsibilities (`n x k`) and total log-likelihood of `x`.
    pub fn e_step(&self, x: &Matrix<T>) -> Result<(Matrix<T>, T)> {
        if x.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "data has {} columns, mixture {}",
                x.cols(),
                self.dim()
            )));
        }
        let half = T::of(0.5);
        let log_2pi = T::of((2.0 * std::f64::consts::PI).ln());
        let log_det: Vec<T> = (0..self.k)
            .map(|j| self.variances.row(j).iter().map(|&v| v.ln() + log_2pi).sum())
            .collect();
        let log_w: Vec<T> = self.weights.iter().map(|w| w.ln()).collect();
        let mut resp = Matrix::zeros(x.rows(), self.k);
        let mut total = T::zero();
        let mut row = vec![T::zero(); self.k];
        for (i, xi) in x.iter_rows().enumerate() {
            for j in 0..self.k {
                let mut maha = T::zero();
                for ((&v, &m), &var) in xi.iter().zip(self.means.row(j)).zip(self.variances.row(j)) {
                    maha += (v - m) * (v - m) / var;
                }
                row[j] = log_w[j] - half * (log_det[j] + maha);
            }
            let lse = log_sum_exp(&row);
            total += lse;
            for (r, &v) in resp.row_mut(i).iter_mut().zip(&row) {
                *r = (v - lse).exp();
            }
        }
        Ok((resp, total))
    }

    /// Hard labels by highest responsibility, ties to the lowest component.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<usize>> {
        let (resp, _) = self.e_step(x)?;
        Ok(argmax_rows(&resp))
    }
}

pub(crate) fn argmax_rows<T: Scalar>(m: &Matrix<T>) -> Vec<usize> {
    m.iter_rows()
        .map(|r| {
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn m_step<T: Scalar>(x: &Matrix<T>, resp: &Matrix<T>, model: &mut GmmModel<T>) {
    let (n, d, k) = (x.rows(), x.cols(), model.k);
    let floor = T::of(VARIANCE_FLOOR);
    for j in 0..k {
        let nj: T = (0..n).map(|i| resp.get(i, j)).sum();
        model.weights[j] = nj / T::of_usize(n);
        if nj <= T::zero() {
            continue;
        }
        let mut mean = vec![T::zero(); d];
        for (i, xi) in x.iter_rows().enumerate() {
            let r = resp.get(i, j);
            for (m, &v) in mean.iter_mut().zip(xi) {
                *m += r * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nj);
        let mut var = vec![T::zero(); d];
        for (i, xi) in x.iter_rows().enumerate() {
            let r = resp.get(i, j);
            for ((s, &v), &m) in var.iter_mut().zip(xi).zip(&mean) {
                *s += r * (v - m) * (v - m);
            }
        }
        for (dst, s) in model.variances.row_mut(j).iter_mut().zip(var) {
            let v = s / nj;
            *dst = if v > floor { v } else { floor };
        }
        model.means.row_mut(j).copy_from_slice(&mean);
    }
}

/// EM from a k-means++ / Lloyd initialization. Stops once the
/// log-likelihood improves by less than `tol` or after `max_iter` steps.
pub fn fit_gmm<T: Scalar>(x: &Matrix<T>, k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<(GmmModel<T>, Matrix<T>)> {
    check_k(x, k)?;
    if !x.is_finite() {
        return Err(Error::Data("mixture input contains non-finite values".into()));
    }
    let (n, d) = (x.rows(), x.cols());
    let init = kmeans(x, k, 100, seed)?;
    let mut resp = Matrix::zeros(n, k);
    for (i, &l) in init.labels.iter().enumerate() {
        resp.set(i, l, T::one());
    }
    let mut model = GmmModel {
        k,
        weights: vec![T::zero(); k],
        means: init.centroids.clone(),
        variances: Matrix::from_vec(k, d, vec![T::of(VARIANCE_FLOOR); k * d])?,
        log_likelihood: T::neg_infinity(),
        ll_trace: vec![],
    };
    m_step(x, &resp, &mut model);
    let (r, mut ll) = model.e_step(x)?;
    resp = r;
    model.ll_trace.push(ll);
    for _ in 0..max_iter {
        m_step(x, &resp, &mut model);
        let (r, next) = model.e_step(x)?;
        resp = r;
        model.ll_trace.push(next);
        let gain = (next - ll).as_f64();
        ll = next;
        if !(gain >= tol) {
            break;
        }
    }
    model.log_likelihood = ll;
    Ok((model, resp))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub k: usize,
    pub restart: usize,
    pub bic: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GmmSelection<T> {
    pub model: GmmModel<T>,
    pub labels: Vec<usize>,
    pub trace: Vec<SelectionEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Seed of the `restart`-th fit with `k` components.
pub(crate) fn restart_seed(seed: u64, k: usize, restart: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((k as u64) << 20)
        .wrapping_add(restart as u64)
}

/// Lowest-BIC mixture over `k_min..=k_max` and `restarts` seeds per `k`;
/// ties prefer smaller `k`, then earlier restarts.
pub fn select_gmm<T: Scalar>(x: &Matrix<T>, k_min: usize, k_max: usize, restarts: usize, seed: u64) -> Result<GmmSelection<T>> {
    select_gmm_with(x, k_min, k_max, restarts, seed, &EmOptions::default())
}

pub fn select_gmm_with<T: Scalar>(
    x: &Matrix<T>,
    k_min: usize,
    k_max: usize,
    restarts: usize,
    seed: u64,
    em: &EmOptions,
) -> Result<GmmSelection<T>> {
    if k_min == 0 || k_min > k_max {
        return Err(Error::InvalidArgument(format!("invalid k range {k_min}..={k_max}")));
    }
    if k_max > x.rows() {
        return Err(Error::Size(format!("k_max {k_max} exceeds {} points", x.rows())));
    }
    let n = x.rows();
    let mut trace = Vec::new();
    let mut best: Option<(f64, GmmModel<T>, Matrix<T>)> = None;
    for k in k_min..=k_max {
        for r in 0..restarts.max(1) {
            let (model, resp) = fit_gmm(x, k, em.max_iter, em.tol, restart_seed(seed, k, r))?;
            let bic = model.bic(n);
            trace.push(SelectionEntry {
                k,
                restart: r,
                bic,
                log_likelihood: model.log_likelihood.as_f64(),
            });
            if best.as_ref().map_or(true, |(b, _, _)| bic < *b) {
                best = Some((bic, model, resp));
            }
        }
    }
    let (_, model, resp) = best.expect("at least one fit");
    Ok(GmmSelection {
        labels: argmax_rows(&resp),
        model,
        trace,
    })
}
