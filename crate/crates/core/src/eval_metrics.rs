//! Clustering agreement and anomaly-ranking metrics.
//!
//! Partitions are label slices compared as opaque ids; natural logarithms
//! throughout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster_suite::relabel_by_first_appearance;
use crate::error::{Error, Result};

/// Cluster-by-class overlap counts; rows follow `pred`, columns `truth`,
/// both numbered by first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub table: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "prediction has {} items, truth {}",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::Size("partitions are empty".into()));
        }
        let p = relabel_by_first_appearance(pred);
        let t = relabel_by_first_appearance(truth);
        let rows = p.iter().max().unwrap() + 1;
        let cols = t.iter().max().unwrap() + 1;
        let mut table = vec![vec![0u64; cols]; rows];
        for (&a, &b) in p.iter().zip(&t) {
            table[a][b] += 1;
        }
        let row_sums = table.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            table,
            row_sums,
            col_sums,
            n: pred.len() as u64,
        })
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.table
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &c)| (i, j, c)))
    }
}

/// Share of items in their cluster's majority class.
pub fn purity(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let hits: u64 = c.table.iter().map(|r| *r.iter().max().unwrap()).sum();
    Ok(hits as f64 / c.n as f64)
}

pub fn inverse_purity(pred: &[usize], truth: &[usize]) -> Result<f64> {
    purity(truth, pred)
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Harmonic mean of purity and inverse purity.
pub fn pif(pred: &[usize], truth: &[usize]) -> Result<f64> {
    Ok(harmonic(purity(pred, truth)?, inverse_purity(pred, truth)?))
}

/// Arithmetic mean of purity and inverse purity.
pub fn pif_arithmetic(pred: &[usize], truth: &[usize]) -> Result<f64> {
    Ok(0.5 * (purity(pred, truth)? + inverse_purity(pred, truth)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BCubed {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Item-averaged BCubed precision and recall and their harmonic mean.
pub fn bcubed(pred: &[usize], truth: &[usize]) -> Result<BCubed> {
    let c = Contingency::new(pred, truth)?;
    let (mut p, mut r) = (0.0, 0.0);
    for (i, j, nij) in c.cells() {
        if nij == 0 {
            continue;
        }
        let nij = nij as f64;
        p += nij * nij / c.row_sums[i] as f64;
        r += nij * nij / c.col_sums[j] as f64;
    }
    let n = c.n as f64;
    let (precision, recall) = (p / n, r / n);
    Ok(BCubed {
        precision,
        recall,
        f: harmonic(precision, recall),
    })
}

fn choose2(k: u64) -> f64 {
    (k * k.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index; two partitions with no pair structure to compare
/// (zero denominator) score 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    let index: f64 = c.cells().map(|(_, _, v)| choose2(v)).sum();
    let a: f64 = c.row_sums.iter().map(|&v| choose2(v)).sum();
    let b: f64 = c.col_sums.iter().map(|&v| choose2(v)).sum();
    let expected = a * b / choose2(c.n).max(1.0);
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn entropy(counts: &[u64], n: u64) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(c: &Contingency) -> f64 {
    let n = c.n as f64;
    c.cells()
        .filter(|&(_, _, v)| v > 0)
        .map(|(i, j, v)| {
            let v = v as f64;
            v / n * (n * v / (c.row_sums[i] as f64 * c.col_sums[j] as f64)).ln()
        })
        .sum()
}

/// Expected mutual information under the hypergeometric model of random
/// partitions with the observed marginals.
fn expected_mutual_information(c: &Contingency) -> f64 {
    let n = c.n as usize;
    let mut ln_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &c.row_sums {
        for &b in &c.col_sums {
            let (a, b) = (a as usize, b as usize);
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            for nij in lo..=hi {
                let ln_p = ln_fact[a] + ln_fact[b] + ln_fact[n - a] + ln_fact[n - b]
                    - ln_fact[n]
                    - ln_fact[nij]
                    - ln_fact[a - nij]
                    - ln_fact[b - nij]
                    - ln_fact[n + nij - a - b];
                let v = nij as f64;
                emi += v / nf * (nf * v / (a as f64 * b as f64)).ln() * ln_p.exp();
            }
        }
    }
    emi
}

/// Below this magnitude the AMI denominator counts as zero.
pub const AMI_ZERO_DENOMINATOR: f64 = 1e-12;

/// Adjusted mutual information with the arithmetic-mean normalizer. Two
/// single-cluster partitions, or any case with zero denominator, score 1.
pub fn ami(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = Contingency::new(pred, truth)?;
    if c.row_sums.len() == 1 && c.col_sums.len() == 1 {
        return Ok(1.0);
    }
    let mi = mutual_information(&c);
    let emi = expected_mutual_information(&c);
    let h = 0.5 * (entropy(&c.row_sums, c.n) + entropy(&c.col_sums, c.n));
    let denom = h - emi;
    if denom.abs() < AMI_ZERO_DENOMINATOR {
        return Ok(1.0);
    }
    Ok((mi - emi) / denom)
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("scores contain NaN".into()));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann-Whitney statistic with tied ranks
/// averaged. `None` unless both classes are present.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    check_scores(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(Some(u / (pos as f64 * neg as f64)))
}

/// Average precision `Σ (R_i - R_{i-1}) P_i` over descending distinct score
/// thresholds. `None` without positives.
pub fn auc_prc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    check_scores(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(Some(ap))
}

/// Named scalar metrics, serialized as a JSON object.
pub type MetricMap = BTreeMap<String, f64>;

/// Partition agreement summary for one predicted labeling.
pub fn partition_metrics(pred: &[usize], truth: &[usize]) -> Result<MetricMap> {
    let b = bcubed(pred, truth)?;
    Ok(MetricMap::from([
        ("purity".into(), purity(pred, truth)?),
        ("inverse_purity".into(), inverse_purity(pred, truth)?),
        ("pif".into(), pif(pred, truth)?),
        ("bcubed_precision".into(), b.precision),
        ("bcubed_recall".into(), b.recall),
        ("bcf".into(), b.f),
        ("ari".into(), ari(pred, truth)?),
        ("ami".into(), ami(pred, truth)?),
    ]))
}
