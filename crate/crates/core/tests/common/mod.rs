//! Brute-force reference implementations used to check the metric module.
//! Each works from the item or pair level rather than a contingency table.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fraction of items whose cluster's majority class is their own class
/// share, summed cluster by cluster over item lists.
pub fn purity(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let mut total = 0usize;
    let mut seen_clusters = Vec::new();
    for &c in pred {
        if seen_clusters.contains(&c) {
            continue;
        }
        seen_clusters.push(c);
        let members: Vec<usize> = (0..n).filter(|&i| pred[i] == c).collect();
        let best = members
            .iter()
            .map(|&i| members.iter().filter(|&&j| truth[j] == truth[i]).count())
            .max()
            .unwrap();
        total += best;
    }
    total as f64 / n as f64
}

pub fn pif(pred: &[usize], truth: &[usize]) -> f64 {
    let p = purity(pred, truth);
    let ip = purity(truth, pred);
    if p + ip == 0.0 {
        0.0
    } else {
        2.0 * p * ip / (p + ip)
    }
}

/// Per-item BCubed precision, recall and F.
pub fn bcubed(pred: &[usize], truth: &[usize]) -> (f64, f64, f64) {
    let n = pred.len();
    let (mut p, mut r) = (0.0, 0.0);
    for i in 0..n {
        let both = (0..n).filter(|&j| pred[j] == pred[i] && truth[j] == truth[i]).count() as f64;
        let same_pred = (0..n).filter(|&j| pred[j] == pred[i]).count() as f64;
        let same_truth = (0..n).filter(|&j| truth[j] == truth[i]).count() as f64;
        p += both / same_pred;
        r += both / same_truth;
    }
    let (p, r) = (p / n as f64, r / n as f64);
    (p, r, 2.0 * p * r / (p + r))
}

/// ARI from the four pair counts, in exact integer arithmetic until the
/// final division. Zero denominator scores 1.
pub fn ari(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut a, mut b, mut c, mut d) = (0i128, 0i128, 0i128, 0i128);
    for i in 0..n {
        for j in i + 1..n {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => a += 1,
                (true, false) => b += 1,
                (false, true) => c += 1,
                (false, false) => d += 1,
            }
        }
    }
    let num = 2 * (a * d - b * c);
    let den = (a + b) * (b + d) + (a + c) * (c + d);
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn labels_of(x: &[usize]) -> Vec<usize> {
    let mut v = x.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn entropy(x: &[usize]) -> f64 {
    let n = x.len() as f64;
    labels_of(x)
        .into_iter()
        .map(|l| {
            let p = x.iter().filter(|&&v| v == l).count() as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information as an average over items of the pointwise term.
fn mutual_information(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let nf = n as f64;
    (0..n)
        .map(|i| {
            let both = (0..n).filter(|&j| pred[j] == pred[i] && truth[j] == truth[i]).count() as f64;
            let a = pred.iter().filter(|&&v| v == pred[i]).count() as f64;
            let b = truth.iter().filter(|&&v| v == truth[i]).count() as f64;
            (nf * both / (a * b)).ln() / nf
        })
        .sum()
}

/// Binomial coefficients from Pascal's triangle.
fn pascal(n: usize) -> Vec<Vec<u128>> {
    let mut t = vec![vec![0u128; n + 1]; n + 1];
    for i in 0..=n {
        t[i][0] = 1;
        for j in 1..=i {
            t[i][j] = t[i - 1][j - 1] + t[i - 1][j];
        }
    }
    t
}

/// Expected mutual information with hypergeometric cell probabilities in
/// exact integer arithmetic.
fn expected_mutual_information(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let c = pascal(n);
    let nf = n as f64;
    let mut emi = 0.0;
    for lp in labels_of(pred) {
        let a = pred.iter().filter(|&&v| v == lp).count();
        for lt in labels_of(truth) {
            let b = truth.iter().filter(|&&v| v == lt).count();
            for k in 1..=a.min(b) {
                if n + k < a + b {
                    continue;
                }
                let ways = c[a][k] * c[n - a][b - k];
                if ways == 0 {
                    continue;
                }
                let p = ways as f64 / c[n][b] as f64;
                let kf = k as f64;
                emi += p * kf / nf * (nf * kf / (a as f64 * b as f64)).ln();
            }
        }
    }
    emi
}

pub fn ami(pred: &[usize], truth: &[usize]) -> f64 {
    if labels_of(pred).len() == 1 && labels_of(truth).len() == 1 {
        return 1.0;
    }
    let mi = mutual_information(pred, truth);
    let emi = expected_mutual_information(pred, truth);
    let den = 0.5 * (entropy(pred) + entropy(truth)) - emi;
    if den.abs() < evtype::eval_metrics::AMI_ZERO_DENOMINATOR {
        return 1.0;
    }
    (mi - emi) / den
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by enumerating all pairs.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Average precision: for every distinct threshold, recount everything at
/// or above it and add the recall step times the precision.
pub fn auc_prc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return None;
    }
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let above: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = above.iter().filter(|&&i| labels[i]).count();
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * tp as f64 / above.len() as f64;
        prev_recall = recall;
    }
    Some(ap)
}

/// A random partition of `n` items into at most `k` labels drawn from a
/// sparse label space so label values are not contiguous.
pub fn random_partition(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| 3 * rng.gen_range(0..k) + 7).collect()
}

/// Scores on a coarse grid so ties are common.
pub fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<bool>) {
    let scores = (0..n).map(|_| f64::from(rng.gen_range(0..12u32)) / 4.0).collect();
    let labels = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    (scores, labels)
}
