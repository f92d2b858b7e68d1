//! Reconstruction-error triage: frozen-encoder decoder retraining, scoring,
//! threshold bands and the normal / deferred / abnormal split.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{reconstruction_error, train_reconstruction, MlpParams, TrainConfig};
use crate::cluster_suite::fit_gmm;
use crate::data_model::TypeId;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Errors strictly below `tau_normal` are normal, strictly above
/// `tau_abnormal` abnormal, everything else deferred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBand {
    pub tau_normal: f64,
    pub tau_abnormal: f64,
}

impl ThresholdBand {
    pub fn new(tau_normal: f64, tau_abnormal: f64) -> Result<Self> {
        if !(tau_normal >= 0.0 && tau_abnormal >= tau_normal) || !tau_abnormal.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid band ({tau_normal}, {tau_abnormal})"
            )));
        }
        Ok(Self {
            tau_normal,
            tau_abnormal,
        })
    }

    pub fn width(&self) -> f64 {
        self.tau_abnormal - self.tau_normal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Normal,
    Deferred,
    Abnormal,
}

impl Verdict {
    pub fn of(error: f64, band: &ThresholdBand) -> Self {
        if error < band.tau_normal {
            Verdict::Normal
        } else if error > band.tau_abnormal {
            Verdict::Abnormal
        } else {
            Verdict::Deferred
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageResult {
    pub normal: Vec<(String, TypeId)>,
    pub abnormal: Vec<String>,
    pub deferred: Vec<String>,
}

impl TriageResult {
    pub fn len(&self) -> usize {
        self.normal.len() + self.abnormal.len() + self.deferred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks the three lists are pairwise disjoint.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let ids = self
            .normal
            .iter()
            .map(|(id, _)| id)
            .chain(&self.abnormal)
            .chain(&self.deferred);
        for id in ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Integrity(format!("'{id}' triaged twice")));
            }
        }
        Ok(())
    }
}

/// Retrains only the decoder on normal events; encoder weights are untouched.
pub fn retrain_decoder_frozen<T: Scalar>(
    params: &MlpParams<T>,
    x_normal: &Matrix<T>,
    cfg: &TrainConfig,
) -> Result<crate::autoencoder::Fitted<T>> {
    train_reconstruction(params, x_normal, cfg, false)
}

/// Per-event reconstruction errors.
pub fn score<T: Scalar>(params: &MlpParams<T>, x: &Matrix<T>) -> Result<Vec<T>> {
    let xhat = params.reconstruct(x)?;
    Ok(reconstruction_error(x, &xhat)?.per_event)
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn sorted_errors<T: Scalar>(errors: &[T]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::Size("cannot fit a band to an empty error list".into()));
    }
    let mut v: Vec<f64> = errors.iter().map(|e| e.as_f64()).collect();
    if v.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::Data("reconstruction errors must be finite and nonnegative".into()));
    }
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Band at the `lo_q` and `hi_q` quantiles of `errors`.
pub fn fit_threshold_band<T: Scalar>(errors: &[T], lo_q: f64, hi_q: f64) -> Result<ThresholdBand> {
    if !(0.0..=1.0).contains(&lo_q) || !(0.0..=1.0).contains(&hi_q) || lo_q > hi_q {
        return Err(Error::InvalidArgument(format!(
            "quantiles must satisfy 0 <= lo <= hi <= 1, got ({lo_q}, {hi_q})"
        )));
    }
    let v = sorted_errors(errors)?;
    ThresholdBand::new(quantile_sorted(&v, lo_q), quantile_sorted(&v, hi_q))
}

/// How the threshold band is derived from pending-set errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy")]
pub enum BandStrategy {
    /// Fixed quantiles of the error distribution.
    Quantile { lo_q: f64, hi_q: f64 },
    /// The emptiest histogram bin of log-errors between the two tallest modes.
    HistogramPeak { bins: usize },
    /// Two-component Gaussian mixture on log-errors; the band spans the
    /// region where the posterior of the high-error component lies in
    /// `[posterior_lo, posterior_hi]`.
    Mixture { posterior_lo: f64, posterior_hi: f64 },
}

/// Default band quantiles. A low normal cut keeps anomalies out of the
/// normal verdicts even when they make up a large share of the pending set.
pub const DEFAULT_LO_Q: f64 = 0.05;
pub const DEFAULT_HI_Q: f64 = 0.70;

impl Default for BandStrategy {
    fn default() -> Self {
        BandStrategy::Quantile {
            lo_q: DEFAULT_LO_Q,
            hi_q: DEFAULT_HI_Q,
        }
    }
}

/// Lower bound applied before taking logs of errors.
const LOG_FLOOR: f64 = 1e-12;

/// Fits a band with the given strategy. `Mixture` and `HistogramPeak` fall
/// back to the default quantiles when the errors show no two-mode structure.
pub fn fit_band<T: Scalar>(errors: &[T], strategy: &BandStrategy, seed: u64) -> Result<ThresholdBand> {
    let fallback = |e: &[T]| fit_threshold_band(e, DEFAULT_LO_Q, DEFAULT_HI_Q);
    match *strategy {
        BandStrategy::Quantile { lo_q, hi_q } => fit_threshold_band(errors, lo_q, hi_q),
        BandStrategy::HistogramPeak { bins } => {
            let v = sorted_errors(errors)?;
            match histogram_valley(&v, bins) {
                Some((a, b)) => ThresholdBand::new(a, b),
                None => fallback(errors),
            }
        }
        BandStrategy::Mixture {
            posterior_lo,
            posterior_hi,
        } => {
            if !(0.0 < posterior_lo && posterior_lo <= posterior_hi && posterior_hi < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "posterior cut-offs must satisfy 0 < lo <= hi < 1, got ({posterior_lo}, {posterior_hi})"
                )));
            }
            let v = sorted_errors(errors)?;
            match mixture_band(&v, posterior_lo, posterior_hi, seed)? {
                Some(b) => Ok(b),
                None => fallback(errors),
            }
        }
    }
}

fn histogram_valley(sorted: &[f64], bins: usize) -> Option<(f64, f64)> {
    if bins < 3 || sorted.len() < 2 {
        return None;
    }
    let logs: Vec<f64> = sorted.iter().map(|e| e.max(LOG_FLOOR).ln()).collect();
    let (lo, hi) = (logs[0], logs[logs.len() - 1]);
    if hi <= lo {
        return None;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for l in &logs {
        let b = (((l - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    // Tallest bin, then the tallest bin separated from it by a lower bin.
    let first = (0..bins).max_by_key(|&b| (counts[b], std::cmp::Reverse(b)))?;
    let second = (0..bins)
        .filter(|&b| {
            let (a, c) = (b.min(first), b.max(first));
            c > a + 1 && (a + 1..c).any(|m| counts[m] < counts[b].min(counts[first]))
        })
        .max_by_key(|&b| (counts[b], std::cmp::Reverse(b)))?;
    let (a, c) = (first.min(second), first.max(second));
    let valley = (a + 1..c).min_by_key(|&m| (counts[m], m))?;
    let left = (lo + valley as f64 * width).exp();
    let right = (lo + (valley + 1) as f64 * width).exp();
    Some((left, right))
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn mixture_band(sorted: &[f64], p_lo: f64, p_hi: f64, seed: u64) -> Result<Option<ThresholdBand>> {
    if sorted.len() < 4 {
        return Ok(None);
    }
    let logs: Vec<f64> = sorted.iter().map(|e| e.max(LOG_FLOOR).ln()).collect();
    let x = Matrix::from_vec(logs.len(), 1, logs)?;
    let (gmm, _) = fit_gmm(&x, 2, 500, 1e-10, seed)?;
    let (lo_c, hi_c) = if gmm.means.get(0, 0) <= gmm.means.get(1, 0) {
        (0, 1)
    } else {
        (1, 0)
    };
    let (m0, m1) = (gmm.means.get(lo_c, 0), gmm.means.get(hi_c, 0));
    if !(m1 > m0) {
        return Ok(None);
    }
    let (v0, v1) = (gmm.variances.get(lo_c, 0), gmm.variances.get(hi_c, 0));
    let (w0, w1) = (gmm.weights[lo_c], gmm.weights[hi_c]);
    let posterior = |t: f64| {
        let a = w1 * normal_pdf(t, m1, v1);
        let b = w0 * normal_pdf(t, m0, v0);
        if a + b > 0.0 {
            a / (a + b)
        } else if t > (m0 + m1) / 2.0 {
            1.0
        } else {
            0.0
        }
    };
    // tau_normal: the last point below the upper mean where the posterior
    // is at most `p_lo`; tau_abnormal: the first point above it where the
    // posterior reaches `p_hi`. Both searches stop eight deviations out.
    let (s0, s1) = (v0.sqrt(), v1.sqrt());
    let lower = scan(m1, m0 - 8.0 * s0, |t| posterior(t) <= p_lo);
    let upper = scan(lower, m1 + 8.0 * s1, |t| posterior(t) >= p_hi);
    let lo = lower.exp();
    let hi = upper.exp().max(lo);
    Ok(Some(ThresholdBand::new(lo, hi)?))
}

/// First point on the way from `from` to `to` where `hit` holds, located on
/// a 4000-step grid and refined by bisection; `to` when it never holds.
fn scan(from: f64, to: f64, hit: impl Fn(f64) -> bool) -> f64 {
    const STEPS: usize = 4000;
    if hit(from) {
        return from;
    }
    let step = (to - from) / STEPS as f64;
    let mut prev = from;
    for i in 1..=STEPS {
        let t = from + step * i as f64;
        if hit(t) {
            let (mut a, mut b) = (prev, t);
            for _ in 0..100 {
                let mid = 0.5 * (a + b);
                if hit(mid) {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return b;
        }
        prev = t;
    }
    to
}

/// Splits events by their error against `band`; normals keep their
/// assigned type.
pub fn triage<T: Scalar>(ids: &[String], errors: &[T], band: &ThresholdBand, assignments: &[TypeId]) -> Result<TriageResult> {
    if ids.len() != errors.len() || ids.len() != assignments.len() {
        return Err(Error::Shape(format!(
            "{} ids, {} errors, {} assignments",
            ids.len(),
            errors.len(),
            assignments.len()
        )));
    }
    let mut out = TriageResult::default();
    for ((id, e), ty) in ids.iter().zip(errors).zip(assignments) {
        match Verdict::of(e.as_f64(), band) {
            Verdict::Normal => out.normal.push((id.clone(), *ty)),
            Verdict::Deferred => out.deferred.push(id.clone()),
            Verdict::Abnormal => out.abnormal.push(id.clone()),
        }
    }
    out.validate()?;
    Ok(out)
}

/// Precision of the identified-abnormal set, weighted by error mass and by count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub error_mass: f64,
    pub count: f64,
}

/// `None` when nothing was identified or the identified errors sum to zero.
pub fn error_mass_precision(errors: &[f64], true_positive: &[bool]) -> Result<Option<Precision>> {
    if errors.len() != true_positive.len() {
        return Err(Error::Shape("errors and flags differ in length".into()));
    }
    if errors.iter().any(|e| *e < 0.0) {
        return Err(Error::Data("errors must be nonnegative".into()));
    }
    let total: f64 = errors.iter().sum();
    if errors.is_empty() || total <= 0.0 {
        return Ok(None);
    }
    let tp: f64 = errors
        .iter()
        .zip(true_positive)
        .filter(|(_, &t)| t)
        .map(|(e, _)| e)
        .sum();
    let hits = true_positive.iter().filter(|&&t| t).count();
    Ok(Some(Precision {
        error_mass: tp / total,
        count: hits as f64 / errors.len() as f64,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageEntry {
    pub id: String,
    pub error: f64,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub assigned_type: Option<TypeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageReport {
    pub band: ThresholdBand,
    pub strategy: BandStrategy,
    pub events: Vec<TriageEntry>,
}

impl TriageReport {
    pub fn build(ids: &[String], errors: &[f64], assignments: &[TypeId], band: ThresholdBand, strategy: BandStrategy) -> Self {
        let events = ids
            .iter()
            .zip(errors)
            .zip(assignments)
            .map(|((id, &error), &ty)| {
                let verdict = Verdict::of(error, &band);
                TriageEntry {
                    id: id.clone(),
                    error,
                    verdict,
                    assigned_type: (verdict == Verdict::Normal).then_some(ty),
                }
            })
            .collect();
        Self {
            band,
            strategy,
            events,
        }
    }

    pub fn result(&self) -> TriageResult {
        let mut out = TriageResult::default();
        for e in &self.events {
            match (e.verdict, e.assigned_type) {
                (Verdict::Normal, Some(t)) => out.normal.push((e.id.clone(), t)),
                (Verdict::Normal, None) | (Verdict::Deferred, _) => out.deferred.push(e.id.clone()),
                (Verdict::Abnormal, _) => out.abnormal.push(e.id.clone()),
            }
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::persist::save_document(path, "triage_report", self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::persist::load_document(path, "triage_report")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{init_params, pretrain, Activation, LayerSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn quantile_band_examples() {
        let b = fit_threshold_band(&[1.0, 2.0, 3.0, 4.0], 0.25, 0.75).unwrap();
        assert_eq!((b.tau_normal, b.tau_abnormal), (1.75, 3.25));
        let b = fit_threshold_band(&[5.0, 1.0, 3.0], 0.5, 0.5).unwrap();
        assert_eq!(b.width(), 0.0);
        let b = fit_threshold_band(&[2.5; 7], 0.1, 0.9).unwrap();
        assert_eq!((b.tau_normal, b.tau_abnormal), (2.5, 2.5));
        assert!(fit_threshold_band::<f64>(&[], 0.1, 0.9).is_err());
        assert!(fit_threshold_band(&[1.0], 0.9, 0.1).is_err());
    }

    #[test]
    fn triage_examples() {
        let band = ThresholdBand::new(0.3, 0.7).unwrap();
        let t = triage(&ids(3), &[0.1, 0.5, 0.9], &band, &[TypeId(4); 3]).unwrap();
        assert_eq!(t.normal, vec![("0".to_string(), TypeId(4))]);
        assert_eq!(t.deferred, vec!["1".to_string()]);
        assert_eq!(t.abnormal, vec!["2".to_string()]);

        let zero = ThresholdBand::new(0.5, 0.5).unwrap();
        let t = triage(&ids(3), &[0.4, 0.6, 0.5], &zero, &[TypeId(0); 3]).unwrap();
        assert_eq!(t.normal.len(), 1);
        assert_eq!(t.abnormal, vec!["1".to_string()]);
        assert_eq!(t.deferred, vec!["2".to_string()]);

        let t = triage(&ids(1), &[0.3], &band, &[TypeId(0)]).unwrap();
        assert_eq!(t.deferred, vec!["0".to_string()]);
    }

    #[test]
    fn error_mass_precision_examples() {
        let p = error_mass_precision(&[0.9, 0.8, 0.3], &[true, true, false]).unwrap().unwrap();
        assert!((p.error_mass - 0.85).abs() < 1e-15);
        assert!((p.count - 2.0 / 3.0).abs() < 1e-15);
        let p = error_mass_precision(&[0.2, 0.1], &[true, true]).unwrap().unwrap();
        assert_eq!((p.error_mass, p.count), (1.0, 1.0));
        assert_eq!(error_mass_precision(&[], &[]).unwrap(), None);
        assert_eq!(error_mass_precision(&[0.0], &[true]).unwrap(), None);
    }

    proptest! {
        #[test]
        fn triage_partitions_and_widening_only_defers(
            errors in proptest::collection::vec(0.0f64..10.0, 1..60),
            a in 0.0f64..10.0, w in 0.0f64..3.0, grow in 0.0f64..2.0,
        ) {
            let n = errors.len();
            let band = ThresholdBand::new(a, a + w).unwrap();
            let wide = ThresholdBand::new((a - grow).max(0.0), a + w + grow).unwrap();
            let t = triage(&ids(n), &errors, &band, &vec![TypeId(0); n]).unwrap();
            prop_assert_eq!(t.len(), n);
            t.validate().unwrap();
            for e in &errors {
                let (narrow, widened) = (Verdict::of(*e, &band), Verdict::of(*e, &wide));
                prop_assert!(widened == narrow || widened == Verdict::Deferred);
            }
        }
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Matrix<f64> {
        let data = (0..n * d)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                if i % d == 0 { z + shift } else { z * 0.3 }
            })
            .collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    #[test]
    fn far_points_score_above_held_out_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 6;
        let train = cloud(&mut rng, 300, d, 0.0);
        let held = cloud(&mut rng, 50, d, 0.0);
        let mut far = cloud(&mut rng, 20, d, 0.0);
        for i in 0..20 {
            far.set(i, 1, far.get(i, 1) + 10.0 * 0.3);
        }
        let spec = LayerSpec::new(vec![d, 16, 2], Activation::Relu).unwrap();
        let net = pretrain(
            &init_params(&spec, 1).unwrap(),
            &train,
            &TrainConfig {
                epochs: 60,
                learning_rate: 3e-3,
                ..Default::default()
            },
        )
        .unwrap()
        .params;
        let mut s_held = score(&net, &held).unwrap();
        s_held.sort_by(f64::total_cmp);
        let s_far = score(&net, &far).unwrap();
        let min_far = s_far.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(s_held[s_held.len() / 2] < min_far);
        assert_eq!(score(&net, &held).unwrap(), score(&net, &held).unwrap());
    }

    #[test]
    fn zero_network_scores_mean_square() {
        let spec = LayerSpec::new(vec![3, 2], Activation::Tanh).unwrap();
        let net = MlpParams::<f64>::zeros(spec).unwrap();
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, 0.0]).unwrap();
        let s = score(&net, &x).unwrap();
        assert!((s[0] - (1.0 + 4.0 + 0.25) / 3.0).abs() < 1e-15);
        assert!((s[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn decoder_retraining_freezes_encoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = cloud(&mut rng, 120, 5, 1.0);
        let spec = LayerSpec::new(vec![5, 8, 2], Activation::Relu).unwrap();
        let net: MlpParams<f64> = init_params(&spec, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let before = score(&net, &x).unwrap().iter().sum::<f64>();
        let fit = retrain_decoder_frozen(&net, &x, &cfg).unwrap();
        let enc = net.encoder_range();
        let a: Vec<u64> = net.as_slice()[enc.clone()].iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = fit.params.as_slice()[enc].iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert!(score(&fit.params, &x).unwrap().iter().sum::<f64>() < before);
        let none = retrain_decoder_frozen(&net, &x, &TrainConfig { epochs: 0, ..cfg }).unwrap();
        assert_eq!(none.params, net);
    }

    #[test]
    fn mixture_band_separates_two_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut errors: Vec<f64> = (0..300).map(|_| (0.2 * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
        errors.extend((0..150).map(|_| (3.0 + 0.2 * rng.sample::<f64, _>(StandardNormal)).exp()));
        let band = fit_band(&errors, &BandStrategy::Mixture { posterior_lo: 0.05, posterior_hi: 0.95 }, 0).unwrap();
        let t = triage(&ids(errors.len()), &errors, &band, &vec![TypeId(0); errors.len()]).unwrap();
        assert!(t.normal.iter().all(|(id, _)| id.parse::<usize>().unwrap() < 300));
        assert!(t.abnormal.iter().all(|id| id.parse::<usize>().unwrap() >= 300));
        assert!(t.normal.len() > 250 && t.abnormal.len() > 120);
    }

    #[test]
    fn histogram_band_lies_between_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut errors: Vec<f64> = (0..300).map(|_| (0.2 * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
        errors.extend((0..150).map(|_| (3.0 + 0.2 * rng.sample::<f64, _>(StandardNormal)).exp()));
        let band = fit_band(&errors, &BandStrategy::HistogramPeak { bins: 20 }, 0).unwrap();
        assert!(band.tau_normal > 0.4_f64.exp() && band.tau_abnormal < 2.6_f64.exp());
        assert!(errors.iter().all(|&e| Verdict::of(e, &band) != Verdict::Deferred));
    }

    #[test]
    fn report_round_trip() {
        let band = ThresholdBand::new(0.3, 0.7).unwrap();
        let r = TriageReport::build(&ids(3), &[0.1, 0.5, 0.9], &[TypeId(1); 3], band, BandStrategy::default());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("triage.json");
        r.save(&p).unwrap();
        let back = TriageReport::load(&p).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.result(), triage(&ids(3), &[0.1, 0.5, 0.9], &band, &[TypeId(1); 3]).unwrap());
    }
}
