//! Synthetic benchmark: Gaussian-blob embeddings with planted per-type
//! vocabularies, split into a labeled base set and a mixed pending set.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{save_embeddings_jsonl, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::persist;

/// Event types with their planted vocabularies, most frequent word first.
const TYPE_VOCAB: &[(&str, &[&str])] = &[
    ("bankruptcy", &["bankruptcy", "insolvency", "creditors", "liquidation", "receiver", "court", "filing", "debts", "restructuring", "trustee"]),
    ("equity_pledge", &["pledge", "pledged", "collateral", "pledgee", "release", "custody", "lender", "margin", "shareholding", "registration"]),
    ("share_repurchase", &["repurchase", "buyback", "treasury", "cancellation", "tranche", "authorization", "cap", "average", "purchased", "program"]),
    ("executive_change", &["resignation", "appointed", "chairman", "director", "successor", "tenure", "nomination", "interim", "vacancy", "officer"]),
    ("earnings_loss", &["loss", "deficit", "impairment", "writedown", "decline", "revenue", "quarterly", "forecast", "shortfall", "provision"]),
    ("asset_freeze", &["frozen", "freeze", "seizure", "judicial", "enforcement", "attachment", "accounts", "ruling", "plaintiff", "injunction"]),
    ("bid_winning", &["tender", "bid", "contract", "awarded", "procurement", "winning", "project", "consortium", "construction", "municipal"]),
    ("regulatory_penalty", &["penalty", "fine", "regulator", "violation", "sanction", "investigation", "disclosure", "warning", "misconduct", "commission"]),
];

const FILLER: &[&str] = &[
    "company", "announced", "group", "listed", "statement", "according", "period", "matter", "holdings", "update",
    "notice", "limited", "subsidiary", "relevant", "reported", "exchange", "monday", "tuesday", "wednesday", "thursday",
    "friday", "morning", "evening", "local", "regional", "national", "board", "public", "official", "sources",
    "week", "month", "year", "today", "yesterday", "latest", "quarter", "details", "bulletin", "investors",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub base_types: usize,
    pub novel_types: usize,
    pub base_per_type: usize,
    pub novel_per_type: usize,
    pub unknown_per_type: usize,
    pub dim: usize,
    /// Distance between any two blob centers, in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub planted_words_per_text: usize,
    pub filler_words_per_text: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            base_types: 5,
            novel_types: 3,
            base_per_type: 200,
            novel_per_type: 60,
            unknown_per_type: 50,
            dim: 32,
            separation: 6.0,
            sigma: 1.0,
            planted_words_per_text: 8,
            filler_words_per_text: 3,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let types = self.base_types + self.novel_types;
        if self.base_types == 0 || types > TYPE_VOCAB.len() {
            return Err(Error::InvalidArgument(format!(
                "need 1..={} types in total, got {} base + {} novel",
                TYPE_VOCAB.len(),
                self.base_types,
                self.novel_types
            )));
        }
        if self.dim < types {
            return Err(Error::InvalidArgument(format!(
                "dimension {} cannot hold {types} orthogonal centers",
                self.dim
            )));
        }
        if !(self.separation > 0.0 && self.sigma > 0.0) {
            return Err(Error::InvalidArgument("separation and sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldEntry {
    #[serde(rename = "type")]
    pub type_name: String,
    pub novel: bool,
}

/// Ground truth for every event plus each type's planted top words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldManifest {
    pub events: BTreeMap<String, GoldEntry>,
    pub base_types: Vec<String>,
    pub novel_types: Vec<String>,
    pub planted: BTreeMap<String, Vec<String>>,
}

impl GoldManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save_document(path, "gold_manifest", self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        persist::load_document(path, "gold_manifest")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub base: Vec<EmbeddingRecord>,
    pub pending: Vec<EmbeddingRecord>,
    pub gold: GoldManifest,
}

pub const BASE_FILE: &str = "base.jsonl";
pub const PENDING_FILE: &str = "pending.jsonl";
pub const GOLD_FILE: &str = "gold.json";

impl SynthDataset {
    /// Writes `base.jsonl`, `pending.jsonl` and `gold.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_embeddings_jsonl(&dir.join(BASE_FILE), &self.base)?;
        save_embeddings_jsonl(&dir.join(PENDING_FILE), &self.pending)?;
        self.gold.save(&dir.join(GOLD_FILE))
    }
}

/// Orthonormal rows by Gram-Schmidt on Gaussian draws.
fn orthonormal(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &out {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            out.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    out
}

fn text(vocab: &[&str], weights: &WeightedIndex<f64>, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<&str> = (0..cfg.planted_words_per_text)
        .map(|_| vocab[weights.sample(rng)])
        .collect();
    words.extend((0..cfg.filler_words_per_text).map(|_| *FILLER.choose(rng).expect("filler")));
    words.shuffle(rng);
    let mut s = String::from("The ");
    s.push_str(&words.join(" "));
    s.push('.');
    s
}

/// Generates the benchmark. Centers lie on orthonormal directions scaled
/// so every pair is `separation * sigma` apart; texts draw planted words
/// with Zipf weights plus uniform filler.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let types = cfg.base_types + cfg.novel_types;
    let scale = cfg.separation * cfg.sigma / std::f64::consts::SQRT_2;
    let centers = orthonormal(types, cfg.dim, &mut rng);
    let zipf: Vec<f64> = (0..10).map(|r| 1.0 / (r + 1) as f64).collect();
    let weights = WeightedIndex::new(&zipf).expect("positive weights");

    let mut events = BTreeMap::new();
    let mut make = |t: usize, labeled: bool, rng: &mut ChaCha8Rng| {
        let (name, vocab) = TYPE_VOCAB[t];
        let id = format!("e{:05}", events.len() + 1);
        events.insert(
            id.clone(),
            GoldEntry {
                type_name: name.to_string(),
                novel: t >= cfg.base_types,
            },
        );
        let vector = centers[t]
            .iter()
            .map(|c| c * scale + cfg.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        EmbeddingRecord {
            id,
            text: Some(text(vocab, &weights, cfg, rng)),
            label: labeled.then(|| name.to_string()),
            vector,
        }
    };

    let mut base = Vec::new();
    for t in 0..cfg.base_types {
        for _ in 0..cfg.base_per_type {
            base.push(make(t, true, &mut rng));
        }
    }
    let mut pending = Vec::new();
    for t in 0..cfg.base_types {
        for _ in 0..cfg.unknown_per_type {
            pending.push(make(t, false, &mut rng));
        }
    }
    for t in cfg.base_types..types {
        for _ in 0..cfg.novel_per_type {
            pending.push(make(t, false, &mut rng));
        }
    }
    pending.shuffle(&mut rng);
    let names = |r: std::ops::Range<usize>| r.map(|t| TYPE_VOCAB[t].0.to_string()).collect();
    let planted = (0..types)
        .map(|t| {
            let (name, vocab) = TYPE_VOCAB[t];
            (name.to_string(), vocab[..5].iter().map(|w| w.to_string()).collect())
        })
        .collect();
    Ok(SynthDataset {
        base,
        pending,
        gold: GoldManifest {
            events,
            base_types: names(0..cfg.base_types),
            novel_types: names(cfg.base_types..types),
            planted,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::naming::{tokens, TokenMode};

    #[test]
    fn vocabularies_are_disjoint_and_not_stopwords() {
        let mut all: Vec<&str> = TYPE_VOCAB.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        all.extend(FILLER);
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
        for w in all {
            assert_eq!(tokens(w, TokenMode::UnicodeWords), vec![w.to_string()]);
        }
    }

    #[test]
    fn default_benchmark_shape() {
        let ds = generate(&SynthConfig::default()).unwrap();
        assert_eq!(ds.base.len(), 1000);
        assert_eq!(ds.pending.len(), 250 + 180);
        assert_eq!(ds.gold.events.len(), 1430);
        assert_eq!(ds.gold.events.values().filter(|g| g.novel).count(), 180);
        assert!(ds.base.iter().all(|r| r.label.is_some() && r.vector.len() == 32));
        assert!(ds.pending.iter().all(|r| r.label.is_none()));
        for r in &ds.base {
            assert_eq!(r.label.as_deref(), Some(ds.gold.events[&r.id].type_name.as_str()));
        }
    }

    #[test]
    fn directions_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = orthonormal(8, 32, &mut rng);
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = u[i].iter().zip(&u[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn class_means_sit_at_the_planted_separation() {
        let cfg = SynthConfig {
            base_per_type: 2000,
            unknown_per_type: 0,
            novel_types: 0,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        let mean = |t: usize| -> Vec<f64> {
            let rows = &ds.base[t * 2000..(t + 1) * 2000];
            (0..32).map(|c| rows.iter().map(|r| r.vector[c]).sum::<f64>() / 2000.0).collect()
        };
        let (a, b) = (mean(0), mean(3));
        let d = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        // Each mean carries noise of norm about sqrt(32 / 2000).
        assert!((d - 6.0).abs() < 0.4, "{d}");
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&SynthConfig::default()).unwrap();
        let b = generate(&SynthConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a.base[0].vector, c.base[0].vector);
    }
}
