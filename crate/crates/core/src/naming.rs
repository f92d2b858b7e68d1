//! Keyword extraction for discovered clusters: tokenization, an LDA topic
//! model fitted by collapsed Gibbs sampling, keyword ranking, name proposal
//! and an interactive review step.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::data_model::{TypeId, TypeRegistry};
use crate::error::{Error, Result};

const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do", "does", "doing",
    "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having", "he", "her", "here",
    "hers", "him", "his", "how", "if", "in", "into", "is", "it", "its", "itself", "just", "me", "more", "most", "my",
    "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "out", "over", "own",
    "same", "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them", "then", "there",
    "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were",
    "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "n")]
pub enum TokenMode {
    UnicodeWords,
    CharNgram(usize),
}

impl Default for TokenMode {
    fn default() -> Self {
        TokenMode::UnicodeWords
    }
}

/// Splits one text into tokens.
pub fn tokens(text: &str, mode: TokenMode) -> Vec<String> {
    match mode {
        TokenMode::UnicodeWords => text
            .unicode_words()
            .map(str::to_lowercase)
            .filter(|w| w.chars().count() > 1 && !is_stopword(w))
            .collect(),
        TokenMode::CharNgram(n) => {
            let mut out = Vec::new();
            for chunk in text.split_whitespace() {
                let chars: Vec<char> = chunk.to_lowercase().chars().collect();
                if n == 0 || chars.len() < n {
                    continue;
                }
                out.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedCorpus {
    pub documents: Vec<Vec<usize>>,
    /// Token string per id, ids numbered by first appearance.
    pub vocabulary: Vec<String>,
    pub doc_cluster: Vec<usize>,
}

impl TokenizedCorpus {
    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.vocabulary.iter().position(|t| t == token)
    }

    /// Documents belonging to `cluster`.
    pub fn cluster_docs(&self, cluster: usize) -> Vec<usize> {
        (0..self.documents.len())
            .filter(|&d| self.doc_cluster[d] == cluster)
            .collect()
    }
}

/// Tokenizes `texts`; `doc_cluster` gives the cluster of each text.
pub fn tokenize(texts: &[&str], mode: TokenMode, doc_cluster: &[usize]) -> Result<TokenizedCorpus> {
    if texts.len() != doc_cluster.len() {
        return Err(Error::Shape("texts and cluster ids differ in length".into()));
    }
    if let TokenMode::CharNgram(0) = mode {
        return Err(Error::InvalidArgument("n-gram length must be positive".into()));
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut vocabulary = Vec::new();
    let documents = texts
        .iter()
        .map(|t| {
            tokens(t, mode)
                .into_iter()
                .map(|tok| {
                    *index.entry(tok.clone()).or_insert_with(|| {
                        vocabulary.push(tok);
                        vocabulary.len() - 1
                    })
                })
                .collect()
        })
        .collect();
    if vocabulary.is_empty() {
        return Err(Error::Data("corpus has no tokens".into()));
    }
    Ok(TokenizedCorpus {
        documents,
        vocabulary,
        doc_cluster: doc_cluster.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub topics: usize,
    /// Document-topic prior; `None` means `50 / topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            topics: 1,
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            seed: 0,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }
}

/// Count tables of a fitted topic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub topics: usize,
    pub vocab_size: usize,
    pub alpha: f64,
    pub beta: f64,
    /// `topics x vocab` topic-word counts.
    pub topic_word: Vec<Vec<u32>>,
    /// `docs x topics` document-topic counts.
    pub doc_topic: Vec<Vec<u32>>,
    pub topic_totals: Vec<u32>,
    /// Topic of every token, aligned with the corpus documents.
    pub assignments: Vec<Vec<usize>>,
}

impl LdaModel {
    /// Smoothed `φ_{k,w} = (n_kw + β) / (n_k + Vβ)`.
    pub fn phi(&self, k: usize, w: usize) -> f64 {
        (self.topic_word[k][w] as f64 + self.beta) / (self.topic_totals[k] as f64 + self.vocab_size as f64 * self.beta)
    }

    /// Checks every table against the token assignments.
    pub fn check_counts(&self, corpus: &TokenizedCorpus) -> Result<()> {
        let mut tw = vec![vec![0u32; self.vocab_size]; self.topics];
        let mut totals = vec![0u32; self.topics];
        for (d, doc) in corpus.documents.iter().enumerate() {
            let mut dt = vec![0u32; self.topics];
            for (&w, &z) in doc.iter().zip(&self.assignments[d]) {
                tw[z][w] += 1;
                dt[z] += 1;
                totals[z] += 1;
            }
            if dt != self.doc_topic[d] {
                return Err(Error::Integrity(format!("document {d} topic counts drifted")));
            }
        }
        if tw != self.topic_word || totals != self.topic_totals {
            return Err(Error::Integrity("topic-word counts drifted".into()));
        }
        Ok(())
    }
}

/// Collapsed Gibbs sampling. `observe` is called after every sweep.
pub fn fit_lda_observed(
    corpus: &TokenizedCorpus,
    cfg: &LdaConfig,
    mut observe: impl FnMut(usize, &LdaModel),
) -> Result<LdaModel> {
    let (k, v) = (cfg.topics, corpus.vocab_size());
    let alpha = cfg.alpha();
    if k == 0 || k > v {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= topics <= vocabulary size ({v}), got {k}"
        )));
    }
    if !(alpha > 0.0 && cfg.beta > 0.0) {
        return Err(Error::InvalidArgument("alpha and beta must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m = LdaModel {
        topics: k,
        vocab_size: v,
        alpha,
        beta: cfg.beta,
        topic_word: vec![vec![0; v]; k],
        doc_topic: vec![vec![0; k]; corpus.documents.len()],
        topic_totals: vec![0; k],
        assignments: Vec::with_capacity(corpus.documents.len()),
    };
    for (d, doc) in corpus.documents.iter().enumerate() {
        let z: Vec<usize> = doc.iter().map(|_| rng.gen_range(0..k)).collect();
        for (&w, &t) in doc.iter().zip(&z) {
            m.topic_word[t][w] += 1;
            m.doc_topic[d][t] += 1;
            m.topic_totals[t] += 1;
        }
        m.assignments.push(z);
    }
    let vbeta = v as f64 * cfg.beta;
    let mut weights = vec![0.0f64; k];
    for sweep in 0..cfg.iterations {
        for (d, doc) in corpus.documents.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = m.assignments[d][i];
                m.topic_word[old][w] -= 1;
                m.doc_topic[d][old] -= 1;
                m.topic_totals[old] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    total += (m.doc_topic[d][t] as f64 + alpha) * (m.topic_word[t][w] as f64 + cfg.beta)
                        / (m.topic_totals[t] as f64 + vbeta);
                    weights[t] = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);
                m.assignments[d][i] = new;
                m.topic_word[new][w] += 1;
                m.doc_topic[d][new] += 1;
                m.topic_totals[new] += 1;
            }
        }
        observe(sweep, &m);
    }
    Ok(m)
}

pub fn fit_lda(corpus: &TokenizedCorpus, cfg: &LdaConfig) -> Result<LdaModel> {
    fit_lda_observed(corpus, cfg, |_, _| {})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub word: String,
    pub score: f64,
}

fn ranked(scores: Vec<(usize, f64)>, corpus: &TokenizedCorpus, m: usize) -> Vec<Keyword> {
    let mut scores = scores;
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores
        .into_iter()
        .take(m)
        .map(|(w, score)| Keyword {
            word: corpus.vocabulary[w].clone(),
            score,
        })
        .collect()
}

/// Top `m` words of the dominant topic of `cluster_docs` (largest summed
/// document-topic count, ties to the lowest topic), ranked by `φ` with ties
/// broken by token id.
pub fn top_keywords(model: &LdaModel, corpus: &TokenizedCorpus, cluster_docs: &[usize], m: usize) -> Vec<Keyword> {
    if cluster_docs.is_empty() || m == 0 {
        return Vec::new();
    }
    let mut mass = vec![0u64; model.topics];
    for &d in cluster_docs {
        for (t, &c) in model.doc_topic[d].iter().enumerate() {
            mass[t] += c as u64;
        }
    }
    let mut topic = 0;
    for t in 1..model.topics {
        if mass[t] > mass[topic] {
            topic = t;
        }
    }
    let scores = (0..model.vocab_size).map(|w| (w, model.phi(topic, w))).collect();
    ranked(scores, corpus, m)
}

/// TF-IDF keywords treating each cluster as one document.
pub fn tfidf_keywords(corpus: &TokenizedCorpus, cluster: usize, m: usize) -> Vec<Keyword> {
    let clusters: Vec<usize> = {
        let mut c = corpus.doc_cluster.clone();
        c.sort_unstable();
        c.dedup();
        c
    };
    let v = corpus.vocab_size();
    let mut present = vec![0usize; v];
    let mut tf = vec![0usize; v];
    for &c in &clusters {
        let mut seen = vec![false; v];
        for d in corpus.cluster_docs(c) {
            for &w in &corpus.documents[d] {
                seen[w] = true;
                if c == cluster {
                    tf[w] += 1;
                }
            }
        }
        for (p, s) in present.iter_mut().zip(seen) {
            *p += s as usize;
        }
    }
    let total: usize = tf.iter().sum();
    if total == 0 || m == 0 {
        return Vec::new();
    }
    let nc = clusters.len() as f64;
    let scores = (0..v)
        .filter(|&w| tf[w] > 0)
        .map(|w| {
            let idf = ((1.0 + nc) / (1.0 + present[w] as f64)).ln() + 1.0;
            (w, tf[w] as f64 / total as f64 * idf)
        })
        .collect();
    ranked(scores, corpus, m)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "name")]
pub enum NameStatus {
    Proposed,
    Accepted,
    Renamed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterKeywords {
    pub cluster: usize,
    pub keywords: Vec<Keyword>,
    pub proposed_name: String,
    pub status: NameStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub type_id: Option<TypeId>,
}

impl ClusterKeywords {
    pub fn name(&self) -> &str {
        match &self.status {
            NameStatus::Renamed(n) => n,
            _ => &self.proposed_name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordReport {
    pub clusters: Vec<ClusterKeywords>,
}

/// Name proposal: the top two keywords joined by `_`, or
/// `unnamed_cluster_<id>` without keywords.
pub fn propose_name(cluster: usize, keywords: &[Keyword]) -> String {
    if keywords.is_empty() {
        return format!("unnamed_cluster_{cluster}");
    }
    keywords
        .iter()
        .take(2)
        .map(|k| k.word.as_str())
        .collect::<Vec<_>>()
        .join("_")
}

pub fn propose_names(clusters: Vec<(usize, Vec<Keyword>)>) -> KeywordReport {
    KeywordReport {
        clusters: clusters
            .into_iter()
            .map(|(cluster, keywords)| ClusterKeywords {
                proposed_name: propose_name(cluster, &keywords),
                cluster,
                keywords,
                status: NameStatus::Proposed,
                type_id: None,
            })
            .collect(),
    }
}

impl KeywordReport {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::persist::save_document(path, "keyword_report", self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::persist::load_document(path, "keyword_report")
    }

    /// Renames registry entries linked to clusters whose name changed in review.
    pub fn apply_to(&self, registry: &mut TypeRegistry) -> Result<()> {
        for c in &self.clusters {
            if let Some(id) = c.type_id {
                let current = registry
                    .get(id)
                    .ok_or_else(|| Error::Integrity(format!("report references unknown type {id}")))?;
                if current.name != c.name() {
                    registry.rename(id, c.name())?;
                }
            }
        }
        Ok(())
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(char::is_whitespace)
}

/// Walks every still-proposed cluster, showing keywords and sample texts,
/// and reads `a` (accept), `r <name>` (rename) or `s` (skip) per cluster.
/// End of input leaves the remaining clusters untouched.
pub fn review(
    report: &KeywordReport,
    samples: &BTreeMap<usize, Vec<String>>,
    input: &mut impl BufRead,
    output: &mut impl Write,
) -> Result<KeywordReport> {
    let io = |e| Error::io("review terminal", e);
    let mut out = report.clone();
    'clusters: for c in out.clusters.iter_mut() {
        if c.status != NameStatus::Proposed {
            continue;
        }
        let words: Vec<&str> = c.keywords.iter().map(|k| k.word.as_str()).collect();
        writeln!(output, "cluster {}: {}", c.cluster, words.join(", ")).map_err(io)?;
        for s in samples.get(&c.cluster).into_iter().flatten().take(3) {
            writeln!(output, "  | {s}").map_err(io)?;
        }
        loop {
            write!(output, "name [{}] (a)ccept, (r)ename <name>, (s)kip: ", c.proposed_name).map_err(io)?;
            output.flush().map_err(io)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(io)? == 0 {
                break 'clusters;
            }
            let line = line.trim();
            let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            match cmd {
                "a" | "accept" => {
                    c.status = NameStatus::Accepted;
                    break;
                }
                "s" | "skip" => break,
                "r" | "rename" if valid_name(rest.trim()) => {
                    c.status = NameStatus::Renamed(rest.trim().to_string());
                    break;
                }
                _ => writeln!(output, "expected 'a', 's' or 'r <name>' (name without spaces)").map_err(io)?,
            }
        }
    }
    Ok(out)
}
