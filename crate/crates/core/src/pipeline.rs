//! Round orchestration: configuration, the on-disk workspace and the stage
//! commands behind the command-line front end.
//!
//! A workspace directory holds `state.json`, `store.json` and
//! `registry.json` for the latest committed round plus one append-only
//! `round_NNN/` directory per round with every artifact that round produced.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anomaly::{
    error_mass_precision, fit_band, retrain_decoder_frozen, score, triage, BandStrategy, TriageReport,
    TriageResult, Verdict,
};
use crate::autoencoder::{init_params, pretrain, Activation, Checkpoint, LayerSpec, MlpParams, Phase, Tensor, TrainConfig};
use crate::cluster_suite::{cluster_anomalies, ClusterConfig, ClusterMethod, ClusterReport};
use crate::data_model::{
    build_constraints, expand_base, register_type, DatasetStore, Event, Status, TypeId, TypeRegistry,
};
use crate::embedding::{builtin_embed, load_embeddings, EmbeddingFormat, Standardizer};
use crate::error::{Error, Result};
use crate::eval_metrics::{ami, ari, auc_prc, auc_roc, partition_metrics, MetricMap};
use crate::matrix::Matrix;
use crate::naming::{
    fit_lda, propose_names, tfidf_keywords, tokenize, top_keywords, Keyword, KeywordReport, LdaConfig, TokenMode,
};
use crate::persist;
use crate::semi_dec::{assign_types, init_centroids_supervised, resolve_pairs, train_cluster_phase, Centroids, ClusterTrainConfig};
use crate::synth::{GoldManifest, BASE_FILE, GOLD_FILE, PENDING_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSource {
    /// Vectors come from the embedding files.
    #[default]
    File,
    /// Vectors are recomputed from the event texts with the hashing embedder.
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub base: PathBuf,
    pub pending: PathBuf,
    pub gold: Option<PathBuf>,
    pub source: VectorSource,
    pub builtin_dim: usize,
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            base: PathBuf::from(BASE_FILE),
            pending: PathBuf::from(PENDING_FILE),
            gold: None,
            source: VectorSource::File,
            builtin_dim: 64,
            standardize: true,
        }
    }
}

impl DataConfig {
    /// Points at the files `synth` writes into `dir`; the gold manifest is
    /// picked up when present.
    pub fn from_dir(dir: &Path) -> Self {
        let gold = dir.join(GOLD_FILE);
        Self {
            base: dir.join(BASE_FILE),
            pending: dir.join(PENDING_FILE),
            gold: gold.exists().then_some(gold),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub activation: Activation,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 64],
            latent: 10,
            activation: Activation::Relu,
        }
    }
}

impl AutoencoderConfig {
    pub fn spec(&self, input_dim: usize) -> Result<LayerSpec> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.latent);
        LayerSpec::new(sizes, self.activation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub max_pairs_per_class: usize,
    pub seed: u64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            max_pairs_per_class: 200,
            seed: 0,
        }
    }
}

/// Feature space the anomaly clustering runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    /// Standardized input embeddings.
    #[default]
    Input,
    /// Encoder output.
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    pub method: ClusterMethod,
    pub space: FeatureSpace,
    pub params: ClusterConfig,
    /// Also run every other method with the selected cluster count.
    pub bakeoff: bool,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            method: ClusterMethod::Gmm,
            space: FeatureSpace::Input,
            params: ClusterConfig {
                eps: 6.0,
                ..ClusterConfig::default()
            },
            bakeoff: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NamingConfig {
    pub lda: LdaConfig,
    pub top_m: usize,
    pub mode: TokenMode,
    /// Below this many tokens the topic model is skipped for TF-IDF.
    pub min_tokens: usize,
}

impl Default for NamingConfig {
    fn default() -> Self {
        Self {
            lda: LdaConfig::default(),
            top_m: 5,
            mode: TokenMode::UnicodeWords,
            min_tokens: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub autoencoder: AutoencoderConfig,
    pub pretrain: TrainConfig,
    pub cluster: ClusterTrainConfig,
    pub constraints: ConstraintConfig,
    pub decoder: TrainConfig,
    pub band: BandStrategy,
    pub anomaly: AnomalyConfig,
    pub naming: NamingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            pretrain: TrainConfig::default(),
            cluster: ClusterTrainConfig::default(),
            constraints: ConstraintConfig::default(),
            decoder: TrainConfig::default(),
            band: BandStrategy::default(),
            anomaly: AnomalyConfig::default(),
            naming: NamingConfig::default(),
        }
        .with_seed(0)
    }
}

/// FNV-1a over the seed bytes and a stage name, kept below 2^63 so it fits
/// a TOML integer.
fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(stage.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h & (i64::MAX as u64)
}

impl PipelineConfig {
    /// Sets the master seed and derives every stage seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.pretrain.seed = stage_seed(seed, "pretrain");
        self.cluster.seed = stage_seed(seed, "cluster");
        self.constraints.seed = stage_seed(seed, "constraints");
        self.decoder.seed = stage_seed(seed, "decoder");
        self.anomaly.params.seed = stage_seed(seed, "anomaly");
        self.naming.lda.seed = stage_seed(seed, "lda");
        self
    }

    fn init_seed(&self) -> u64 {
        stage_seed(self.seed, "init")
    }

    fn band_seed(&self) -> u64 {
        stage_seed(self.seed, "band")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.decoder.validate()?;
        self.cluster.validate()?;
        if self.naming.top_m == 0 {
            return Err(Error::Config("naming.top_m must be at least 1".into()));
        }
        if self.data.source == VectorSource::Builtin && self.data.builtin_dim <= self.autoencoder.latent {
            return Err(Error::Config("builtin_dim must exceed the latent size".into()));
        }
        Ok(())
    }
}

/// Every event of the base and pending files, base rows first.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub ids: Vec<String>,
    pub vectors: Matrix<f64>,
    pub texts: Vec<Option<String>>,
    pub base_labels: Vec<String>,
    pub gold: Option<GoldManifest>,
}

impl Inputs {
    pub fn base_count(&self) -> usize {
        self.base_labels.len()
    }

    /// Seed type names in order of first appearance in the base file.
    pub fn seed_types(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.base_labels
            .iter()
            .filter(|l| seen.insert(l.as_str()))
            .cloned()
            .collect()
    }

    fn initial_store(&self) -> Result<DatasetStore> {
        let names = self.seed_types();
        let id_of: HashMap<&str, TypeId> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), TypeId(i as u32)))
            .collect();
        let nb = self.base_count();
        let events = self
            .ids
            .iter()
            .enumerate()
            .map(|(row, id)| {
                if row < nb {
                    Event::base(id.clone(), row, id_of[self.base_labels[row].as_str()])
                } else {
                    Event::pending(id.clone(), row)
                }
            })
            .collect();
        DatasetStore::new(events)
    }
}

pub fn load_inputs(cfg: &DataConfig) -> Result<Inputs> {
    let base = load_embeddings::<f64>(&cfg.base, EmbeddingFormat::from_path(&cfg.base))?;
    let pending = load_embeddings::<f64>(&cfg.pending, EmbeddingFormat::from_path(&cfg.pending))?;
    let base_labels = base
        .ids
        .iter()
        .zip(&base.labels)
        .map(|(id, l)| {
            l.clone()
                .ok_or_else(|| Error::Data(format!("base event '{id}' has no label")))
        })
        .collect::<Result<Vec<_>>>()?;
    if base_labels.is_empty() {
        return Err(Error::Data("base set is empty".into()));
    }
    let ids: Vec<String> = base.ids.iter().chain(&pending.ids).cloned().collect();
    let texts: Vec<Option<String>> = base.texts.iter().chain(&pending.texts).cloned().collect();
    let vectors = match cfg.source {
        VectorSource::File => {
            if pending.is_empty() {
                base.matrix.data.clone()
            } else {
                base.matrix.data.vstack(&pending.matrix.data)?
            }
        }
        VectorSource::Builtin => {
            let t = texts
                .iter()
                .zip(&ids)
                .map(|(t, id)| {
                    t.as_deref()
                        .ok_or_else(|| Error::Data(format!("event '{id}' has no text to embed")))
                })
                .collect::<Result<Vec<&str>>>()?;
            builtin_embed::<f64, _>(&t, cfg.builtin_dim, 0)?.data
        }
    };
    let gold = cfg.gold.as_deref().map(GoldManifest::load).transpose()?;
    Ok(Inputs {
        ids,
        vectors,
        texts,
        base_labels,
        gold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub pretrain: Vec<f64>,
    pub cluster: Vec<f64>,
    pub decoder: Vec<f64>,
}

/// Everything the detection stage needs from training.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: MlpParams<f64>,
    pub centroids: Centroids<f64>,
    pub standardizer: Standardizer<f64>,
}

impl TrainedModel {
    pub fn checkpoint(&self) -> Checkpoint {
        let types: Vec<f64> = self.centroids.type_ids.iter().map(|t| f64::from(t.0)).collect();
        Checkpoint::from_params(&self.params, Phase::DecoderRetrained)
            .with_tensor("centroids", Tensor::from_matrix(&self.centroids.means))
            .with_tensor("centroid_types", Tensor::from_vector(&types))
            .with_tensor("standardizer.mean", Tensor::from_vector(&self.standardizer.mean))
            .with_tensor("standardizer.std", Tensor::from_vector(&self.standardizer.std))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let types = ck
            .tensor("centroid_types")?
            .data
            .iter()
            .map(|&v| TypeId(v as u32))
            .collect();
        Ok(Self {
            params: ck.params()?,
            centroids: Centroids::new(ck.tensor("centroids")?.to_matrix()?, types)?,
            standardizer: Standardizer {
                mean: ck.tensor("standardizer.mean")?.data.clone(),
                std: ck.tensor("standardizer.std")?.data.clone(),
            },
        })
    }

    fn features(&self, inputs: &Inputs, rows: &[usize]) -> Result<Matrix<f64>> {
        self.standardizer.transform(&inputs.vectors.select_rows(rows))
    }
}

/// Runs pretraining, the constrained clustering phase and the frozen-encoder
/// decoder retrain on every resolved event of `store`.
pub fn train(cfg: &PipelineConfig, inputs: &Inputs, store: &DatasetStore) -> Result<(TrainedModel, Losses)> {
    let resolved: Vec<&Event> = store.resolved_events().collect();
    let rows: Vec<usize> = resolved.iter().map(|e| e.vector_row).collect();
    let labels: Vec<TypeId> = resolved.iter().map(|e| e.label.expect("resolved")).collect();
    let raw = inputs.vectors.select_rows(&rows);
    let standardizer = if cfg.data.standardize {
        Standardizer::fit(&raw)?
    } else {
        Standardizer::identity(raw.cols())
    };
    let x = standardizer.transform(&raw)?;

    let spec = cfg.autoencoder.spec(x.cols())?;
    let pre = pretrain(&init_params::<f64>(&spec, cfg.init_seed())?, &x, &cfg.pretrain)?;

    let types: Vec<TypeId> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mu = init_centroids_supervised(&pre.params.encode(&x)?, &labels, &types)?;

    let owned: Vec<Event> = resolved.iter().map(|e| (*e).clone()).collect();
    let set = build_constraints(&owned, cfg.constraints.max_pairs_per_class, cfg.constraints.seed)?;
    let index: HashMap<&str, usize> = owned.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    let pairs = resolve_pairs(&set, &index)?;

    let fit = train_cluster_phase(&pre.params, &x, &pairs, &mu, &cfg.cluster)?;
    let dec = retrain_decoder_frozen(&fit.params, &x, &cfg.decoder)?;
    let model = TrainedModel {
        params: dec.params,
        centroids: fit.centroids,
        standardizer,
    };
    let losses = Losses {
        pretrain: pre.losses,
        cluster: fit.losses,
        decoder: dec.losses,
    };
    Ok((model, losses))
}

/// Scores pending events, fits the band and triages.
pub fn detect(cfg: &PipelineConfig, inputs: &Inputs, store: &DatasetStore, model: &TrainedModel) -> Result<TriageReport> {
    let pending: Vec<&Event> = store.pending_events().collect();
    if pending.is_empty() {
        let band = crate::anomaly::ThresholdBand::new(0.0, 0.0)?;
        return Ok(TriageReport::build(&[], &[], &[], band, cfg.band));
    }
    let ids: Vec<String> = pending.iter().map(|e| e.id.clone()).collect();
    let rows: Vec<usize> = pending.iter().map(|e| e.vector_row).collect();
    let x = model.features(inputs, &rows)?;
    let errors = score(&model.params, &x)?;
    let assigned = assign_types(&model.params.encode(&x)?, &model.centroids)?;
    let band = fit_band(&errors, &cfg.band, cfg.band_seed())?;
    // Validates ids and lengths the same way the report is built.
    triage(&ids, &errors, &band, &assigned)?;
    Ok(TriageReport::build(&ids, &errors, &assigned, band, cfg.band))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BakeoffEntry {
    pub method: ClusterMethod,
    pub num_clusters: usize,
    pub labels: Vec<usize>,
}

/// The main clustering plus, optionally, every other method at the same k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    pub report: ClusterReport,
    pub bakeoff: Vec<BakeoffEntry>,
}

fn abnormal_rows(store: &DatasetStore, report: &TriageReport) -> Result<(Vec<String>, Vec<usize>)> {
    let index = store.index_of();
    let ids: Vec<String> = report.result().abnormal;
    let rows = ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|&i| store.events[i].vector_row)
                .ok_or_else(|| Error::Integrity(format!("triage references unknown id '{id}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ids, rows))
}

fn anomaly_features(cfg: &PipelineConfig, inputs: &Inputs, model: &TrainedModel, rows: &[usize]) -> Result<Matrix<f64>> {
    let x = model.features(inputs, rows)?;
    match cfg.anomaly.space {
        FeatureSpace::Input => Ok(x),
        FeatureSpace::Latent => model.params.encode(&x),
    }
}

pub fn cluster(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    store: &DatasetStore,
    model: &TrainedModel,
    triage: &TriageReport,
) -> Result<ClusterOutcome> {
    let (ids, rows) = abnormal_rows(store, triage)?;
    let x = anomaly_features(cfg, inputs, model, &rows)?;
    let params = &cfg.anomaly.params;
    let main = cluster_anomalies(&x, cfg.anomaly.method, params)?;
    let report = ClusterReport::build(&ids, &main, params)?;
    let mut bakeoff = Vec::new();
    if cfg.anomaly.bakeoff && x.rows() >= 2 {
        let fixed = ClusterConfig {
            k: Some(main.num_clusters()),
            ..params.clone()
        };
        for method in ClusterMethod::ALL {
            if method == cfg.anomaly.method {
                continue;
            }
            let c = cluster_anomalies(&x, method, &fixed)?;
            bakeoff.push(BakeoffEntry {
                method,
                num_clusters: c.num_clusters(),
                labels: c.labels,
            });
        }
    }
    Ok(ClusterOutcome { report, bakeoff })
}

/// Topic-model keywords and proposed names per cluster.
pub fn name(cfg: &PipelineConfig, inputs: &Inputs, clusters: &ClusterReport) -> Result<KeywordReport> {
    let k = clusters.num_clusters();
    if k == 0 {
        return Ok(KeywordReport { clusters: vec![] });
    }
    let row_of: HashMap<&str, usize> = inputs.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut texts = Vec::with_capacity(clusters.labels.len());
    let mut doc_cluster = Vec::with_capacity(clusters.labels.len());
    for l in &clusters.labels {
        let row = *row_of
            .get(l.id.as_str())
            .ok_or_else(|| Error::Integrity(format!("cluster report references unknown id '{}'", l.id)))?;
        if let Some(t) = &inputs.texts[row] {
            texts.push(t.as_str());
            doc_cluster.push(l.cluster);
        }
    }
    let corpus = if texts.is_empty() {
        None
    } else {
        match tokenize(&texts, cfg.naming.mode, &doc_cluster) {
            Ok(c) => Some(c),
            Err(Error::Data(_)) => None,
            Err(e) => return Err(e),
        }
    };
    let m = cfg.naming.top_m;
    let keywords: Vec<(usize, Vec<Keyword>)> = match corpus {
        None => (0..k).map(|c| (c, vec![])).collect(),
        Some(corpus) if corpus.token_count() < cfg.naming.min_tokens => {
            (0..k).map(|c| (c, tfidf_keywords(&corpus, c, m))).collect()
        }
        Some(corpus) => {
            let lda = LdaConfig {
                topics: k,
                ..cfg.naming.lda.clone()
            };
            let model = fit_lda(&corpus, &lda)?;
            (0..k)
                .map(|c| (c, top_keywords(&model, &corpus, &corpus.cluster_docs(c), m)))
                .collect()
        }
    };
    Ok(propose_names(keywords))
}

/// `name`, or `name_2`, `name_3`, ... whichever is free first.
fn unique_name(name: &str, taken: &BTreeSet<String>) -> String {
    if !taken.contains(name) {
        return name.to_owned();
    }
    (2..)
        .map(|i| format!("{name}_{i}"))
        .find(|n| !taken.contains(n))
        .expect("unbounded")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub registry_size: usize,
    pub base_before: usize,
    pub base_after: usize,
    pub normal: usize,
    pub abnormal: usize,
    pub deferred: usize,
    pub new_types: Vec<String>,
    pub metrics: MetricMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    /// Number of committed rounds.
    pub round: u32,
    /// Checkpoint of the latest round, relative to the workspace.
    pub checkpoint: Option<String>,
    pub registry: String,
    pub store: String,
    pub deferred: Vec<String>,
    pub history: Vec<RoundSummary>,
}

pub const STATE_FILE: &str = "state.json";
pub const STORE_FILE: &str = "store.json";
pub const REGISTRY_FILE: &str = "registry.json";
pub const INVALID_MARKER: &str = "INVALID";
pub const COMMITTED_MARKER: &str = "COMMITTED";

impl RoundState {
    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save_document(path, "round_state", self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        persist::load_document(path, "round_state")
    }
}

pub fn round_dir_name(round: u32) -> String {
    format!("round_{round:03}")
}

/// A workspace directory with its loaded state.
pub struct Workspace {
    pub root: PathBuf,
    pub state: RoundState,
    pub store: DatasetStore,
    pub registry: TypeRegistry,
}

impl Workspace {
    /// Loads the workspace at `root`, initializing it from `inputs` when it
    /// holds no state yet.
    pub fn open(root: &Path, cfg: &PipelineConfig, inputs: &Inputs) -> Result<Self> {
        let state_path = root.join(STATE_FILE);
        if state_path.exists() {
            let state = RoundState::load(&state_path)?;
            let store = DatasetStore::load(&root.join(&state.store))?;
            let registry = TypeRegistry::load(&root.join(&state.registry))?;
            if store.len() != inputs.ids.len() || store.events.iter().any(|e| inputs.ids[e.vector_row] != e.id) {
                return Err(Error::Data(format!(
                    "workspace {} was built from different input files",
                    root.display()
                )));
            }
            return Ok(Self {
                root: root.to_path_buf(),
                state,
                store,
                registry,
            });
        }
        let store = inputs.initial_store()?;
        let mut registry = TypeRegistry::with_seed_types(&inputs.seed_types(), cfg.autoencoder.latent)?;
        registry.recount(&store)?;
        let ws = Self {
            root: root.to_path_buf(),
            state: RoundState {
                round: 0,
                checkpoint: None,
                registry: REGISTRY_FILE.into(),
                store: STORE_FILE.into(),
                deferred: vec![],
                history: vec![],
            },
            store,
            registry,
        };
        ws.save_state()?;
        Ok(ws)
    }

    fn save_state(&self) -> Result<()> {
        self.store.save(&self.root.join(&self.state.store))?;
        self.registry.save(&self.root.join(&self.state.registry))?;
        self.state.save(&self.root.join(STATE_FILE))
    }

    /// Directory of the round in progress.
    pub fn next_round_dir(&self) -> PathBuf {
        self.root.join(round_dir_name(self.state.round + 1))
    }

    /// Directory of the latest committed round.
    pub fn last_round_dir(&self) -> Result<PathBuf> {
        if self.state.round == 0 {
            return Err(Error::InvalidArgument("no round has been committed yet".into()));
        }
        Ok(self.root.join(round_dir_name(self.state.round)))
    }

    /// Prepares the in-progress round directory. Committed rounds are never
    /// reopened; leftovers of an aborted or stepwise run are cleared.
    fn begin_round(&self) -> Result<PathBuf> {
        let dir = self.next_round_dir();
        if dir.join(COMMITTED_MARKER).exists() {
            return Err(Error::Integrity(format!(
                "{} is committed but state.json does not list it",
                dir.display()
            )));
        }
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

fn write_toml(path: &Path, cfg: &PipelineConfig) -> Result<()> {
    persist::write_atomic(path, cfg.to_toml()?.as_bytes())
}

/// Registers one type per cluster, returning the event-to-type map. Names
/// clashing with the registry or each other get a numeric suffix.
fn register_clusters(
    registry: &mut TypeRegistry,
    keywords: &mut KeywordReport,
    clusters: &ClusterReport,
    latent: &Matrix<f64>,
    round: u32,
) -> Result<BTreeMap<String, TypeId>> {
    let mut taken: BTreeSet<String> = registry.entries.iter().map(|e| e.name.clone()).collect();
    let k = clusters.num_clusters();
    let dim = latent.cols();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (l, z) in clusters.labels.iter().zip(latent.iter_rows()) {
        counts[l.cluster] += 1;
        sums[l.cluster].iter_mut().zip(z).for_each(|(s, v)| *s += v);
    }
    let mut out = BTreeMap::new();
    let mut ids = vec![TypeId(0); k];
    for c in keywords.clusters.iter_mut() {
        let name = unique_name(c.name(), &taken);
        if name != c.proposed_name {
            c.proposed_name = name.clone();
        }
        taken.insert(name.clone());
        let n = counts[c.cluster].max(1) as f64;
        let centroid = sums[c.cluster].iter().map(|s| s / n).collect();
        let id = register_type(registry, &name, centroid, round)?;
        c.type_id = Some(id);
        ids[c.cluster] = id;
    }
    for l in &clusters.labels {
        out.insert(l.id.clone(), ids[l.cluster]);
    }
    Ok(out)
}

fn metric_key(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

/// Scores one round's artifacts against the gold manifest.
pub fn evaluate(
    gold: &GoldManifest,
    triage: &TriageReport,
    clusters: &ClusterReport,
    bakeoff: &[BakeoffEntry],
    keywords: &KeywordReport,
) -> Result<MetricMap> {
    let entry = |id: &str| {
        gold.events
            .get(id)
            .ok_or_else(|| Error::Data(format!("gold manifest lacks event '{id}'")))
    };
    let mut m = MetricMap::new();
    let put = |m: &mut MetricMap, k: String, v: Option<f64>| {
        if let Some(v) = v {
            m.insert(k, v);
        }
    };

    let errors: Vec<f64> = triage.events.iter().map(|e| e.error).collect();
    let novel = triage
        .events
        .iter()
        .map(|e| entry(&e.id).map(|g| g.novel))
        .collect::<Result<Vec<bool>>>()?;
    put(&mut m, "anomaly.auc_roc".into(), auc_roc(&errors, &novel)?);
    put(&mut m, "anomaly.auc_prc".into(), auc_prc(&errors, &novel)?);

    let mut counts = BTreeMap::<Verdict, (usize, usize)>::new();
    let mut flagged_err = Vec::new();
    let mut flagged_novel = Vec::new();
    for (e, &nv) in triage.events.iter().zip(&novel) {
        let correct = match e.verdict {
            Verdict::Normal => !nv,
            Verdict::Abnormal => nv,
            Verdict::Deferred => false,
        };
        let c = counts.entry(e.verdict).or_default();
        c.0 += 1;
        c.1 += usize::from(correct);
        if e.verdict == Verdict::Abnormal {
            flagged_err.push(e.error);
            flagged_novel.push(nv);
        }
    }
    for (verdict, key) in [(Verdict::Normal, "normal"), (Verdict::Abnormal, "abnormal"), (Verdict::Deferred, "deferred")] {
        let (n, ok) = counts.get(&verdict).copied().unwrap_or((0, 0));
        m.insert(format!("triage.{key}_count"), n as f64);
        if verdict != Verdict::Deferred && n > 0 {
            m.insert(format!("triage.{key}_precision"), ok as f64 / n as f64);
        }
    }
    if let Some(p) = error_mass_precision(&flagged_err, &flagged_novel)? {
        m.insert("triage.abnormal_error_mass_precision".into(), p.error_mass);
    }

    let normal: Vec<(&str, TypeId)> = triage
        .events
        .iter()
        .filter_map(|e| e.assigned_type.map(|t| (e.id.as_str(), t)))
        .collect();
    if !normal.is_empty() {
        let pred: Vec<usize> = normal.iter().map(|(_, t)| t.0 as usize).collect();
        let truth = gold_codes(normal.iter().map(|(id, _)| *id), &entry)?;
        for (k, v) in partition_metrics(&pred, &truth)? {
            m.insert(metric_key("normal", &k), v);
        }
    }

    if !clusters.labels.is_empty() {
        let pred: Vec<usize> = clusters.labels.iter().map(|l| l.cluster).collect();
        let truth = gold_codes(clusters.labels.iter().map(|l| l.id.as_str()), &entry)?;
        m.insert("clusters.count".into(), clusters.num_clusters() as f64);
        for (k, v) in partition_metrics(&pred, &truth)? {
            m.insert(metric_key("clusters", &k), v);
        }
        for b in bakeoff {
            let p = b.method.name();
            m.insert(format!("bakeoff.{p}.ari"), ari(&b.labels, &truth)?);
            m.insert(format!("bakeoff.{p}.ami"), ami(&b.labels, &truth)?);
            m.insert(format!("bakeoff.{p}.count"), b.num_clusters as f64);
        }
        let overlaps = keyword_overlaps(gold, clusters, keywords)?;
        if !overlaps.is_empty() {
            let min = overlaps.iter().copied().fold(f64::INFINITY, f64::min);
            let mean = overlaps.iter().sum::<f64>() / overlaps.len() as f64;
            m.insert("naming.min_overlap".into(), min);
            m.insert("naming.mean_overlap".into(), mean);
        }
    }
    Ok(m)
}

fn gold_codes<'a, F>(ids: impl Iterator<Item = &'a str>, entry: &F) -> Result<Vec<usize>>
where
    F: Fn(&str) -> Result<&'a crate::synth::GoldEntry>,
{
    let mut codes: BTreeMap<&str, usize> = BTreeMap::new();
    ids.map(|id| {
        let t = entry(id)?.type_name.as_str();
        let next = codes.len();
        Ok(*codes.entry(t).or_insert(next))
    })
    .collect()
}

/// For each cluster: the share of its top keywords found among the planted
/// top words of its majority gold type.
pub fn keyword_overlaps(gold: &GoldManifest, clusters: &ClusterReport, keywords: &KeywordReport) -> Result<Vec<f64>> {
    let mut tally: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for l in &clusters.labels {
        let g = gold
            .events
            .get(&l.id)
            .ok_or_else(|| Error::Data(format!("gold manifest lacks event '{}'", l.id)))?;
        *tally.entry(l.cluster).or_default().entry(g.type_name.as_str()).or_default() += 1;
    }
    let mut out = Vec::new();
    for c in &keywords.clusters {
        let Some(types) = tally.get(&c.cluster) else { continue };
        let mut best: Option<(&str, usize)> = None;
        for (&t, &n) in types {
            if best.map_or(true, |(_, b)| n > b) {
                best = Some((t, n));
            }
        }
        let Some((t, _)) = best else { continue };
        let planted = gold.planted.get(t).cloned().unwrap_or_default();
        if planted.is_empty() {
            continue;
        }
        let hits = c.keywords.iter().filter(|k| planted.contains(&k.word)).count();
        out.push(hits as f64 / planted.len() as f64);
    }
    Ok(out)
}

/// Artifacts of one complete round.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    pub summary: RoundSummary,
    pub dir: PathBuf,
}

/// Train, detect, expand the base set, cluster and name anomalies, register
/// new types and commit. Any failure marks the round directory invalid.
pub fn run_round(cfg: &PipelineConfig, out: &Path) -> Result<RoundOutput> {
    cfg.validate()?;
    let inputs = load_inputs(&cfg.data)?;
    let mut ws = Workspace::open(out, cfg, &inputs)?;
    let dir = ws.begin_round()?;
    match round_inner(cfg, &inputs, &mut ws, &dir) {
        Ok(summary) => Ok(RoundOutput { summary, dir }),
        Err(e) => {
            let _ = persist::write_atomic(&dir.join(INVALID_MARKER), format!("{e}\n").as_bytes());
            Err(e)
        }
    }
}

fn round_inner(cfg: &PipelineConfig, inputs: &Inputs, ws: &mut Workspace, dir: &Path) -> Result<RoundSummary> {
    let round = ws.state.round + 1;
    write_toml(&dir.join("config.toml"), cfg)?;

    let (model, losses) = train(cfg, inputs, &ws.store)?;
    model.checkpoint().save(&dir.join("checkpoint.json"))?;
    persist::save_document(&dir.join("losses.json"), "losses", &losses)?;

    let report = detect(cfg, inputs, &ws.store, &model)?;
    report.save(&dir.join("triage.json"))?;
    let result: TriageResult = report.result();
    result.validate()?;

    let outcome = cluster(cfg, inputs, &ws.store, &model, &report)?;
    outcome.report.save(&dir.join("clusters.json"))?;
    persist::save_document(&dir.join("bakeoff.json"), "bakeoff", &outcome.bakeoff)?;

    let mut keywords = name(cfg, inputs, &outcome.report)?;

    let mut registry = ws.registry.clone();
    for (i, &t) in model.centroids.type_ids.iter().enumerate() {
        registry.set_centroid(t, model.centroids.means.row(i).to_vec())?;
    }
    let (_, rows) = abnormal_rows(&ws.store, &report)?;
    let latent = model.params.encode(&model.features(inputs, &rows)?)?;
    let abnormal_types = register_clusters(&mut registry, &mut keywords, &outcome.report, &latent, round)?;
    keywords.save(&dir.join("keywords.json"))?;

    let base_before = ws.store.base_count();
    let mut store = expand_base(&ws.store, &result, &abnormal_types)?;
    store.complete_round();
    registry.recount(&store)?;

    let metrics = match &inputs.gold {
        Some(g) => {
            let m = evaluate(g, &report, &outcome.report, &outcome.bakeoff, &keywords)?;
            persist::save_report(&dir.join("metrics.json"), &m)?;
            m
        }
        None => MetricMap::new(),
    };
    let summary = RoundSummary {
        round,
        registry_size: registry.len(),
        base_before,
        base_after: store.base_count(),
        normal: result.normal.len(),
        abnormal: result.abnormal.len(),
        deferred: result.deferred.len(),
        new_types: keywords.clusters.iter().map(|c| c.name().to_owned()).collect(),
        metrics,
    };
    persist::save_report(&dir.join("summary.json"), &summary)?;
    store.save(&dir.join(STORE_FILE))?;
    registry.save(&dir.join(REGISTRY_FILE))?;

    ws.store = store;
    ws.registry = registry;
    ws.state.round = round;
    ws.state.checkpoint = Some(format!("{}/checkpoint.json", round_dir_name(round)));
    ws.state.deferred = ws
        .store
        .events
        .iter()
        .filter(|e| e.status == Status::Deferred)
        .map(|e| e.id.clone())
        .collect();
    ws.state.history.push(summary.clone());
    persist::write_atomic(&dir.join(COMMITTED_MARKER), b"")?;
    ws.save_state()?;
    Ok(summary)
}

/// The stage commands below work on the round in progress, each reading
/// the previous stage's artifact from its directory. `run_round` redoes
/// all stages and commits.
pub struct Stepwise {
    pub cfg: PipelineConfig,
    pub inputs: Inputs,
    pub ws: Workspace,
}

impl Stepwise {
    pub fn open(cfg: &PipelineConfig, out: &Path) -> Result<Self> {
        cfg.validate()?;
        let inputs = load_inputs(&cfg.data)?;
        let ws = Workspace::open(out, cfg, &inputs)?;
        Ok(Self {
            cfg: cfg.clone(),
            inputs,
            ws,
        })
    }

    fn dir(&self) -> PathBuf {
        self.ws.next_round_dir()
    }

    fn model(&self) -> Result<TrainedModel> {
        TrainedModel::from_checkpoint(&Checkpoint::load(&self.dir().join("checkpoint.json"))?)
    }

    pub fn train(&self) -> Result<PathBuf> {
        let dir = self.ws.begin_round()?;
        write_toml(&dir.join("config.toml"), &self.cfg)?;
        let (model, losses) = train(&self.cfg, &self.inputs, &self.ws.store)?;
        let path = dir.join("checkpoint.json");
        model.checkpoint().save(&path)?;
        persist::save_document(&dir.join("losses.json"), "losses", &losses)?;
        Ok(path)
    }

    pub fn detect(&self) -> Result<TriageReport> {
        let report = detect(&self.cfg, &self.inputs, &self.ws.store, &self.model()?)?;
        report.save(&self.dir().join("triage.json"))?;
        Ok(report)
    }

    pub fn cluster(&self) -> Result<ClusterOutcome> {
        let triage = TriageReport::load(&self.dir().join("triage.json"))?;
        let out = cluster(&self.cfg, &self.inputs, &self.ws.store, &self.model()?, &triage)?;
        out.report.save(&self.dir().join("clusters.json"))?;
        persist::save_document(&self.dir().join("bakeoff.json"), "bakeoff", &out.bakeoff)?;
        Ok(out)
    }

    pub fn name(&self) -> Result<KeywordReport> {
        let clusters = ClusterReport::load(&self.dir().join("clusters.json"))?;
        let report = name(&self.cfg, &self.inputs, &clusters)?;
        report.save(&self.dir().join("keywords.json"))?;
        Ok(report)
    }

    /// Scores the artifacts of the round in progress, or of the latest
    /// committed round when none is in progress.
    pub fn evaluate(&self) -> Result<MetricMap> {
        let gold = self
            .inputs
            .gold
            .as_ref()
            .ok_or_else(|| Error::Config("evaluation needs data.gold".into()))?;
        let dir = if self.dir().join("triage.json").exists() {
            self.dir()
        } else {
            self.ws.last_round_dir()?
        };
        let triage = TriageReport::load(&dir.join("triage.json"))?;
        let clusters = match ClusterReport::load(&dir.join("clusters.json")) {
            Ok(c) => c,
            Err(Error::Io { .. }) => ClusterReport {
                method: self.cfg.anomaly.method,
                config: self.cfg.anomaly.params.clone(),
                labels: vec![],
                centroids: vec![],
                selection: vec![],
            },
            Err(e) => return Err(e),
        };
        let bakeoff: Vec<BakeoffEntry> = match persist::load_document(&dir.join("bakeoff.json"), "bakeoff") {
            Ok(b) => b,
            Err(Error::Io { .. }) => vec![],
            Err(e) => return Err(e),
        };
        let keywords = match KeywordReport::load(&dir.join("keywords.json")) {
            Ok(k) => k,
            Err(Error::Io { .. }) => KeywordReport { clusters: vec![] },
            Err(e) => return Err(e),
        };
        let m = evaluate(gold, &triage, &clusters, &bakeoff, &keywords)?;
        persist::save_report(&dir.join("metrics.json"), &m)?;
        Ok(m)
    }
}

/// Path of the reviewed keyword report of a committed round.
pub const REVIEW_FILE: &str = "review.json";

/// Runs the review loop over the latest committed round's keywords and
/// applies renames to the workspace registry.
pub fn run_review(
    out: &Path,
    input: &mut impl std::io::BufRead,
    output: &mut impl std::io::Write,
) -> Result<KeywordReport> {
    let state = RoundState::load(&out.join(STATE_FILE))?;
    if state.round == 0 {
        return Err(Error::InvalidArgument("no round has been committed yet".into()));
    }
    let dir = out.join(round_dir_name(state.round));
    let reviewed = dir.join(REVIEW_FILE);
    let report = if reviewed.exists() {
        KeywordReport::load(&reviewed)?
    } else {
        KeywordReport::load(&dir.join("keywords.json"))?
    };
    let store = DatasetStore::load(&out.join(&state.store))?;
    let clusters = ClusterReport::load(&dir.join("clusters.json"))?;
    let texts = sample_texts(&store, &clusters, out)?;
    let updated = crate::naming::review(&report, &texts, input, output)?;
    let mut registry = TypeRegistry::load(&out.join(&state.registry))?;
    updated.apply_to(&mut registry)?;
    updated.save(&reviewed)?;
    registry.save(&out.join(&state.registry))?;
    Ok(updated)
}

/// Up to three texts per cluster for the reviewer, read from the round's
/// config so the review does not need the data flags again.
fn sample_texts(store: &DatasetStore, clusters: &ClusterReport, out: &Path) -> Result<BTreeMap<usize, Vec<String>>> {
    let state = RoundState::load(&out.join(STATE_FILE))?;
    let cfg = PipelineConfig::load(&out.join(round_dir_name(state.round)).join("config.toml"))?;
    let mut samples: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let Ok(inputs) = load_inputs(&cfg.data) else {
        return Ok(samples);
    };
    let index = store.index_of();
    for l in &clusters.labels {
        let v = samples.entry(l.cluster).or_default();
        if v.len() >= 3 {
            continue;
        }
        if let Some(&i) = index.get(l.id.as_str()) {
            if let Some(t) = &inputs.texts[store.events[i].vector_row] {
                v.push(t.clone());
            }
        }
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MetricStats>,
}

pub const REPEATS_FILE: &str = "repeats.json";

/// Mean and sample standard deviation of every metric present in all runs.
pub fn aggregate(seeds: Vec<u64>, runs: &[MetricMap]) -> RepeatReport {
    let mut metrics = BTreeMap::new();
    if let Some(first) = runs.first() {
        for key in first.keys() {
            let values: Vec<f64> = runs.iter().filter_map(|m| m.get(key).copied()).collect();
            if values.len() != runs.len() {
                continue;
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            metrics.insert(key.clone(), MetricStats { mean, std, values });
        }
    }
    RepeatReport { seeds, metrics }
}

pub fn repeat_dir_name(i: usize) -> String {
    format!("repeat_{i:02}")
}

/// Runs one round per replica, seeds `seed..seed + repeats`, in parallel;
/// each replica owns `out/repeat_NN`.
pub fn run_repeats(cfg: &PipelineConfig, out: &Path, repeats: usize) -> Result<RepeatReport> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..repeats as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let results: Vec<Result<RoundOutput>> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .enumerate()
            .map(|(i, &seed)| {
                let c = cfg.clone().with_seed(seed);
                let dir = out.join(repeat_dir_name(i));
                s.spawn(move || run_round(&c, &dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replica thread panicked"))
            .collect()
    });
    let runs = results
        .into_iter()
        .map(|r| r.map(|o| o.summary.metrics))
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate(seeds, &runs);
    persist::save_report(&out.join(REPEATS_FILE), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn small_synth(dir: &Path, seed: u64) -> PipelineConfig {
        let s = SynthConfig {
            base_types: 3,
            novel_types: 2,
            base_per_type: 60,
            novel_per_type: 30,
            unknown_per_type: 10,
            dim: 12,
            separation: 8.0,
            seed,
            ..SynthConfig::default()
        };
        generate(&s).unwrap().write(dir).unwrap();
        let mut cfg = PipelineConfig::default().with_seed(seed);
        cfg.data = DataConfig::from_dir(dir);
        cfg.autoencoder.hidden = vec![16];
        cfg.autoencoder.latent = 4;
        cfg.pretrain.epochs = 10;
        cfg.cluster.epochs = 4;
        cfg.decoder.epochs = 10;
        cfg.naming.lda.iterations = 100;
        cfg
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = PipelineConfig::default().with_seed(7);
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 3\n[pretrain]\nepochs = 2\n").unwrap();
        assert_eq!(cfg.pretrain.epochs, 2);
        assert_eq!(cfg.pretrain.batch_size, 32);
        assert_eq!(cfg.autoencoder, AutoencoderConfig::default());
    }

    #[test]
    fn unknown_toml_is_a_config_error() {
        let err = PipelineConfig::from_toml("seed = \"x\"").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn misspelled_keys_are_rejected() {
        let err = PipelineConfig::from_toml("[autoencoder]\nlatnet = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn stage_seeds_differ_and_follow_the_master_seed() {
        let a = PipelineConfig::default().with_seed(1);
        let b = PipelineConfig::default().with_seed(2);
        assert_ne!(a.pretrain.seed, a.decoder.seed);
        assert_ne!(a.pretrain.seed, b.pretrain.seed);
        assert!(a.naming.lda.seed <= i64::MAX as u64);
    }

    #[test]
    fn unique_name_appends_suffixes() {
        let taken: BTreeSet<String> = ["a".into(), "a_2".into()].into();
        assert_eq!(unique_name("b", &taken), "b");
        assert_eq!(unique_name("a", &taken), "a_3");
    }

    #[test]
    fn aggregate_uses_sample_std() {
        let runs = vec![
            MetricMap::from([("x".into(), 1.0), ("y".into(), 0.0)]),
            MetricMap::from([("x".into(), 3.0)]),
        ];
        let r = aggregate(vec![0, 1], &runs);
        assert_eq!(r.metrics["x"].mean, 2.0);
        assert!((r.metrics["x"].std - 2f64.sqrt()).abs() < 1e-12);
        assert!(!r.metrics.contains_key("y"));
    }

    #[test]
    fn round_commits_and_grows_the_registry() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_synth(&tmp.path().join("data"), 5);
        let out = tmp.path().join("ws");
        let r = run_round(&cfg, &out).unwrap();
        let s = &r.summary;
        assert_eq!(s.base_after, s.base_before + s.normal);
        assert_eq!(s.registry_size, 3 + s.new_types.len());
        assert!(r.dir.join(COMMITTED_MARKER).exists());
        let state = RoundState::load(&out.join(STATE_FILE)).unwrap();
        assert_eq!(state.round, 1);
        assert_eq!(state.deferred.len(), s.deferred);
        let reg = TypeRegistry::load(&out.join(REGISTRY_FILE)).unwrap();
        assert_eq!(reg.len(), s.registry_size);
        // The next round trains on base plus discovered types.
        let r2 = run_round(&cfg, &out).unwrap();
        assert_eq!(r2.summary.round, 2);
        assert!(out.join("round_002").join(COMMITTED_MARKER).exists());
    }

    #[test]
    fn round_is_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_synth(&tmp.path().join("data"), 9);
        run_round(&cfg, &tmp.path().join("a")).unwrap();
        run_round(&cfg, &tmp.path().join("b")).unwrap();
        for f in ["triage.json", "clusters.json", "keywords.json", "metrics.json", "checkpoint.json"] {
            let a = std::fs::read(tmp.path().join("a/round_001").join(f)).unwrap();
            let b = std::fs::read(tmp.path().join("b/round_001").join(f)).unwrap();
            assert!(a == b, "{f} differs");
        }
    }

    #[test]
    fn empty_pending_set_is_a_no_op_round() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        let mut cfg = small_synth(&data, 3);
        std::fs::write(data.join(PENDING_FILE), "").unwrap();
        cfg.data.gold = None;
        let r = run_round(&cfg, &tmp.path().join("ws")).unwrap();
        assert_eq!(r.summary.normal + r.summary.abnormal + r.summary.deferred, 0);
        assert_eq!(r.summary.registry_size, 3);
        assert!(r.summary.new_types.is_empty());
    }

    #[test]
    fn failed_round_is_marked_invalid() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = small_synth(&tmp.path().join("data"), 4);
        // Passes validation but fails when the network is built.
        cfg.autoencoder.latent = 40;
        let out = tmp.path().join("ws");
        let err = run_round(&cfg, &out).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
        assert!(out.join("round_001").join(INVALID_MARKER).exists());
        let state = RoundState::load(&out.join(STATE_FILE)).unwrap();
        assert_eq!(state.round, 0);
    }

    #[test]
    fn stepwise_stages_chain_through_files() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_synth(&tmp.path().join("data"), 6);
        let st = Stepwise::open(&cfg, &tmp.path().join("ws")).unwrap();
        st.train().unwrap();
        let t = st.detect().unwrap();
        assert_eq!(t.events.len(), 2 * 30 + 3 * 10);
        st.cluster().unwrap();
        st.name().unwrap();
        let m = st.evaluate().unwrap();
        assert!(m.contains_key("anomaly.auc_roc"));
    }
}
