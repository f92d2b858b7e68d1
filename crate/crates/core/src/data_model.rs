//! Events, dataset splits, pairwise constraints and the type registry that
//! persists across discovery rounds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anomaly::TriageResult;
use crate::error::{Error, Result};
use crate::persist;

/// Identifier of an event type. Monotonically assigned, never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeId(pub u32);

impl fmt::Display for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Base,
    Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    KnownNormal,
    UnknownNormal,
    Abnormal,
    Deferred,
    Unprocessed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    D1,
    D2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub vector_row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<TypeId>,
    pub origin: Origin,
    pub status: Status,
}

impl Event {
    /// A fully annotated event of the base corpus.
    pub fn base(id: impl Into<String>, vector_row: usize, label: TypeId) -> Self {
        Self {
            id: id.into(),
            text: None,
            vector_row,
            label: Some(label),
            origin: Origin::Base,
            status: Status::KnownNormal,
        }
    }

    /// An unannotated event awaiting triage.
    pub fn pending(id: impl Into<String>, vector_row: usize) -> Self {
        Self {
            id: id.into(),
            text: None,
            vector_row,
            label: None,
            origin: Origin::Pending,
            status: Status::Unprocessed,
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    /// Whether the event still needs to go through triage.
    pub fn is_pending(&self) -> bool {
        self.origin == Origin::Pending
            && match self.status {
                Status::Unprocessed | Status::Deferred => true,
                Status::Abnormal => self.label.is_none(),
                _ => false,
            }
    }

    fn check(&self) -> Result<()> {
        if self.origin == Origin::Base && self.label.is_none() {
            return Err(Error::Integrity(format!(
                "base event '{}' carries no label",
                self.id
            )));
        }
        if (self.status == Status::KnownNormal) != (self.origin == Origin::Base) {
            return Err(Error::Integrity(format!(
                "event '{}' has status {:?} with origin {:?}",
                self.id, self.status, self.origin
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetStore {
    pub events: Vec<Event>,
    pub round: u32,
    pub split: BTreeMap<String, Split>,
}

impl DatasetStore {
    /// Builds a store, deriving the D1/D2 split from each event's origin.
    pub fn new(events: Vec<Event>) -> Result<Self> {
        let split = events
            .iter()
            .map(|e| {
                let s = match e.origin {
                    Origin::Base => Split::D1,
                    Origin::Pending => Split::D2,
                };
                (e.id.clone(), s)
            })
            .collect();
        let store = Self {
            events,
            round: 0,
            split,
        };
        store.validate()?;
        Ok(store)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.events {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate event id '{}'", e.id)));
            }
            e.check()?;
            let expected = match e.origin {
                Origin::Base => Split::D1,
                Origin::Pending => Split::D2,
            };
            if self.split.get(&e.id) != Some(&expected) {
                return Err(Error::Integrity(format!(
                    "split entry for '{}' disagrees with its origin",
                    e.id
                )));
            }
        }
        if self.split.len() != self.events.len() {
            return Err(Error::Integrity(
                "split map references ids outside the store".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.events
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.as_str(), i))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&Event> {
        self.events.iter().find(|e| e.id == id)
    }

    pub fn base_events(&self) -> impl Iterator<Item = &Event> + '_ {
        self.events.iter().filter(|e| e.origin == Origin::Base)
    }

    pub fn base_count(&self) -> usize {
        self.base_events().count()
    }

    /// Events that the next triage pass must look at.
    pub fn pending_events(&self) -> impl Iterator<Item = &Event> + '_ {
        self.events.iter().filter(|e| e.is_pending())
    }

    /// Events whose type is resolved: all base events plus abnormal events
    /// attached to a registered discovered type.
    pub fn resolved_events(&self) -> impl Iterator<Item = &Event> + '_ {
        self.events.iter().filter(|e| e.label.is_some())
    }

    pub fn deferred_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.status == Status::Deferred)
            .count()
    }

    pub fn complete_round(&mut self) {
        self.round += 1;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save_document(path, "dataset_store", self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = persist::load_document(path, "dataset_store")?;
        s.validate()?;
        Ok(s)
    }
}

/// Folds one round's triage into the store.
///
/// Normal verdicts join the base set with their assigned type; deferred
/// events stay pending for the next round; abnormal events are marked
/// abnormal and, when `abnormal_types` maps them to a registered type,
/// leave the pending pool carrying that label.
pub fn expand_base(
    store: &DatasetStore,
    triage: &TriageResult,
    abnormal_types: &BTreeMap<String, TypeId>,
) -> Result<DatasetStore> {
    let index = store.index_of();
    let lookup = |id: &str| -> Result<usize> {
        let i = *index
            .get(id)
            .ok_or_else(|| Error::Integrity(format!("triage references unknown id '{id}'")))?;
        if store.events[i].origin != Origin::Pending {
            return Err(Error::Integrity(format!(
                "triage references non-pending event '{id}'"
            )));
        }
        Ok(i)
    };
    let mut out = store.clone();
    for (id, ty) in &triage.normal {
        let i = lookup(id)?;
        let e = &mut out.events[i];
        e.origin = Origin::Base;
        e.status = Status::KnownNormal;
        e.label = Some(*ty);
        out.split.insert(id.clone(), Split::D1);
    }
    for id in &triage.deferred {
        let i = lookup(id)?;
        out.events[i].status = Status::Deferred;
    }
    for id in &triage.abnormal {
        let i = lookup(id)?;
        let e = &mut out.events[i];
        e.status = Status::Abnormal;
        e.label = abnormal_types.get(id).copied();
    }
    for id in abnormal_types.keys() {
        if !triage.abnormal.iter().any(|a| a == id) {
            return Err(Error::Integrity(format!(
                "type assignment for '{id}' which was not triaged abnormal"
            )));
        }
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    MustLink,
    CannotLink,
}

/// Must-link / cannot-link pairs over event ids, stored as ordered `(lo, hi)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairConstraintSet {
    pub must_link: BTreeSet<(String, String)>,
    pub cannot_link: BTreeSet<(String, String)>,
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

impl PairConstraintSet {
    pub fn len(&self) -> usize {
        self.must_link.len() + self.cannot_link.len()
    }

    pub fn is_empty(&self) -> bool {
        self.must_link.is_empty() && self.cannot_link.is_empty()
    }

    pub fn contains_must(&self, a: &str, b: &str) -> bool {
        self.must_link.contains(&unordered(a, b))
    }

    pub fn contains_cannot(&self, a: &str, b: &str) -> bool {
        self.cannot_link.contains(&unordered(a, b))
    }

    /// Maps id pairs onto row indices; must-links first, each in set order.
    pub fn resolve(&self, rows: &HashMap<&str, usize>) -> Result<Vec<(usize, usize, ConstraintKind)>> {
        let get = |id: &String| {
            rows.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Integrity(format!("constraint references unknown id '{id}'")))
        };
        let mut out = Vec::with_capacity(self.len());
        for (a, b) in &self.must_link {
            out.push((get(a)?, get(b)?, ConstraintKind::MustLink));
        }
        for (a, b) in &self.cannot_link {
            out.push((get(a)?, get(b)?, ConstraintKind::CannotLink));
        }
        Ok(out)
    }

    /// Checks disjointness and label consistency against `events`.
    pub fn validate(&self, events: &[Event]) -> Result<()> {
        if let Some(p) = self.must_link.intersection(&self.cannot_link).next() {
            return Err(Error::Integrity(format!(
                "pair ({}, {}) is both must-link and cannot-link",
                p.0, p.1
            )));
        }
        let labels: HashMap<&str, Option<TypeId>> =
            events.iter().map(|e| (e.id.as_str(), e.label)).collect();
        let label = |id: &str| -> Result<TypeId> {
            labels
                .get(id)
                .copied()
                .flatten()
                .ok_or_else(|| Error::ConstraintSource(format!("'{id}' is unknown or unlabeled")))
        };
        for (a, b) in &self.must_link {
            if label(a)? != label(b)? {
                return Err(Error::Integrity(format!("must-link ({a}, {b}) spans labels")));
            }
        }
        for (a, b) in &self.cannot_link {
            if label(a)? == label(b)? {
                return Err(Error::Integrity(format!("cannot-link ({a}, {b}) shares a label")));
            }
        }
        Ok(())
    }
}

// Maps a linear index in 0..n(n-1)/2 to the pair (i, j), i < j, in row-major order.
fn triangular_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
        i += 1;
    }
}

/// Samples must-link pairs within each class and cannot-link pairs across
/// each class pair, at most `max_pairs_per_class` of each, uniformly without
/// replacement.
pub fn build_constraints(
    events: &[Event],
    max_pairs_per_class: usize,
    seed: u64,
) -> Result<PairConstraintSet> {
    if max_pairs_per_class == 0 {
        return Err(Error::InvalidArgument(
            "max_pairs_per_class must be at least 1".into(),
        ));
    }
    let mut by_class: BTreeMap<TypeId, Vec<&str>> = BTreeMap::new();
    for e in events {
        let label = e.label.ok_or_else(|| {
            Error::ConstraintSource(format!("event '{}' has no label", e.id))
        })?;
        by_class.entry(label).or_default().push(e.id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = PairConstraintSet::default();
    let classes: Vec<&Vec<&str>> = by_class.values().collect();

    for members in &classes {
        let n = members.len();
        let total = n * n.saturating_sub(1) / 2;
        let take = total.min(max_pairs_per_class);
        let mut picks = index::sample(&mut rng, total.max(1), take).into_vec();
        picks.sort_unstable();
        for k in picks {
            let (i, j) = triangular_pair(k, n);
            set.must_link.insert(unordered(members[i], members[j]));
        }
    }
    for a in 0..classes.len() {
        for b in a + 1..classes.len() {
            let (ca, cb) = (classes[a], classes[b]);
            let total = ca.len() * cb.len();
            let take = total.min(max_pairs_per_class);
            let mut picks = index::sample(&mut rng, total, take).into_vec();
            picks.sort_unstable();
            for k in picks {
                set.cannot_link
                    .insert(unordered(ca[k / cb.len()], cb[k % cb.len()]));
            }
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Seed,
    Discovered { round: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeEntry {
    pub type_id: TypeId,
    pub name: String,
    pub provenance: Provenance,
    pub centroid: Vec<f64>,
    pub count: usize,
}

/// Catalog of event types: the seed set plus everything discovered since.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRegistry {
    pub latent_dim: usize,
    pub entries: Vec<TypeEntry>,
    next_id: u32,
}

impl TypeRegistry {
    /// Seed registry with ids `0..names.len()` in the given order and zero centroids.
    pub fn with_seed_types(names: &[String], latent_dim: usize) -> Result<Self> {
        let mut reg = Self {
            latent_dim,
            entries: Vec::with_capacity(names.len()),
            next_id: 0,
        };
        for name in names {
            reg.insert(name, vec![0.0; latent_dim], Provenance::Seed)?;
        }
        Ok(reg)
    }

    fn insert(&mut self, name: &str, centroid: Vec<f64>, provenance: Provenance) -> Result<TypeId> {
        if name.trim().is_empty() {
            return Err(Error::InvalidArgument("type name must be nonempty".into()));
        }
        if centroid.len() != self.latent_dim {
            return Err(Error::Shape(format!(
                "centroid has dimension {}, registry latent dimension is {}",
                centroid.len(),
                self.latent_dim
            )));
        }
        if self.by_name(name).is_some() {
            return Err(Error::Conflict(format!("type name '{name}' already registered")));
        }
        let type_id = TypeId(self.next_id);
        self.next_id += 1;
        self.entries.push(TypeEntry {
            type_id,
            name: name.to_owned(),
            provenance,
            centroid,
            count: 0,
        });
        Ok(type_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seed_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.provenance == Provenance::Seed)
            .count()
    }

    pub fn get(&self, id: TypeId) -> Option<&TypeEntry> {
        self.entries.iter().find(|e| e.type_id == id)
    }

    pub fn by_name(&self, name: &str) -> Option<&TypeEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn ids(&self) -> Vec<TypeId> {
        self.entries.iter().map(|e| e.type_id).collect()
    }

    fn entry_mut(&mut self, id: TypeId) -> Result<&mut TypeEntry> {
        self.entries
            .iter_mut()
            .find(|e| e.type_id == id)
            .ok_or_else(|| Error::Integrity(format!("unknown type id {id}")))
    }

    pub fn rename(&mut self, id: TypeId, name: &str) -> Result<()> {
        if name.trim().is_empty() {
            return Err(Error::InvalidArgument("type name must be nonempty".into()));
        }
        if let Some(other) = self.by_name(name) {
            if other.type_id != id {
                return Err(Error::Conflict(format!("type name '{name}' already registered")));
            }
        }
        self.entry_mut(id)?.name = name.to_owned();
        Ok(())
    }

    pub fn set_centroid(&mut self, id: TypeId, centroid: Vec<f64>) -> Result<()> {
        if centroid.len() != self.latent_dim {
            return Err(Error::Shape(format!(
                "centroid has dimension {}, expected {}",
                centroid.len(),
                self.latent_dim
            )));
        }
        self.entry_mut(id)?.centroid = centroid;
        Ok(())
    }

    /// Recomputes instance counts from the resolved events of `store`.
    pub fn recount(&mut self, store: &DatasetStore) -> Result<()> {
        let mut counts: BTreeMap<TypeId, usize> = BTreeMap::new();
        for e in store.resolved_events() {
            *counts.entry(e.label.expect("resolved")).or_default() += 1;
        }
        for e in &mut self.entries {
            e.count = counts.remove(&e.type_id).unwrap_or(0);
        }
        if let Some((id, _)) = counts.into_iter().next() {
            return Err(Error::Integrity(format!(
                "store references type {id} missing from the registry"
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save_document(path, "type_registry", self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        persist::load_document(path, "type_registry")
    }
}

/// Adds a discovered type to `registry`.
pub fn register_type(
    registry: &mut TypeRegistry,
    name: &str,
    centroid: Vec<f64>,
    round: u32,
) -> Result<TypeId> {
    registry.insert(name, centroid, Provenance::Discovered { round })
}
