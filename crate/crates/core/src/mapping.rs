use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// What a mapping relates. For the subsumption kinds `left` and `right` are
/// raw [`Predicate`](crate::kg::Predicate) keys:
/// `SubsumptionLr` holds P(left ⊆ right), `SubsumptionRl` holds
/// P(right ⊆ left).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MappingKind {
    Entity,
    Literal,
    #[serde(rename = "REL_SUBSUMPTION_LR")]
    SubsumptionLr,
    #[serde(rename = "REL_SUBSUMPTION_RL")]
    SubsumptionRl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MappingSource {
    Lexical,
    Pr,
    Se,
    Feedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub kind: MappingKind,
    pub left: u32,
    pub right: u32,
    pub probability: f64,
    pub frozen: bool,
    pub source: MappingSource,
}

impl Mapping {
    pub fn new(kind: MappingKind, left: u32, right: u32, probability: f64, source: MappingSource) -> Self {
        Mapping { kind, left, right, probability, frozen: false, source }
    }

    pub fn key(&self) -> MappingKey {
        (self.kind, self.left, self.right)
    }
}

pub type MappingKey = (MappingKind, u32, u32);

/// Scored correspondences, at most one per `(kind, left, right)`. Ordered so
/// that iteration is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MappingStore {
    entries: BTreeMap<MappingKey, Mapping>,
}

impl MappingStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the mapping with the same key.
    pub fn insert(&mut self, m: Mapping) -> Option<Mapping> {
        debug_assert!((0.0..=1.0).contains(&m.probability), "probability out of range: {m:?}");
        self.entries.insert(m.key(), m)
    }

    pub fn get(&self, kind: MappingKind, left: u32, right: u32) -> Option<&Mapping> {
        self.entries.get(&(kind, left, right))
    }

    pub fn probability(&self, kind: MappingKind, left: u32, right: u32) -> f64 {
        self.get(kind, left, right).map_or(0.0, |m| m.probability)
    }

    pub fn remove(&mut self, kind: MappingKind, left: u32, right: u32) -> Option<Mapping> {
        self.entries.remove(&(kind, left, right))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Mapping> {
        self.entries.values()
    }

    pub fn of_kind(&self, kind: MappingKind) -> impl Iterator<Item = &Mapping> {
        self.entries
            .range((kind, 0, 0)..=(kind, u32::MAX, u32::MAX))
            .map(|(_, m)| m)
    }

    pub fn count_kind(&self, kind: MappingKind) -> usize {
        self.of_kind(kind).count()
    }

    /// Drops every mapping of `kind`.
    pub fn clear_kind(&mut self, kind: MappingKind) {
        self.entries.retain(|k, _| k.0 != kind);
    }

    pub fn extend(&mut self, other: impl IntoIterator<Item = Mapping>) {
        for m in other {
            self.insert(m);
        }
    }
}

impl FromIterator<Mapping> for MappingStore {
    fn from_iter<I: IntoIterator<Item = Mapping>>(iter: I) -> Self {
        let mut store = MappingStore::new();
        store.extend(iter);
        store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_mapping_per_key() {
        let mut s = MappingStore::new();
        s.insert(Mapping::new(MappingKind::Entity, 1, 2, 0.4, MappingSource::Pr));
        s.insert(Mapping::new(MappingKind::Entity, 1, 2, 0.7, MappingSource::Se));
        s.insert(Mapping::new(MappingKind::Literal, 1, 2, 1.0, MappingSource::Lexical));
        assert_eq!(s.len(), 2);
        assert_eq!(s.probability(MappingKind::Entity, 1, 2), 0.7);
        assert_eq!(s.count_kind(MappingKind::Literal), 1);
        s.clear_kind(MappingKind::Literal);
        assert_eq!(s.len(), 1);
        assert_eq!(s.probability(MappingKind::Literal, 1, 2), 0.0);
    }

    #[test]
    fn kind_ranges_are_disjoint() {
        let s: MappingStore = [
            Mapping::new(MappingKind::Entity, u32::MAX, u32::MAX, 0.1, MappingSource::Pr),
            Mapping::new(MappingKind::Literal, 0, 0, 1.0, MappingSource::Lexical),
            Mapping::new(MappingKind::SubsumptionRl, 3, 4, 0.5, MappingSource::Pr),
        ]
        .into_iter()
        .collect();
        assert_eq!(s.count_kind(MappingKind::Entity), 1);
        assert_eq!(s.count_kind(MappingKind::SubsumptionLr), 0);
        assert_eq!(s.count_kind(MappingKind::SubsumptionRl), 1);
    }
}
