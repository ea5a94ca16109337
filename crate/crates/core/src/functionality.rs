//! Relation and attribute functionality.
//!
//! `fun(p)` is the number of distinct subjects of `p` over the number of its
//! triples; `fun_inv(p)` the same for distinct objects. A high `fun_inv`
//! means that sharing an object is strong evidence that two subjects are the
//! same entity.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::kg::{KnowledgeGraph, Predicate, RelationId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Functionality {
    pub fun: f64,
    pub fun_inv: f64,
}

impl Functionality {
    fn of_pairs<S: Eq + Hash, O: Eq + Hash>(pairs: impl Iterator<Item = (S, O)>) -> Option<Self> {
        let mut subjects = HashSet::new();
        let mut objects = HashSet::new();
        let mut n = 0usize;
        for (s, o) in pairs {
            subjects.insert(s);
            objects.insert(o);
            n += 1;
        }
        (n > 0).then(|| Functionality {
            fun: subjects.len() as f64 / n as f64,
            fun_inv: objects.len() as f64 / n as f64,
        })
    }

    fn swapped(self) -> Self {
        Functionality { fun: self.fun_inv, fun_inv: self.fun }
    }
}

/// Functionality of every predicate of one graph. Predicates without triples
/// have no entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionalityTable {
    /// Indexed by raw relation id, inverses included.
    relations: Vec<Option<Functionality>>,
    attributes: Vec<Option<Functionality>>,
    label: Option<Functionality>,
}

impl FunctionalityTable {
    pub fn get(&self, p: Predicate) -> Option<Functionality> {
        match p {
            Predicate::Relation(r) => self.relations.get(r.0 as usize).copied().flatten(),
            Predicate::Attribute(a) => self.attributes.get(a.index()).copied().flatten(),
            Predicate::Label => self.label,
        }
    }

    /// `fun(p)`, 0 when `p` has no triples.
    pub fn fun(&self, p: Predicate) -> f64 {
        self.get(p).map_or(0.0, |f| f.fun)
    }

    /// `fun_inv(p)`, 0 when `p` has no triples.
    pub fn fun_inv(&self, p: Predicate) -> f64 {
        self.get(p).map_or(0.0, |f| f.fun_inv)
    }

    /// Number of predicates with an entry.
    pub fn len(&self) -> usize {
        self.relations.iter().chain(&self.attributes).flatten().count() + usize::from(self.label.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Computes functionalities for every relation (and its inverse), every
/// attribute, and the entity-label pseudo attribute.
pub fn compute_functionalities(kg: &KnowledgeGraph) -> FunctionalityTable {
    let mut relations = vec![None; 2 * kg.num_relations()];
    for index in 0..kg.num_relations() {
        let r = RelationId::forward(index as u32);
        if let Some(f) = Functionality::of_pairs(kg.relation_triples(r)) {
            relations[r.0 as usize] = Some(f);
            relations[r.inverse().0 as usize] = Some(f.swapped());
        }
    }
    let attributes = kg
        .attributes()
        .map(|a| Functionality::of_pairs(kg.attribute_triples(a).iter().copied()))
        .collect();
    let label = Functionality::of_pairs(kg.entities().map(|e| (e, kg.label(e))));
    FunctionalityTable { relations, attributes, label }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{parse_kg, AttributeId, Side};

    fn kg(rel: &str, attr: &str) -> KnowledgeGraph {
        parse_kg(rel.as_bytes(), attr.as_bytes(), Side::Left).unwrap()
    }

    #[test]
    fn counting_examples() {
        let g = kg("a\tr\tb\na\tr\tc\nd\tr\tb\n", "");
        let t = compute_functionalities(&g);
        let r = Predicate::Relation(RelationId::forward(0));
        assert_eq!(t.fun(r), 2.0 / 3.0);
        assert_eq!(t.fun_inv(r), 2.0 / 3.0);

        let g = kg("a\tr\tb\nc\tr\td\n", "a\tp\tx\nb\tp\tx\n");
        let t = compute_functionalities(&g);
        assert_eq!(t.fun(r), 1.0);
        assert_eq!(t.fun_inv(r), 1.0);
        let p = Predicate::Attribute(AttributeId(0));
        assert_eq!(t.fun(p), 1.0);
        assert_eq!(t.fun_inv(p), 0.5);
    }

    #[test]
    fn inverse_swaps() {
        let g = kg("a\tr\tb\na\tr\tc\n", "");
        let t = compute_functionalities(&g);
        let r = RelationId::forward(0);
        assert_eq!(t.fun(Predicate::Relation(r.inverse())), t.fun_inv(Predicate::Relation(r)));
        assert_eq!(t.fun_inv(Predicate::Relation(r.inverse())), t.fun(Predicate::Relation(r)));
    }

    #[test]
    fn absent_predicates() {
        let t = compute_functionalities(&kg("", ""));
        assert!(t.is_empty());
        assert_eq!(t.get(Predicate::Label), None);
        assert_eq!(t.fun_inv(Predicate::Attribute(AttributeId(3))), 0.0);
    }
}
