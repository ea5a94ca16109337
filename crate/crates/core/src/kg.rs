//! Knowledge graph ingestion and queries.
//!
//! A graph is read from two tab-separated files, one with relation triples
//! (`head relation tail`) and one with attribute triples
//! (`entity attribute literal`). Identifiers are interned into dense ids.
//! Every relation `r` has a synthetic inverse `r⁻` so that incoming edges can
//! be walked exactly like outgoing ones.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use percent_encoding::percent_decode_str;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

impl std::str::FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "1" | "kg1" => Ok(Side::Left),
            "right" | "2" | "kg2" => Ok(Side::Right),
            other => Err(format!("unknown side `{other}`")),
        }
    }
}

/// Which input file a parse error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleFile {
    Relation,
    Attribute,
}

impl fmt::Display for TripleFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TripleFile::Relation => "relation",
            TripleFile::Attribute => "attribute",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LiteralId(pub u32);

/// Relation id. Forward relations are even, their synthetic inverses odd.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl RelationId {
    pub fn forward(index: u32) -> Self {
        RelationId(index << 1)
    }

    pub fn inverse(self) -> Self {
        RelationId(self.0 ^ 1)
    }

    pub fn is_inverse(self) -> bool {
        self.0 & 1 == 1
    }

    /// Index of the underlying input relation.
    pub fn index(self) -> usize {
        (self.0 >> 1) as usize
    }
}

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl AttributeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl LiteralId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Anything that can label an edge out of an entity: a relation (or its
/// inverse), an attribute, or the entity's own label, which the reasoner
/// treats as one more attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predicate {
    Relation(RelationId),
    Attribute(AttributeId),
    Label,
}

const ATTRIBUTE_TAG: u32 = 1 << 31;

impl Predicate {
    /// Packs the predicate into a single `u32` key for the mapping store.
    pub fn to_raw(self) -> u32 {
        match self {
            Predicate::Relation(r) => {
                debug_assert!(r.0 < ATTRIBUTE_TAG);
                r.0
            }
            Predicate::Attribute(a) => ATTRIBUTE_TAG | a.0,
            Predicate::Label => u32::MAX,
        }
    }

    pub fn from_raw(raw: u32) -> Self {
        if raw == u32::MAX {
            Predicate::Label
        } else if raw & ATTRIBUTE_TAG != 0 {
            Predicate::Attribute(AttributeId(raw & !ATTRIBUTE_TAG))
        } else {
            Predicate::Relation(RelationId(raw))
        }
    }

    /// True for predicates whose objects are literals.
    pub fn is_literal_valued(self) -> bool {
        !matches!(self, Predicate::Relation(_))
    }
}

/// Normalizes a label or literal: strips a `^^datatype` or `@lang` suffix and
/// surrounding double quotes, trims, collapses internal whitespace and
/// lower-cases.
pub fn normalize_literal(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let before = s;
        if let Some(pos) = s.find("^^") {
            s = s[..pos].trim();
        }
        if let Some(pos) = s.rfind('@') {
            if is_language_tag(&s[pos + 1..]) {
                s = s[..pos].trim();
            }
        }
        if s.len() >= 2 && s.starts_with('"') && s.ends_with('"') {
            s = s[1..s.len() - 1].trim();
        }
        if s == before {
            break;
        }
    }
    let mut out = String::with_capacity(s.len());
    for (i, word) in s.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

// BCP-47-ish: a 1-8 letter primary tag followed by optional `-xxxx` subtags.
fn is_language_tag(tag: &str) -> bool {
    let mut parts = tag.split('-');
    let primary = parts.next().unwrap_or("");
    (1..=8).contains(&primary.len())
        && primary.chars().all(|c| c.is_ascii_alphabetic())
        && parts.all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()))
}

/// Derives a display label from an entity identifier: the text after the
/// last `/` or `#`, percent-decoded and normalized.
pub fn label_from_identifier(identifier: &str) -> String {
    let trimmed = identifier.trim_end_matches(['/', '#']);
    let tail = match trimmed.rfind(['/', '#']) {
        Some(pos) => &trimmed[pos + 1..],
        None => trimmed,
    };
    let decoded = percent_decode_str(tail).decode_utf8_lossy();
    normalize_literal(&decoded)
}

/// Counts reported while parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub duplicate_rel_triples: usize,
    pub duplicate_attr_triples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KGStats {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_attributes: usize,
    pub num_rel_triples: usize,
    pub num_attr_triples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphNode {
    pub id: u32,
    pub name: String,
    pub label: String,
    /// `(attribute, literal)` pairs.
    pub attributes: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphEdge {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub center: String,
    pub nodes: Vec<SubgraphNode>,
    pub edges: Vec<SubgraphEdge>,
    pub hop_limit: usize,
}

#[derive(Debug, Default)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }
}

/// An immutable, interned knowledge graph.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    side: Side,
    entity_names: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    labels: Vec<String>,
    relation_names: Vec<String>,
    attribute_names: Vec<String>,
    literals: Vec<String>,
    literal_index: HashMap<String, LiteralId>,
    rel_triples: Vec<(EntityId, RelationId, EntityId)>,
    attr_triples: Vec<(EntityId, AttributeId, LiteralId)>,
    // Derived indexes.
    edges: Vec<Vec<(RelationId, EntityId)>>,
    attr_edges: Vec<Vec<(AttributeId, LiteralId)>>,
    literal_holders: Vec<Vec<(EntityId, AttributeId)>>,
    triples_by_relation: Vec<Vec<(EntityId, EntityId)>>,
    triples_by_attribute: Vec<Vec<(EntityId, LiteralId)>>,
    report: ParseReport,
}

/// Parses a knowledge graph from relation and attribute triple streams.
pub fn parse_kg<R: BufRead, A: BufRead>(rel_source: R, attr_source: A, side: Side) -> Result<KnowledgeGraph> {
    let mut entities = Interner::default();
    let mut relations = Interner::default();
    let mut attributes = Interner::default();
    let mut literals = Interner::default();
    let mut report = ParseReport::default();

    let mut rel_seen = HashSet::new();
    let mut rel_triples = Vec::new();
    for_each_triple(rel_source, TripleFile::Relation, |h, r, t| {
        let triple = (
            EntityId(entities.intern(h)),
            RelationId::forward(relations.intern(r)),
            EntityId(entities.intern(t)),
        );
        if rel_seen.insert(triple) {
            rel_triples.push(triple);
        } else {
            report.duplicate_rel_triples += 1;
        }
    })?;

    let mut attr_seen = HashSet::new();
    let mut attr_triples = Vec::new();
    for_each_triple(attr_source, TripleFile::Attribute, |e, a, lit| {
        let triple = (
            EntityId(entities.intern(e)),
            AttributeId(attributes.intern(a)),
            LiteralId(literals.intern(&normalize_literal(lit))),
        );
        if attr_seen.insert(triple) {
            attr_triples.push(triple);
        } else {
            report.duplicate_attr_triples += 1;
        }
    })?;

    Ok(KnowledgeGraph::assemble(
        side,
        entities,
        relations.names,
        attributes.names,
        literals,
        rel_triples,
        attr_triples,
        report,
    ))
}

fn for_each_triple<R: BufRead>(
    source: R,
    file: TripleFile,
    mut f: impl FnMut(&str, &str, &str),
) -> Result<()> {
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c), None) => f(a.trim(), b.trim(), c),
            _ => return Err(Error::MalformedLine { file, line: i + 1 }),
        }
    }
    Ok(())
}

impl KnowledgeGraph {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        side: Side,
        entities: Interner,
        relation_names: Vec<String>,
        attribute_names: Vec<String>,
        literals: Interner,
        rel_triples: Vec<(EntityId, RelationId, EntityId)>,
        attr_triples: Vec<(EntityId, AttributeId, LiteralId)>,
        report: ParseReport,
    ) -> Self {
        let n = entities.names.len();
        let mut edges = vec![Vec::new(); n];
        let mut triples_by_relation = vec![Vec::new(); relation_names.len()];
        for &(h, r, t) in &rel_triples {
            edges[h.index()].push((r, t));
            edges[t.index()].push((r.inverse(), h));
            triples_by_relation[r.index()].push((h, t));
        }
        let mut attr_edges = vec![Vec::new(); n];
        let mut literal_holders = vec![Vec::new(); literals.names.len()];
        let mut triples_by_attribute = vec![Vec::new(); attribute_names.len()];
        for &(e, a, l) in &attr_triples {
            attr_edges[e.index()].push((a, l));
            literal_holders[l.index()].push((e, a));
            triples_by_attribute[a.index()].push((e, l));
        }
        let labels = entities.names.iter().map(|n| label_from_identifier(n)).collect();
        let entity_index = entities
            .index
            .into_iter()
            .map(|(k, v)| (k, EntityId(v)))
            .collect();
        let literal_index = literals
            .index
            .into_iter()
            .map(|(k, v)| (k, LiteralId(v)))
            .collect();
        KnowledgeGraph {
            side,
            entity_names: entities.names,
            entity_index,
            labels,
            relation_names,
            attribute_names,
            literals: literals.names,
            literal_index,
            rel_triples,
            attr_triples,
            edges,
            attr_edges,
            literal_holders,
            triples_by_relation,
            triples_by_attribute,
            report,
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn report(&self) -> &ParseReport {
        &self.report
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    /// Number of input relations (inverses excluded).
    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn num_literals(&self) -> usize {
        self.literals.len()
    }

    pub fn entities(&self) -> impl ExactSizeIterator<Item = EntityId> {
        (0..self.entity_names.len() as u32).map(EntityId)
    }

    /// All relation ids including synthetic inverses.
    pub fn relations(&self) -> impl Iterator<Item = RelationId> {
        (0..2 * self.relation_names.len() as u32).map(RelationId)
    }

    pub fn attributes(&self) -> impl ExactSizeIterator<Item = AttributeId> {
        (0..self.attribute_names.len() as u32).map(AttributeId)
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        &self.entity_names[e.index()]
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn contains_entity(&self, e: EntityId) -> bool {
        e.index() < self.entity_names.len()
    }

    /// Resolves an entity name or fails with `UnknownEntity`.
    pub fn require_entity(&self, name: &str) -> Result<EntityId> {
        self.entity_id(name).ok_or_else(|| Error::UnknownEntity {
            side: self.side,
            entity: name.to_owned(),
        })
    }

    pub fn label(&self, e: EntityId) -> &str {
        &self.labels[e.index()]
    }

    /// Name of a relation; inverses are rendered with a `^-1` suffix.
    pub fn relation_name(&self, r: RelationId) -> String {
        let base = &self.relation_names[r.index()];
        if r.is_inverse() {
            format!("{base}^-1")
        } else {
            base.clone()
        }
    }

    pub fn attribute_name(&self, a: AttributeId) -> &str {
        &self.attribute_names[a.index()]
    }

    pub fn literal(&self, l: LiteralId) -> &str {
        &self.literals[l.index()]
    }

    pub fn literal_id(&self, normalized: &str) -> Option<LiteralId> {
        self.literal_index.get(normalized).copied()
    }

    pub fn rel_triples(&self) -> &[(EntityId, RelationId, EntityId)] {
        &self.rel_triples
    }

    pub fn attr_triples(&self) -> &[(EntityId, AttributeId, LiteralId)] {
        &self.attr_triples
    }

    /// Relation edges of `e` in both directions: `(r, t)` for `r(e, t)` and
    /// `(r⁻, h)` for `r(h, e)`.
    pub fn edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.edges[e.index()]
    }

    pub fn attr_edges(&self, e: EntityId) -> &[(AttributeId, LiteralId)] {
        &self.attr_edges[e.index()]
    }

    /// Entities carrying literal `l`, with the attribute that links them.
    pub fn literal_holders(&self, l: LiteralId) -> &[(EntityId, AttributeId)] {
        &self.literal_holders[l.index()]
    }

    /// `(head, tail)` pairs of a relation; inverse ids yield swapped pairs.
    pub fn relation_triples(&self, r: RelationId) -> impl Iterator<Item = (EntityId, EntityId)> + '_ {
        let inverse = r.is_inverse();
        self.triples_by_relation[r.index()]
            .iter()
            .map(move |&(h, t)| if inverse { (t, h) } else { (h, t) })
    }

    pub fn attribute_triples(&self, a: AttributeId) -> &[(EntityId, LiteralId)] {
        &self.triples_by_attribute[a.index()]
    }

    pub fn stats(&self) -> KGStats {
        kg_stats(self)
    }

    /// Entities within `hops` of `center` over relation triples in either
    /// direction, with the triples connecting them and their attributes.
    pub fn neighbourhood(&self, center: EntityId, hops: usize) -> Result<Subgraph> {
        if !self.contains_entity(center) {
            return Err(Error::UnknownEntity {
                side: self.side,
                entity: format!("#{}", center.0),
            });
        }
        let hops = hops.max(1);
        let mut depth: HashMap<EntityId, usize> = HashMap::new();
        let mut order = vec![center];
        depth.insert(center, 0);
        let mut queue = VecDeque::from([center]);
        while let Some(e) = queue.pop_front() {
            let d = depth[&e];
            if d == hops {
                continue;
            }
            for &(_, n) in self.edges(e) {
                if let std::collections::hash_map::Entry::Vacant(slot) = depth.entry(n) {
                    slot.insert(d + 1);
                    order.push(n);
                    queue.push_back(n);
                }
            }
        }

        let nodes = order
            .iter()
            .map(|&e| SubgraphNode {
                id: e.0,
                name: self.entity_name(e).to_owned(),
                label: self.label(e).to_owned(),
                attributes: self
                    .attr_edges(e)
                    .iter()
                    .map(|&(a, l)| (self.attribute_name(a).to_owned(), self.literal(l).to_owned()))
                    .collect(),
            })
            .collect();

        let mut edges = Vec::new();
        for &e in &order {
            for &(r, t) in self.edges(e) {
                if !r.is_inverse() && depth.contains_key(&t) {
                    edges.push(SubgraphEdge {
                        head: self.entity_name(e).to_owned(),
                        relation: self.relation_name(r),
                        tail: self.entity_name(t).to_owned(),
                    });
                }
            }
        }

        Ok(Subgraph {
            center: self.entity_name(center).to_owned(),
            nodes,
            edges,
            hop_limit: hops,
        })
    }

    /// Writes the graph back out in the two-file TSV format. Literals are
    /// written in normalized form.
    pub fn write_tsv<W1: Write, W2: Write>(&self, mut rel: W1, mut attr: W2) -> std::io::Result<()> {
        for &(h, r, t) in &self.rel_triples {
            writeln!(rel, "{}\t{}\t{}", self.entity_name(h), self.relation_name(r), self.entity_name(t))?;
        }
        for &(e, a, l) in &self.attr_triples {
            writeln!(attr, "{}\t{}\t{}", self.entity_name(e), self.attribute_name(a), self.literal(l))?;
        }
        Ok(())
    }

    /// String-level relation triples, for comparisons independent of id
    /// assignment.
    pub fn rel_triple_strings(&self) -> HashSet<(String, String, String)> {
        self.rel_triples
            .iter()
            .map(|&(h, r, t)| (self.entity_name(h).to_owned(), self.relation_name(r), self.entity_name(t).to_owned()))
            .collect()
    }

    pub fn attr_triple_strings(&self) -> HashSet<(String, String, String)> {
        self.attr_triples
            .iter()
            .map(|&(e, a, l)| {
                (
                    self.entity_name(e).to_owned(),
                    self.attribute_name(a).to_owned(),
                    self.literal(l).to_owned(),
                )
            })
            .collect()
    }
}

/// User-facing counts; synthetic inverse relations are not counted.
pub fn kg_stats(kg: &KnowledgeGraph) -> KGStats {
    KGStats {
        num_entities: kg.num_entities(),
        num_relations: kg.num_relations(),
        num_attributes: kg.num_attributes(),
        num_rel_triples: kg.rel_triples.len(),
        num_attr_triples: kg.attr_triples.len(),
    }
}
