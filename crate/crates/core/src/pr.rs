//! Probabilistic reasoning over a pair of knowledge graphs.
//!
//! Entity equivalence is a noisy-or over evidence pairs. An edge `r(x, u)` on
//! the left and `s(y, v)` on the right support `x ≡ y` in proportion to how
//! likely `u ≡ v` is, how inverse-functional the predicates are and how
//! strongly `r` and `s` subsume each other:
//!
//! ```text
//! P(x≡y) = 1 − ∏ (1 − P(s⊆r)·fun_inv(r)·P(u≡v)) · (1 − P(r⊆s)·fun_inv(s)·P(u≡v))
//! ```
//!
//! Subsumption `P(r⊆s)` is the share of `r`'s triples whose best match among
//! `s`'s triples explains them as well as the best match among all right
//! triples. Both are re-estimated in rounds from the previous round's values
//! until the entity probabilities settle. Entity labels take part as one more
//! literal-valued predicate, so a lexical match keeps supporting its pair
//! after the first round.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::functionality::{compute_functionalities, FunctionalityTable};
use crate::kg::{EntityId, KnowledgeGraph, LiteralId, Predicate, Side};
use crate::mapping::{Mapping, MappingKind, MappingSource, MappingStore};
use crate::se::{cosine_similarity, EmbeddingSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PRConfig {
    /// Weight of the reasoning estimate when blending with embedding
    /// similarity. Must lie strictly between 0 and 1.
    pub alpha: f64,
    pub max_self_iterations: usize,
    pub convergence_epsilon: f64,
    /// Initial probability of an entity pair with identical labels.
    pub theta_lexical: f64,
    /// Minimum probability for an entity mapping to be exported.
    pub theta_output: f64,
    /// Probability interval `[low, high)` from which mappings are offered for
    /// annotation.
    pub uncertain_band: (f64, f64),
    pub rng_seed: u64,
    /// Recomputed entity probabilities below this are not stored.
    pub prune_below: f64,
    /// Recomputed candidates kept per left entity, best first. Zero keeps
    /// all of them.
    pub max_candidates: usize,
    pub execution: Execution,
}

impl Default for PRConfig {
    fn default() -> Self {
        PRConfig {
            alpha: 0.5,
            max_self_iterations: 10,
            convergence_epsilon: 1e-3,
            theta_lexical: 0.9,
            theta_output: 0.1,
            uncertain_band: (0.1, 0.6),
            rng_seed: 0,
            prune_below: 1e-3,
            max_candidates: 1,
            execution: Execution::default(),
        }
    }
}

impl PRConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_owned()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(self.convergence_epsilon > 0.0) {
            return bad("convergence_epsilon must be positive");
        }
        if !(self.theta_lexical > 0.0 && self.theta_lexical <= 1.0) {
            return bad("theta_lexical must lie in (0, 1]");
        }
        if !(self.theta_output > 0.0 && self.theta_output < 1.0) {
            return bad("theta_output must lie in (0, 1)");
        }
        let (low, high) = self.uncertain_band;
        if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low >= high {
            return bad("uncertain_band must satisfy 0 <= low < high <= 1");
        }
        if !(0.0..1.0).contains(&self.prune_below) {
            return bad("prune_below must lie in [0, 1)");
        }
        Ok(())
    }
}

/// `α·pr_old + (1−α)·sim`, kept inside `[min(pr_old, sim), max(pr_old, sim)]`.
pub fn blend_probability(pr_old: f64, sim: f64, alpha: f64) -> f64 {
    // Written around `sim` so that sim == pr_old returns pr_old exactly.
    let blended = sim + alpha * (pr_old - sim);
    blended.clamp(pr_old.min(sim), pr_old.max(sim))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    /// P(left ⊆ right)
    Lr,
    /// P(right ⊆ left)
    Rl,
}

/// A human judgement on an entity pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackLabel {
    pub left: EntityId,
    pub right: EntityId,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub left: String,
    pub right: String,
    pub probability: f64,
}

/// What a [`PRState::run_pr`] call did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub iterations: usize,
    /// Largest entity probability change in the last iteration.
    pub max_change: f64,
    pub converged: bool,
}

// The object of an edge, for endpoint comparisons across the two graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Object {
    Entity(EntityId),
    Literal(LiteralId),
    Label(EntityId),
}

fn for_each_edge(kg: &KnowledgeGraph, e: EntityId, mut f: impl FnMut(Predicate, Object)) {
    for &(r, t) in kg.edges(e) {
        f(Predicate::Relation(r), Object::Entity(t));
    }
    for &(a, l) in kg.attr_edges(e) {
        f(Predicate::Attribute(a), Object::Literal(l));
    }
    f(Predicate::Label, Object::Label(e));
}

fn predicate_triples(kg: &KnowledgeGraph, p: Predicate) -> Vec<(EntityId, Object)> {
    match p {
        Predicate::Relation(r) => kg.relation_triples(r).map(|(h, t)| (h, Object::Entity(t))).collect(),
        Predicate::Attribute(a) => kg.attribute_triples(a).iter().map(|&(e, l)| (e, Object::Literal(l))).collect(),
        Predicate::Label => kg.entities().map(|e| (e, Object::Label(e))).collect(),
    }
}

/// Cross-graph literal and label equality, computed once.
#[derive(Debug, Clone)]
struct CrossIndex {
    literal_lr: Vec<Option<LiteralId>>,
    literal_rl: Vec<Option<LiteralId>>,
    label_lr: Vec<Vec<EntityId>>,
}

impl CrossIndex {
    fn build(left: &KnowledgeGraph, right: &KnowledgeGraph) -> Self {
        let literal_lr: Vec<Option<LiteralId>> = (0..left.num_literals() as u32)
            .map(|l| {
                let s = left.literal(LiteralId(l));
                if s.is_empty() {
                    None
                } else {
                    right.literal_id(s)
                }
            })
            .collect();
        let mut literal_rl = vec![None; right.num_literals()];
        for (l, r) in literal_lr.iter().enumerate() {
            if let Some(r) = r {
                literal_rl[r.index()] = Some(LiteralId(l as u32));
            }
        }
        fn group(kg: &KnowledgeGraph) -> HashMap<&str, Vec<EntityId>> {
            let mut m: HashMap<&str, Vec<EntityId>> = HashMap::new();
            for e in kg.entities() {
                if !kg.label(e).is_empty() {
                    m.entry(kg.label(e)).or_default().push(e);
                }
            }
            m
        }
        let right_groups = group(right);
        let label_lr = left
            .entities()
            .map(|e| right_groups.get(left.label(e)).cloned().unwrap_or_default())
            .collect();
        CrossIndex { literal_lr, literal_rl, label_lr }
    }
}

// Read-only view of the previous iteration.
struct Snapshot {
    by_left: Vec<Vec<(EntityId, f64)>>,
    by_right: Vec<Vec<(EntityId, f64)>>,
    entity: HashMap<(u32, u32), f64>,
    frozen: HashSet<(u32, u32)>,
    lr: HashMap<(u32, u32), f64>,
    rl: HashMap<(u32, u32), f64>,
}

/// Seeds literal mappings (probability 1) for identical normalized literals
/// and entity mappings (probability `theta_lexical`) for identical labels.
pub fn seed_lexical_mappings(left: &KnowledgeGraph, right: &KnowledgeGraph, config: &PRConfig) -> MappingStore {
    let cross = CrossIndex::build(left, right);
    seed_from_index(left, &cross, config)
}

fn seed_from_index(left: &KnowledgeGraph, cross: &CrossIndex, config: &PRConfig) -> MappingStore {
    let mut store = MappingStore::new();
    for (l, r) in cross.literal_lr.iter().enumerate() {
        if let Some(r) = r {
            store.insert(Mapping::new(MappingKind::Literal, l as u32, r.0, 1.0, MappingSource::Lexical));
        }
    }
    for x in left.entities() {
        for &y in &cross.label_lr[x.index()] {
            store.insert(Mapping::new(MappingKind::Entity, x.0, y.0, config.theta_lexical, MappingSource::Lexical));
        }
    }
    store
}

/// Reasoning state for one KG pair.
#[derive(Debug, Clone)]
pub struct PRState {
    left: Arc<KnowledgeGraph>,
    right: Arc<KnowledgeGraph>,
    funcs_left: FunctionalityTable,
    funcs_right: FunctionalityTable,
    mappings: MappingStore,
    iteration: usize,
    cross: CrossIndex,
}

impl PRState {
    /// Computes functionalities, lexical seeds and the subsumptions they imply.
    pub fn new(left: Arc<KnowledgeGraph>, right: Arc<KnowledgeGraph>, config: &PRConfig) -> Self {
        let cross = CrossIndex::build(&left, &right);
        let mappings = seed_from_index(&left, &cross, config);
        let mut state = PRState {
            funcs_left: compute_functionalities(&left),
            funcs_right: compute_functionalities(&right),
            left,
            right,
            mappings,
            iteration: 0,
            cross,
        };
        state.refresh_subsumptions(config.execution);
        state
    }

    /// Builds a state around an explicit mapping store. Functionalities are
    /// computed; nothing else is derived.
    pub fn with_mappings(left: Arc<KnowledgeGraph>, right: Arc<KnowledgeGraph>, mappings: MappingStore) -> Self {
        PRState {
            cross: CrossIndex::build(&left, &right),
            funcs_left: compute_functionalities(&left),
            funcs_right: compute_functionalities(&right),
            left,
            right,
            mappings,
            iteration: 0,
        }
    }

    pub fn left(&self) -> &Arc<KnowledgeGraph> {
        &self.left
    }

    pub fn right(&self) -> &Arc<KnowledgeGraph> {
        &self.right
    }

    pub fn funcs_left(&self) -> &FunctionalityTable {
        &self.funcs_left
    }

    pub fn funcs_right(&self) -> &FunctionalityTable {
        &self.funcs_right
    }

    pub fn mappings(&self) -> &MappingStore {
        &self.mappings
    }

    pub fn mappings_mut(&mut self) -> &mut MappingStore {
        &mut self.mappings
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn entity_probability(&self, x: EntityId, y: EntityId) -> f64 {
        self.mappings.probability(MappingKind::Entity, x.0, y.0)
    }

    fn object_probability(&self, a: Object, b: Object) -> f64 {
        match (a, b) {
            (Object::Entity(u), Object::Entity(v)) => self.entity_probability(u, v),
            (Object::Literal(l), Object::Literal(r)) => self.mappings.probability(MappingKind::Literal, l.0, r.0),
            (Object::Label(x), Object::Label(y)) => {
                let label = self.left.label(x);
                if !label.is_empty() && label == self.right.label(y) {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }

    /// Evaluates the equivalence recurrence for one pair against the current
    /// store, enumerating every left edge of `x` against every right edge of
    /// `y`.
    pub fn entity_equivalence_update(&self, x: EntityId, y: EntityId) -> f64 {
        let mut right_edges = Vec::new();
        for_each_edge(&self.right, y, |q, v| right_edges.push((q, v)));
        let mut product = 1.0;
        for_each_edge(&self.left, x, |p, u| {
            for &(q, v) in &right_edges {
                let puv = self.object_probability(u, v);
                if puv == 0.0 {
                    continue;
                }
                let s_in_r = self.mappings.probability(MappingKind::SubsumptionRl, p.to_raw(), q.to_raw());
                let r_in_s = self.mappings.probability(MappingKind::SubsumptionLr, p.to_raw(), q.to_raw());
                product *= (1.0 - s_in_r * self.funcs_left.fun_inv(p) * puv)
                    * (1.0 - r_in_s * self.funcs_right.fun_inv(q) * puv);
            }
        });
        (1.0 - product).clamp(0.0, 1.0)
    }

    /// Evaluates one subsumption probability against the current store by
    /// enumerating triple pairs. `r` is a left predicate, `s` a right one.
    pub fn subsumption_update(&self, r: Predicate, s: Predicate, direction: Direction) -> f64 {
        let (sub_kg, sup_kg, sub, sup) = match direction {
            Direction::Lr => (&*self.left, &*self.right, r, s),
            Direction::Rl => (&*self.right, &*self.left, s, r),
        };
        let sub_triples = predicate_triples(sub_kg, sub);
        let sup_triples = predicate_triples(sup_kg, sup);
        let mut all_sup = Vec::new();
        for e in sup_kg.entities() {
            for_each_edge(sup_kg, e, |_, o| all_sup.push((e, o)));
        }
        let pair = |a: (EntityId, Object), b: (EntityId, Object)| match direction {
            Direction::Lr => self.entity_probability(a.0, b.0) * self.object_probability(a.1, b.1),
            Direction::Rl => self.entity_probability(b.0, a.0) * self.object_probability(b.1, a.1),
        };
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        for &t in &sub_triples {
            numerator += sup_triples.iter().map(|&u| pair(t, u)).fold(0.0, f64::max);
            denominator += all_sup.iter().map(|&u| pair(t, u)).fold(0.0, f64::max);
        }
        if denominator == 0.0 {
            0.0
        } else {
            numerator / denominator
        }
    }

    fn snapshot(&self) -> Snapshot {
        let mut by_left = vec![Vec::new(); self.left.num_entities()];
        let mut by_right = vec![Vec::new(); self.right.num_entities()];
        let mut entity = HashMap::new();
        let mut frozen = HashSet::new();
        for m in self.mappings.of_kind(MappingKind::Entity) {
            if m.frozen {
                frozen.insert((m.left, m.right));
            }
            if m.probability > 0.0 {
                by_left[m.left as usize].push((EntityId(m.right), m.probability));
                by_right[m.right as usize].push((EntityId(m.left), m.probability));
                entity.insert((m.left, m.right), m.probability);
            }
        }
        let collect = |kind| {
            self.mappings
                .of_kind(kind)
                .filter(|m| m.probability > 0.0)
                .map(|m| ((m.left, m.right), m.probability))
                .collect()
        };
        Snapshot {
            by_left,
            by_right,
            entity,
            frozen,
            lr: collect(MappingKind::SubsumptionLr),
            rl: collect(MappingKind::SubsumptionRl),
        }
    }

    // Noisy-or products for every right entity sharing evidence with `x`.
    // Only pairs reachable through a mapped neighbour, a shared literal or a
    // shared label appear; every other pair has an empty product.
    fn evidence_products(&self, snap: &Snapshot, x: EntityId) -> HashMap<EntityId, f64> {
        let mut acc: HashMap<EntityId, f64> = HashMap::new();
        let mut add = |y: EntityId, p: Predicate, q: Predicate, puv: f64| {
            let key = (p.to_raw(), q.to_raw());
            let s_in_r = snap.rl.get(&key).copied().unwrap_or(0.0);
            let r_in_s = snap.lr.get(&key).copied().unwrap_or(0.0);
            let factor = (1.0 - s_in_r * self.funcs_left.fun_inv(p) * puv)
                * (1.0 - r_in_s * self.funcs_right.fun_inv(q) * puv);
            *acc.entry(y).or_insert(1.0) *= factor;
        };
        for &(p, u) in self.left.edges(x) {
            for &(v, puv) in &snap.by_left[u.index()] {
                for &(q_from_v, y) in self.right.edges(v) {
                    add(y, Predicate::Relation(p), Predicate::Relation(q_from_v.inverse()), puv);
                }
            }
        }
        for &(a, l) in self.left.attr_edges(x) {
            if let Some(rl) = self.cross.literal_lr[l.index()] {
                let puv = self.mappings.probability(MappingKind::Literal, l.0, rl.0);
                if puv > 0.0 {
                    for &(y, b) in self.right.literal_holders(rl) {
                        add(y, Predicate::Attribute(a), Predicate::Attribute(b), puv);
                    }
                }
            }
        }
        for &y in &self.cross.label_lr[x.index()] {
            add(y, Predicate::Label, Predicate::Label, 1.0);
        }
        acc
    }

    fn recompute_row(
        &self,
        snap: &Snapshot,
        x: EntityId,
        embeddings: Option<&EmbeddingSet>,
        config: &PRConfig,
    ) -> Vec<(EntityId, f64)> {
        let mut products = self.evidence_products(snap, x);
        // Pairs already in the store stay candidates even without evidence.
        for &(y, _) in &snap.by_left[x.index()] {
            products.entry(y).or_insert(1.0);
        }
        let mut row: Vec<(EntityId, f64)> = products
            .into_iter()
            .filter(|(y, _)| !snap.frozen.contains(&(x.0, y.0)))
            .map(|(y, product)| {
                let mut p = (1.0 - product).clamp(0.0, 1.0);
                if let Some(emb) = embeddings {
                    let sim = cosine_similarity(emb.left(x), emb.right(y)).unwrap_or(0.0);
                    p = blend_probability(p, sim, config.alpha);
                }
                (y, p)
            })
            .filter(|&(_, p)| p > 0.0 && p >= config.prune_below)
            .collect();
        if config.max_candidates > 0 {
            // Pairs confirmed by feedback hold their slots.
            let confirmed = snap.by_left[x.index()].iter().filter(|(y, _)| snap.frozen.contains(&(x.0, y.0))).count();
            let slots = config.max_candidates.saturating_sub(confirmed);
            if row.len() > slots {
                row.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                row.truncate(slots);
            }
        }
        row.sort_unstable_by_key(|&(y, _)| y);
        row
    }

    /// Iterates entity equivalence and subsumption until the largest entity
    /// probability change drops below `convergence_epsilon` or
    /// `max_self_iterations` rounds have run. Each round reads only the
    /// previous round's values. With embeddings, every recomputed non-frozen
    /// probability is blended with the pair's cosine similarity.
    pub fn run_pr(&mut self, config: &PRConfig, embeddings: Option<&EmbeddingSet>) -> RunSummary {
        let mut summary = RunSummary { iterations: 0, max_change: 0.0, converged: false };
        for _ in 0..config.max_self_iterations {
            let snap = self.snapshot();
            let rows = config
                .execution
                .map_range(self.left.num_entities(), |x| {
                    self.recompute_row(&snap, EntityId(x as u32), embeddings, config)
                });

            let mut next = MappingStore::new();
            next.extend(
                self.mappings
                    .iter()
                    .filter(|m| m.kind == MappingKind::Literal || (m.kind == MappingKind::Entity && m.frozen))
                    .copied(),
            );
            let mut max_change: f64 = 0.0;
            let mut seen = HashSet::new();
            for (x, row) in rows.into_iter().enumerate() {
                for (y, p) in row {
                    let old = snap.entity.get(&(x as u32, y.0)).copied().unwrap_or(0.0);
                    max_change = max_change.max((p - old).abs());
                    seen.insert((x as u32, y.0));
                    next.insert(Mapping::new(MappingKind::Entity, x as u32, y.0, p, MappingSource::Pr));
                }
            }
            for (&key, &old) in &snap.entity {
                if !seen.contains(&key) && !snap.frozen.contains(&key) {
                    max_change = max_change.max(old);
                }
            }
            // Previous subsumptions carry over until refreshed below.
            next.extend(
                self.mappings
                    .iter()
                    .filter(|m| matches!(m.kind, MappingKind::SubsumptionLr | MappingKind::SubsumptionRl))
                    .copied(),
            );
            self.mappings = next;
            self.refresh_subsumptions(config.execution);
            self.iteration += 1;
            summary.iterations += 1;
            summary.max_change = max_change;
            if max_change < config.convergence_epsilon {
                summary.converged = true;
                break;
            }
        }
        summary
    }

    /// Re-estimates every subsumption probability from the current entity and
    /// literal mappings.
    pub fn refresh_subsumptions(&mut self, execution: Execution) {
        let snap = self.snapshot();
        let lr = self.accumulate_subsumption(&snap, Side::Left, execution);
        let rl = self.accumulate_subsumption(&snap, Side::Right, execution);
        self.mappings.clear_kind(MappingKind::SubsumptionLr);
        self.mappings.clear_kind(MappingKind::SubsumptionRl);
        for ((p, q), v) in lr {
            self.mappings.insert(Mapping::new(MappingKind::SubsumptionLr, p, q, v, MappingSource::Pr));
        }
        for ((p, q), v) in rl {
            self.mappings.insert(Mapping::new(MappingKind::SubsumptionRl, p, q, v, MappingSource::Pr));
        }
    }

    // Subsumption of predicates on `sub_side` by predicates of the other
    // graph. Keys are always (left predicate, right predicate).
    fn accumulate_subsumption(&self, snap: &Snapshot, sub_side: Side, execution: Execution) -> Vec<((u32, u32), f64)> {
        let (sub_kg, sup_kg, mapped, literal_map) = match sub_side {
            Side::Left => (&*self.left, &*self.right, &snap.by_left, &self.cross.literal_lr),
            Side::Right => (&*self.right, &*self.left, &snap.by_right, &self.cross.literal_rl),
        };
        let entity_p = |a: EntityId, b: EntityId| match sub_side {
            Side::Left => snap.entity.get(&(a.0, b.0)).copied().unwrap_or(0.0),
            Side::Right => snap.entity.get(&(b.0, a.0)).copied().unwrap_or(0.0),
        };
        let literal_p = |a: LiteralId, b: LiteralId| {
            if literal_map[a.index()] == Some(b) {
                let (l, r) = match sub_side {
                    Side::Left => (a, b),
                    Side::Right => (b, a),
                };
                self.mappings.probability(MappingKind::Literal, l.0, r.0)
            } else {
                0.0
            }
        };
        let label_p = |a: EntityId, b: EntityId| {
            let l = sub_kg.label(a);
            if !l.is_empty() && l == sup_kg.label(b) {
                1.0
            } else {
                0.0
            }
        };
        let object_p = |a: Object, b: Object| match (a, b) {
            (Object::Entity(u), Object::Entity(v)) => entity_p(u, v),
            (Object::Literal(u), Object::Literal(v)) => literal_p(u, v),
            (Object::Label(u), Object::Label(v)) => label_p(u, v),
            _ => 0.0,
        };

        // Per subject entity: (numerator contributions, denominator contributions).
        type Partial = (Vec<((Predicate, Predicate), f64)>, Vec<(Predicate, f64)>);
        let partials: Vec<Partial> = execution.map_range(sub_kg.num_entities(), |h| {
            let h = EntityId(h as u32);
            let mut numer = Vec::new();
            let mut denom = Vec::new();
            if mapped[h.index()].is_empty() {
                return (numer, denom);
            }
            let mut best: HashMap<Predicate, f64> = HashMap::new();
            for_each_edge(sub_kg, h, |p, t| {
                best.clear();
                let mut overall: f64 = 0.0;
                for &(h2, ph) in &mapped[h.index()] {
                    for_each_edge(sup_kg, h2, |q, t2| {
                        let v = ph * object_p(t, t2);
                        if v > 0.0 {
                            let b = best.entry(q).or_insert(0.0);
                            *b = b.max(v);
                            overall = overall.max(v);
                        }
                    });
                }
                if overall > 0.0 {
                    denom.push((p, overall));
                    let mut entries: Vec<_> = best.iter().map(|(&q, &v)| ((p, q), v)).collect();
                    entries.sort_unstable_by_key(|e| e.0);
                    numer.extend(entries);
                }
            });
            (numer, denom)
        });

        let mut numer: HashMap<(Predicate, Predicate), f64> = HashMap::new();
        let mut denom: HashMap<Predicate, f64> = HashMap::new();
        for (n, d) in partials {
            for (k, v) in n {
                *numer.entry(k).or_insert(0.0) += v;
            }
            for (k, v) in d {
                *denom.entry(k).or_insert(0.0) += v;
            }
        }
        let mut out: Vec<((u32, u32), f64)> = numer
            .into_iter()
            .map(|((sub, sup), n)| {
                let value = (n / denom[&sub]).clamp(0.0, 1.0);
                let key = match sub_side {
                    Side::Left => (sub.to_raw(), sup.to_raw()),
                    Side::Right => (sup.to_raw(), sub.to_raw()),
                };
                (key, value)
            })
            .collect();
        out.sort_unstable_by_key(|e| e.0);
        out
    }

    /// Samples up to `n` non-frozen entity mappings whose probability lies in
    /// `config.uncertain_band`, uniformly without replacement. A larger `n`
    /// with the same seed returns a superset of a smaller one.
    pub fn select_uncertain(&self, n: usize, config: &PRConfig) -> Vec<Mapping> {
        let (low, high) = config.uncertain_band;
        let mut candidates: Vec<Mapping> = self
            .mappings
            .of_kind(MappingKind::Entity)
            .filter(|m| !m.frozen && m.probability >= low && m.probability < high)
            .copied()
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        candidates.shuffle(&mut rng);
        candidates.truncate(n);
        candidates
    }

    /// Freezes labelled pairs at probability 0 or 1. All labels are checked
    /// before any is applied.
    pub fn apply_feedback(&mut self, labels: &[FeedbackLabel]) -> Result<()> {
        for l in labels {
            if !self.left.contains_entity(l.left) {
                return Err(Error::UnknownEntity { side: Side::Left, entity: format!("#{}", l.left.0) });
            }
            if !self.right.contains_entity(l.right) {
                return Err(Error::UnknownEntity { side: Side::Right, entity: format!("#{}", l.right.0) });
            }
        }
        for l in labels {
            self.mappings.insert(Mapping {
                kind: MappingKind::Entity,
                left: l.left.0,
                right: l.right.0,
                probability: if l.correct { 1.0 } else { 0.0 },
                frozen: true,
                source: MappingSource::Feedback,
            });
        }
        Ok(())
    }

    /// Merges embedding proposals into the store. A proposal replaces an
    /// existing non-frozen mapping only when its probability is higher.
    /// Returns the number of mappings added or raised.
    pub fn adopt_proposals(&mut self, proposals: &MappingStore) -> usize {
        let mut changed = 0;
        for m in proposals.of_kind(MappingKind::Entity) {
            match self.mappings.get(MappingKind::Entity, m.left, m.right) {
                Some(old) if old.frozen || old.probability >= m.probability => {}
                _ => {
                    self.mappings.insert(*m);
                    changed += 1;
                }
            }
        }
        changed
    }

    fn is_exported(m: &Mapping, theta_output: f64) -> bool {
        m.kind == MappingKind::Entity && m.probability >= theta_output && !(m.frozen && m.probability == 0.0)
    }

    /// Entity pairs that would be exported.
    pub fn exported_pairs(&self, theta_output: f64) -> Vec<(EntityId, EntityId)> {
        self.mappings
            .of_kind(MappingKind::Entity)
            .filter(|m| Self::is_exported(m, theta_output))
            .map(|m| (EntityId(m.left), EntityId(m.right)))
            .collect()
    }

    pub fn exported_count(&self, theta_output: f64) -> usize {
        self.mappings
            .of_kind(MappingKind::Entity)
            .filter(|m| Self::is_exported(m, theta_output))
            .count()
    }

    /// Exported entity mappings, by descending probability then by name.
    pub fn export_rows(&self, theta_output: f64) -> Vec<ExportRow> {
        let mut rows: Vec<ExportRow> = self
            .mappings
            .of_kind(MappingKind::Entity)
            .filter(|m| Self::is_exported(m, theta_output))
            .map(|m| ExportRow {
                left: self.left.entity_name(EntityId(m.left)).to_owned(),
                right: self.right.entity_name(EntityId(m.right)).to_owned(),
                probability: m.probability,
            })
            .collect();
        rows.sort_by(|a, b| {
            b.probability
                .total_cmp(&a.probability)
                .then_with(|| a.left.cmp(&b.left))
                .then_with(|| a.right.cmp(&b.right))
        });
        rows
    }

    /// `left<TAB>right<TAB>probability` lines, probability to 6 decimals.
    pub fn export_tsv(&self, theta_output: f64) -> String {
        let mut out = String::new();
        for row in self.export_rows(theta_output) {
            let _ = writeln!(out, "{}\t{}\t{:.6}", row.left, row.right, row.probability);
        }
        out
    }
}
