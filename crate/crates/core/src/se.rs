//! Structure-aware entity embeddings.
//!
//! Both graphs are embedded into one shared space. An entity's embedding is
//! the functionality-weighted mean of its own base vector and its
//! neighbours'. Training pulls seed pairs together with a margin ranking loss
//! against randomly corrupted right entities, backpropagating into the base
//! vectors, which are renormalized after every epoch. Mutually nearest cross-graph
//! pairs above a similarity threshold become new entity mappings.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::functionality::FunctionalityTable;
use crate::kg::{EntityId, KnowledgeGraph, Predicate};
use crate::mapping::{Mapping, MappingKind, MappingSource, MappingStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SEConfig {
    pub dimension: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives_per_positive: usize,
    pub margin: f64,
    /// Entity mappings at or above this probability become training seeds.
    pub theta_seed: f64,
    /// Minimum cosine similarity for a proposed mapping.
    pub tau_se: f64,
    pub rng_seed: u64,
    /// Seed pairs per gradient step.
    pub batch_size: usize,
    pub execution: Execution,
}

impl Default for SEConfig {
    fn default() -> Self {
        SEConfig {
            dimension: 32,
            epochs: 50,
            learning_rate: 0.05,
            negatives_per_positive: 5,
            margin: 1.0,
            theta_seed: 0.9,
            tau_se: 0.9,
            rng_seed: 0,
            batch_size: 64,
            execution: Execution::default(),
        }
    }
}

impl SEConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_owned()));
        if self.dimension == 0 || self.epochs == 0 || self.negatives_per_positive == 0 || self.batch_size == 0 {
            return bad("dimension, epochs, negatives_per_positive and batch_size must be positive");
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(self.learning_rate > 0.0) || !(self.margin > 0.0) {
            return bad("learning_rate and margin must be positive");
        }
        if !(self.theta_seed > 0.0 && self.theta_seed < 1.0) {
            return bad("theta_seed must lie in (0, 1)");
        }
        if !(self.tau_se > 0.0 && self.tau_se <= 1.0) {
            return bad("tau_se must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Unit vectors for every entity of both graphs plus the per-epoch mean
/// training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    dimension: usize,
    left: Vec<f64>,
    right: Vec<f64>,
    loss_trace: Vec<(usize, f64)>,
}

impl EmbeddingSet {
    /// Wraps row-major vectors. Panics if a buffer is not a multiple of
    /// `dimension`.
    pub fn from_vectors(dimension: usize, left: Vec<f64>, right: Vec<f64>) -> Self {
        assert!(dimension > 0 && left.len().is_multiple_of(dimension) && right.len().is_multiple_of(dimension));
        EmbeddingSet { dimension, left, right, loss_trace: Vec::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn num_left(&self) -> usize {
        self.left.len() / self.dimension
    }

    pub fn num_right(&self) -> usize {
        self.right.len() / self.dimension
    }

    pub fn left(&self, e: EntityId) -> &[f64] {
        let d = self.dimension;
        &self.left[e.index() * d..(e.index() + 1) * d]
    }

    pub fn right(&self, e: EntityId) -> &[f64] {
        let d = self.dimension;
        &self.right[e.index() * d..(e.index() + 1) * d]
    }

    pub fn loss_trace(&self) -> &[(usize, f64)] {
        &self.loss_trace
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().map(|&(_, l)| l)
    }

    /// Debug dump: `side<TAB>entity<TAB>v1,v2,...`.
    pub fn write_tsv<W: Write>(&self, left: &KnowledgeGraph, right: &KnowledgeGraph, mut out: W) -> std::io::Result<()> {
        for (side, kg, n) in [("left", left, self.num_left()), ("right", right, self.num_right())] {
            for i in 0..n {
                let e = EntityId(i as u32);
                let v = if side == "left" { self.left(e) } else { self.right(e) };
                let joined: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
                writeln!(out, "{side}\t{}\t{}", kg.entity_name(e), joined.join(","))?;
            }
        }
        Ok(())
    }
}

/// Cosine similarity clamped to `[0, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    debug_assert_eq!(u.len(), v.len());
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(0.0, 1.0))
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Entity mappings usable as training seeds: probability at least
/// `theta_seed` and not rejected by feedback.
pub fn select_seeds(mappings: &MappingStore, theta_seed: f64) -> Vec<(EntityId, EntityId)> {
    mappings
        .of_kind(MappingKind::Entity)
        .filter(|m| {
            if m.frozen {
                m.probability == 1.0
            } else {
                m.probability >= theta_seed
            }
        })
        .map(|m| (EntityId(m.left), EntityId(m.right)))
        .collect()
}

/// Row-normalized neighbour weights for one graph; the first entry of every
/// list is the entity itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAdjacency {
    lists: Vec<Vec<(EntityId, f64)>>,
}

impl WeightedAdjacency {
    pub fn neighbours(&self, e: EntityId) -> &[(EntityId, f64)] {
        &self.lists[e.index()]
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

/// Raw weight between neighbours is the largest `fun_inv` of any relation
/// (or inverse) leading from the entity to the neighbour; the self loop
/// weighs 1. Each list is then scaled to sum to 1.
pub fn build_weighted_adjacency(kg: &KnowledgeGraph, funcs: &FunctionalityTable) -> WeightedAdjacency {
    let lists = kg
        .entities()
        .map(|e| {
            let mut list: Vec<(EntityId, f64)> = vec![(e, 1.0)];
            for &(r, t) in kg.edges(e) {
                if t == e {
                    continue;
                }
                let w = funcs.fun_inv(Predicate::Relation(r));
                if w <= 0.0 {
                    continue;
                }
                match list.iter_mut().find(|(n, _)| *n == t) {
                    Some(entry) => entry.1 = entry.1.max(w),
                    None => list.push((t, w)),
                }
            }
            let total: f64 = list.iter().map(|(_, w)| w).sum();
            for entry in &mut list {
                entry.1 /= total;
            }
            list
        })
        .collect();
    WeightedAdjacency { lists }
}

/// `max(0, margin + d(l, r) − d(l, neg))` with Euclidean `d`.
pub fn margin_loss(l: &[f64], r: &[f64], neg: &[f64], margin: f64) -> f64 {
    (margin + distance(l, r) - distance(l, neg)).max(0.0)
}

/// Gradient of [`margin_loss`] with respect to its three arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginGradient {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Analytic gradient of [`margin_loss`]; `None` where the hinge is inactive.
pub fn margin_loss_gradient(l: &[f64], r: &[f64], neg: &[f64], margin: f64) -> Option<MarginGradient> {
    let d_pos = distance(l, r);
    let d_neg = distance(l, neg);
    if margin + d_pos - d_neg <= 0.0 {
        return None;
    }
    let d = l.len();
    let mut g = MarginGradient { left: vec![0.0; d], right: vec![0.0; d], negative: vec![0.0; d] };
    for i in 0..d {
        if d_pos > 0.0 {
            let u = (l[i] - r[i]) / d_pos;
            g.left[i] += u;
            g.right[i] -= u;
        }
        if d_neg > 0.0 {
            let u = (l[i] - neg[i]) / d_neg;
            g.left[i] -= u;
            g.negative[i] += u;
        }
    }
    Some(g)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn random_unit_vectors(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..count * d).map(|_| rng.sample(StandardNormal)).collect();
    for v in out.chunks_mut(d) {
        normalize(v);
    }
    out
}

fn smooth(vectors: &[f64], adjacency: &WeightedAdjacency, d: usize, exec: Execution) -> Vec<f64> {
    let mut out = vec![0.0; vectors.len()];
    exec.for_each_chunk_mut(&mut out, d, |i, target| {
        for &(n, w) in adjacency.neighbours(EntityId(i as u32)) {
            let src = &vectors[n.index() * d..(n.index() + 1) * d];
            for (t, s) in target.iter_mut().zip(src) {
                *t += w * s;
            }
        }
    });
    out
}

struct PairStep {
    left: EntityId,
    right: EntityId,
    negatives: Vec<EntityId>,
}

/// Per-pair loss and gradients against one snapshot.
struct PairGradient {
    loss: f64,
    left: Vec<f64>,
    right: Vec<f64>,
    negatives: Vec<(EntityId, Vec<f64>)>,
}

/// Trains embeddings from seed pairs. Fails with `NoSeeds` when `seeds` is
/// empty.
pub fn train_embeddings(
    left: &KnowledgeGraph,
    right: &KnowledgeGraph,
    adjacency: (&WeightedAdjacency, &WeightedAdjacency),
    seeds: &[(EntityId, EntityId)],
    config: &SEConfig,
) -> Result<EmbeddingSet> {
    train_embeddings_with_progress(left, right, adjacency, seeds, config, |_, _| {})
}

/// [`train_embeddings`] with a callback receiving `(epoch, mean loss)` after
/// every epoch.
pub fn train_embeddings_with_progress(
    left: &KnowledgeGraph,
    right: &KnowledgeGraph,
    adjacency: (&WeightedAdjacency, &WeightedAdjacency),
    seeds: &[(EntityId, EntityId)],
    config: &SEConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<EmbeddingSet> {
    if seeds.is_empty() {
        return Err(Error::NoSeeds);
    }
    let d = config.dimension;
    let (n_left, n_right) = (left.num_entities(), right.num_entities());
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut lv = random_unit_vectors(&mut rng, n_left, d);
    let mut rv = random_unit_vectors(&mut rng, n_right, d);
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut terms = 0usize;
        for batch in order.chunks(config.batch_size) {
            let steps: Vec<PairStep> = batch
                .iter()
                .map(|&i| {
                    let (l, r) = seeds[i];
                    let negatives = if n_right > 1 {
                        (0..config.negatives_per_positive)
                            .map(|_| loop {
                                let c = EntityId(rng.random_range(0..n_right as u32));
                                if c != r {
                                    break c;
                                }
                            })
                            .collect()
                    } else {
                        Vec::new()
                    };
                    PairStep { left: l, right: r, negatives }
                })
                .collect();

            // The loss sees the propagated vectors; gradients flow back to
            // each neighbour in proportion to its adjacency weight.
            let lh = smooth(&lv, adjacency.0, d, config.execution);
            let rh = smooth(&rv, adjacency.1, d, config.execution);
            let (lh_ref, rh_ref) = (&lh, &rh);
            let grads = config.execution.map_slice(&steps, |step| {
                let lvec = &lh_ref[step.left.index() * d..(step.left.index() + 1) * d];
                let rvec = &rh_ref[step.right.index() * d..(step.right.index() + 1) * d];
                let mut g = PairGradient { loss: 0.0, left: vec![0.0; d], right: vec![0.0; d], negatives: Vec::new() };
                for &n in &step.negatives {
                    let nvec = &rh_ref[n.index() * d..(n.index() + 1) * d];
                    g.loss += margin_loss(lvec, rvec, nvec, config.margin);
                    if let Some(mg) = margin_loss_gradient(lvec, rvec, nvec, config.margin) {
                        add_into(&mut g.left, &mg.left);
                        add_into(&mut g.right, &mg.right);
                        g.negatives.push((n, mg.negative));
                    }
                }
                g
            });

            let rate = config.learning_rate;
            for (step, g) in steps.iter().zip(grads) {
                total_loss += g.loss;
                terms += step.negatives.len();
                scatter(&mut lv, adjacency.0, step.left, -rate, &g.left, d);
                scatter(&mut rv, adjacency.1, step.right, -rate, &g.right, d);
                for (n, gn) in &g.negatives {
                    scatter(&mut rv, adjacency.1, *n, -rate, gn, d);
                }
            }
        }

        config.execution.for_each_chunk_mut(&mut lv, d, |_, v| normalize(v));
        config.execution.for_each_chunk_mut(&mut rv, d, |_, v| normalize(v));
        let mean = if terms == 0 { 0.0 } else { total_loss / terms as f64 };
        loss_trace.push((epoch, mean));
        on_epoch(epoch, mean);
    }

    let mut lv = smooth(&lv, adjacency.0, d, config.execution);
    let mut rv = smooth(&rv, adjacency.1, d, config.execution);
    config.execution.for_each_chunk_mut(&mut lv, d, |_, v| normalize(v));
    config.execution.for_each_chunk_mut(&mut rv, d, |_, v| normalize(v));
    Ok(EmbeddingSet { dimension: d, left: lv, right: rv, loss_trace })
}

// Applies `a * g`, a gradient on the propagated vector of `e`, to the base
// vectors `e` aggregates.
fn scatter(base: &mut [f64], adjacency: &WeightedAdjacency, e: EntityId, a: f64, g: &[f64], d: usize) {
    for &(n, w) in adjacency.neighbours(e) {
        axpy(&mut base[n.index() * d..(n.index() + 1) * d], a * w, g);
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn nearest(candidates: &[f64], query: &[f64], d: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.chunks(d).enumerate() {
        let Ok(sim) = cosine_similarity(query, c) else { continue };
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((i, sim));
        }
    }
    best
}

/// Proposes an entity mapping for every mutually nearest cross-graph pair
/// whose cosine similarity reaches `tau_se`. Ties go to the lower id.
pub fn propose_mappings(embeddings: &EmbeddingSet, config: &SEConfig) -> MappingStore {
    let d = embeddings.dimension;
    let (left, right) = (&embeddings.left, &embeddings.right);
    let exec = config.execution;
    let best_right = exec.map_range(embeddings.num_left(), |i| nearest(right, &left[i * d..(i + 1) * d], d));
    let best_left = exec.map_range(embeddings.num_right(), |j| nearest(left, &right[j * d..(j + 1) * d], d));
    best_right
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let (j, sim) = (*b)?;
            let (back, _) = best_left[j]?;
            (back == i && sim >= config.tau_se)
                .then(|| Mapping::new(MappingKind::Entity, i as u32, j as u32, sim, MappingSource::Se))
        })
        .collect()
}
