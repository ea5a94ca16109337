//! Unsupervised knowledge graph alignment.
//!
//! Two knowledge graphs are aligned by alternating a probabilistic reasoning
//! pass ([`pr`]) over relation and attribute triples with a structure-aware
//! embedding pass ([`se`]). The [`pipeline`] module drives the rounds and the
//! optional human feedback loop; [`kg`] holds parsing and graph queries.

pub mod error;
pub mod exec;
pub mod functionality;
pub mod kg;
pub mod mapping;
pub mod metrics;
pub mod pipeline;
pub mod pr;
pub mod se;
pub mod synthetic;

pub use error::{Error, Result};
pub use exec::Execution;
pub use functionality::{compute_functionalities, Functionality, FunctionalityTable};
pub use kg::{
    normalize_literal, parse_kg, AttributeId, EntityId, KGStats, KnowledgeGraph, LiteralId,
    Predicate, RelationId, Side, Subgraph,
};
pub use mapping::{Mapping, MappingKind, MappingSource, MappingStore};
pub use metrics::{evaluate_metrics, Metrics, ReferenceAlignment};
pub use pipeline::{
    run_pipeline, FeedbackResponse, FeedbackSource, Mode, NoFeedback, PipelineConfig,
    PipelineOutcome, ProgressEvent, ProgressSink, Stage, UncertainItem,
};
pub use pr::{blend_probability, ExportRow, FeedbackLabel, PRConfig, PRState};
pub use se::{
    build_weighted_adjacency, cosine_similarity, margin_loss, margin_loss_gradient, propose_mappings, select_seeds,
    train_embeddings, EmbeddingSet, SEConfig, WeightedAdjacency,
};
