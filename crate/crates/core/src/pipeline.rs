//! The alignment pipeline.
//!
//! Initialization and a first reasoning pass run once; then `se_pr_rounds`
//! rounds each train embeddings from the confident mappings, adopt the
//! embedding proposals and reason again with the embeddings blended in. In
//! semi-automatic mode every reasoning pass is followed by one annotation
//! request; labelled pairs are frozen and reasoning reruns before the next
//! stage.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kg::{EntityId, KnowledgeGraph};
use crate::mapping::Mapping;
use crate::metrics::{evaluate_metrics, Metrics, ReferenceAlignment};
use crate::pr::{FeedbackLabel, PRConfig, PRState};
use crate::se::{
    build_weighted_adjacency, propose_mappings, select_seeds, train_embeddings_with_progress, EmbeddingSet, SEConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    #[default]
    Automatic,
    SemiAutomatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub pr_config: PRConfig,
    pub se_config: SEConfig,
    /// Embedding + reasoning rounds after the first reasoning pass. Zero runs
    /// reasoning only.
    pub se_pr_rounds: usize,
    pub mode: Mode,
    pub uncertain_per_round: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pr_config: PRConfig::default(),
            se_config: SEConfig::default(),
            se_pr_rounds: 1,
            mode: Mode::Automatic,
            uncertain_per_round: 50,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.pr_config.validate()?;
        self.se_config.validate()?;
        if self.uncertain_per_round == 0 {
            return Err(crate::Error::InvalidConfig("uncertain_per_round must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    Init,
    Pr,
    Se,
    Feedback,
}

/// One line of the progress log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub stage: Stage,
    pub elapsed_ms: u64,
    pub loss: Option<f64>,
    pub num_mappings: usize,
}

pub trait ProgressSink {
    fn emit(&mut self, event: &ProgressEvent);

    /// Called after `emit` at every stage boundary with the current state.
    fn stage_finished(&mut self, _stage: Stage, _state: &PRState) {}
}

impl<F: FnMut(&ProgressEvent)> ProgressSink for F {
    fn emit(&mut self, event: &ProgressEvent) {
        self(event)
    }
}

/// A mapping offered for annotation, with display names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainItem {
    pub left: EntityId,
    pub right: EntityId,
    pub left_name: String,
    pub right_name: String,
    pub left_label: String,
    pub right_label: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedbackResponse {
    /// Labels for any subset of the offered items.
    Labels(Vec<FeedbackLabel>),
    /// No feedback now or later; the run continues automatically.
    Decline,
}

/// Where annotation requests go. `request` may block until labels arrive.
pub trait FeedbackSource {
    fn request(&mut self, items: &[UncertainItem]) -> FeedbackResponse;
}

/// Declines every request.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFeedback;

impl FeedbackSource for NoFeedback {
    fn request(&mut self, _items: &[UncertainItem]) -> FeedbackResponse {
        FeedbackResponse::Decline
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub state: PRState,
    pub history: Vec<Stage>,
    pub progress: Vec<ProgressEvent>,
    pub embeddings: Option<EmbeddingSet>,
    pub theta_output: f64,
}

impl PipelineOutcome {
    pub fn export_tsv(&self) -> String {
        self.state.export_tsv(self.theta_output)
    }

    pub fn exported_count(&self) -> usize {
        self.state.exported_count(self.theta_output)
    }

    pub fn metrics(&self, reference: &ReferenceAlignment) -> Result<Metrics> {
        let rows = self.state.export_rows(self.theta_output);
        evaluate_metrics(rows.iter().map(|r| (r.left.as_str(), r.right.as_str())), reference)
    }
}

struct Run<'a> {
    config: &'a PipelineConfig,
    state: PRState,
    history: Vec<Stage>,
    progress: Vec<ProgressEvent>,
    start: Instant,
    sink: &'a mut dyn ProgressSink,
    feedback: &'a mut dyn FeedbackSource,
    feedback_open: bool,
    feedback_rounds: u64,
}

impl Run<'_> {
    fn emit(&mut self, stage: Stage, loss: Option<f64>) {
        let event = ProgressEvent {
            stage,
            elapsed_ms: self.start.elapsed().as_millis() as u64,
            loss,
            num_mappings: self.state.exported_count(self.config.pr_config.theta_output),
        };
        self.sink.emit(&event);
        self.progress.push(event);
    }

    fn finish_stage(&mut self, stage: Stage, loss: Option<f64>) {
        self.history.push(stage);
        self.emit(stage, loss);
        self.sink.stage_finished(stage, &self.state);
    }

    fn reason(&mut self, embeddings: Option<&EmbeddingSet>) -> Result<()> {
        self.state.run_pr(&self.config.pr_config, embeddings);
        self.finish_stage(Stage::Pr, None);
        self.ask_for_feedback(embeddings)
    }

    fn ask_for_feedback(&mut self, embeddings: Option<&EmbeddingSet>) -> Result<()> {
        if self.config.mode != Mode::SemiAutomatic || !self.feedback_open {
            return Ok(());
        }
        let pr = PRConfig {
            rng_seed: self.config.pr_config.rng_seed.wrapping_add(self.feedback_rounds),
            ..self.config.pr_config
        };
        self.feedback_rounds += 1;
        let items: Vec<UncertainItem> = self
            .state
            .select_uncertain(self.config.uncertain_per_round, &pr)
            .iter()
            .map(|m| self.describe(m))
            .collect();
        if items.is_empty() {
            return Ok(());
        }
        match self.feedback.request(&items) {
            FeedbackResponse::Decline => {
                self.feedback_open = false;
            }
            FeedbackResponse::Labels(labels) if labels.is_empty() => {}
            FeedbackResponse::Labels(labels) => {
                self.state.apply_feedback(&labels)?;
                self.state.run_pr(&self.config.pr_config, embeddings);
                self.finish_stage(Stage::Feedback, None);
            }
        }
        Ok(())
    }

    fn describe(&self, m: &Mapping) -> UncertainItem {
        let (l, r) = (EntityId(m.left), EntityId(m.right));
        let (lk, rk) = (self.state.left(), self.state.right());
        UncertainItem {
            left: l,
            right: r,
            left_name: lk.entity_name(l).to_owned(),
            right_name: rk.entity_name(r).to_owned(),
            left_label: lk.label(l).to_owned(),
            right_label: rk.label(r).to_owned(),
            probability: m.probability,
        }
    }
}

/// Runs the full pipeline. Progress events go to `sink` at every stage
/// boundary and periodically during embedding training.
pub fn run_pipeline(
    left: Arc<KnowledgeGraph>,
    right: Arc<KnowledgeGraph>,
    config: &PipelineConfig,
    sink: &mut dyn ProgressSink,
    feedback: &mut dyn FeedbackSource,
) -> Result<PipelineOutcome> {
    config.validate()?;
    let start = Instant::now();
    let state = PRState::new(left, right, &config.pr_config);
    let mut run = Run {
        config,
        state,
        history: Vec::new(),
        progress: Vec::new(),
        start,
        sink,
        feedback,
        feedback_open: true,
        feedback_rounds: 0,
    };
    run.finish_stage(Stage::Init, None);
    run.reason(None)?;

    let mut embeddings = None;
    if config.se_pr_rounds > 0 {
        let adjacency_left = build_weighted_adjacency(run.state.left(), run.state.funcs_left());
        let adjacency_right = build_weighted_adjacency(run.state.right(), run.state.funcs_right());
        let report_every = (config.se_config.epochs / 5).max(1);
        for _ in 0..config.se_pr_rounds {
            let seeds = select_seeds(run.state.mappings(), config.se_config.theta_seed);
            embeddings = if seeds.is_empty() {
                // Nothing to learn from; reasoning continues on its own output.
                None
            } else {
                let (left, right) = (run.state.left().clone(), run.state.right().clone());
                let trained = train_embeddings_with_progress(
                    &left,
                    &right,
                    (&adjacency_left, &adjacency_right),
                    &seeds,
                    &config.se_config,
                    |epoch, loss| {
                        if epoch % report_every == 0 && epoch < config.se_config.epochs {
                            run.emit(Stage::Se, Some(loss));
                        }
                    },
                )?;
                let proposals = propose_mappings(&trained, &config.se_config);
                run.state.adopt_proposals(&proposals);
                Some(trained)
            };
            let loss = embeddings.as_ref().and_then(EmbeddingSet::final_loss);
            run.finish_stage(Stage::Se, loss);
            run.reason(embeddings.as_ref())?;
        }
    }

    Ok(PipelineOutcome {
        state: run.state,
        history: run.history,
        progress: run.progress,
        embeddings,
        theta_output: config.pr_config.theta_output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{parse_kg, Side};

    fn graphs() -> (Arc<KnowledgeGraph>, Arc<KnowledgeGraph>) {
        let rel_l = "http://l/a\tp\thttp://l/b\nhttp://l/b\tp\thttp://l/c\nhttp://l/c\tq\thttp://l/d\nhttp://l/d\tq\thttp://l/a\n";
        let rel_r = "http://r/a\tp2\thttp://r/b\nhttp://r/b\tp2\thttp://r/x1\nhttp://r/x1\tq2\thttp://r/d\nhttp://r/d\tq2\thttp://r/a\n";
        (
            Arc::new(parse_kg(rel_l.as_bytes(), "".as_bytes(), Side::Left).unwrap()),
            Arc::new(parse_kg(rel_r.as_bytes(), "".as_bytes(), Side::Right).unwrap()),
        )
    }

    fn run(config: &PipelineConfig, feedback: &mut dyn FeedbackSource) -> PipelineOutcome {
        let (l, r) = graphs();
        run_pipeline(l, r, config, &mut |_: &ProgressEvent| {}, feedback).unwrap()
    }

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            se_config: SEConfig { epochs: 10, dimension: 8, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn stage_schedule() {
        let cfg = PipelineConfig { se_pr_rounds: 2, ..small_config() };
        assert_eq!(
            run(&cfg, &mut NoFeedback).history,
            vec![Stage::Init, Stage::Pr, Stage::Se, Stage::Pr, Stage::Se, Stage::Pr]
        );
        let cfg = PipelineConfig { se_pr_rounds: 0, ..small_config() };
        assert_eq!(run(&cfg, &mut NoFeedback).history, vec![Stage::Init, Stage::Pr]);
    }

    #[test]
    fn declining_source_matches_automatic() {
        let auto = run(&small_config(), &mut NoFeedback);
        let semi = run(&PipelineConfig { mode: Mode::SemiAutomatic, ..small_config() }, &mut NoFeedback);
        assert_eq!(auto.export_tsv(), semi.export_tsv());
        assert_eq!(auto.history, semi.history);
    }

    #[test]
    fn progress_events_track_stages() {
        let (l, r) = graphs();
        let mut seen = Vec::new();
        let cfg = small_config();
        let outcome = run_pipeline(l, r, &cfg, &mut |e: &ProgressEvent| seen.push(*e), &mut NoFeedback).unwrap();
        assert_eq!(seen, outcome.progress);
        let boundaries: Vec<Stage> = seen
            .iter()
            .enumerate()
            .filter(|(i, e)| e.stage != Stage::Se || seen.get(i + 1).is_none_or(|n| n.stage != Stage::Se))
            .map(|(_, e)| e.stage)
            .collect();
        assert_eq!(boundaries, outcome.history);
        for e in &seen {
            assert_eq!(e.loss.is_some(), e.stage == Stage::Se);
        }
        assert_eq!(seen.last().unwrap().num_mappings, outcome.exported_count());
    }

    struct Scripted {
        calls: usize,
    }

    impl FeedbackSource for Scripted {
        fn request(&mut self, items: &[UncertainItem]) -> FeedbackResponse {
            self.calls += 1;
            FeedbackResponse::Labels(
                items
                    .iter()
                    .map(|i| FeedbackLabel { left: i.left, right: i.right, correct: i.left_label == i.right_label })
                    .collect(),
            )
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (l, r) = graphs();
        let cfg = PipelineConfig { uncertain_per_round: 0, ..Default::default() };
        assert!(run_pipeline(l, r, &cfg, &mut |_: &ProgressEvent| {}, &mut NoFeedback).is_err());
    }

    #[test]
    fn feedback_events_follow_reasoning() {
        let mut cfg = small_config();
        cfg.mode = Mode::SemiAutomatic;
        cfg.pr_config.uncertain_band = (0.0, 1.0);
        let mut source = Scripted { calls: 0 };
        let outcome = run(&cfg, &mut source);
        assert!(source.calls > 0);
        let h = &outcome.history;
        assert!(h.contains(&Stage::Feedback));
        for (i, s) in h.iter().enumerate() {
            if *s == Stage::Feedback {
                assert_eq!(h[i - 1], Stage::Pr);
            }
        }
        let frozen = outcome.state.mappings().iter().filter(|m| m.frozen).count();
        assert!(frozen > 0);
    }
}
