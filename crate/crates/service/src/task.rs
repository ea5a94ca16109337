use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use kgalign_core::{Metrics, PipelineConfig, ProgressEvent, UncertainItem};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskStatus {
    Queued,
    Running,
    AwaitingFeedback,
    Done,
    Failed,
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskStatus::Queued => "QUEUED",
            TaskStatus::Running => "RUNNING",
            TaskStatus::AwaitingFeedback => "AWAITING_FEEDBACK",
            TaskStatus::Done => "DONE",
            TaskStatus::Failed => "FAILED",
        })
    }
}

impl TaskStatus {
    /// QUEUED → RUNNING → (AWAITING_FEEDBACK → RUNNING)* → DONE | FAILED.
    /// Any live task may fail.
    pub fn can_become(self, next: TaskStatus) -> bool {
        use TaskStatus::*;
        matches!(
            (self, next),
            (Queued, Running) | (Running, AwaitingFeedback) | (AwaitingFeedback, Running) | (Running, Done)
        ) || (next == Failed && !self.is_terminal())
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Done | TaskStatus::Failed)
    }
}

/// An uncertain mapping offered to the annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingItem {
    pub left: String,
    pub right: String,
    pub left_label: String,
    pub right_label: String,
    pub probability: f64,
}

impl From<&UncertainItem> for PendingItem {
    fn from(item: &UncertainItem) -> Self {
        PendingItem {
            left: item.left_name.clone(),
            right: item.right_name.clone(),
            left_label: item.left_label.clone(),
            right_label: item.right_label.clone(),
            probability: item.probability,
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub status: TaskStatus,
    /// Builtin dataset name, or "uploaded".
    pub dataset: String,
    pub config: PipelineConfig,
    pub progress_log: Vec<ProgressEvent>,
    pub pending_feedback: Vec<PendingItem>,
    pub created_at: u64,
    pub updated_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Scores against the dataset's reference alignment, when it has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
}

impl TaskRecord {
    pub fn new(task_id: String, dataset: String, config: PipelineConfig) -> Self {
        let now = now_ms();
        TaskRecord {
            task_id,
            status: TaskStatus::Queued,
            dataset,
            config,
            progress_log: Vec::new(),
            pending_feedback: Vec::new(),
            created_at: now,
            updated_at: now,
            error: None,
            metrics: None,
        }
    }

    /// Moves to `next`, keeping `pending_feedback` non-empty exactly while
    /// awaiting feedback.
    pub fn transition(&mut self, next: TaskStatus, pending: Vec<PendingItem>) -> ServiceResult<()> {
        if !self.status.can_become(next) {
            return Err(ServiceError::Internal(format!("illegal transition {} -> {next}", self.status)));
        }
        if (next == TaskStatus::AwaitingFeedback) == pending.is_empty() {
            return Err(ServiceError::Internal(format!("{next} with {} pending items", pending.len())));
        }
        self.status = next;
        self.pending_feedback = pending;
        self.updated_at = now_ms();
        Ok(())
    }

    pub fn fail(&mut self, message: String) {
        if !self.status.is_terminal() {
            self.status = TaskStatus::Failed;
            self.pending_feedback.clear();
            self.error = Some(message);
            self.updated_at = now_ms();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [TaskStatus; 5] =
        [TaskStatus::Queued, TaskStatus::Running, TaskStatus::AwaitingFeedback, TaskStatus::Done, TaskStatus::Failed];

    fn item() -> PendingItem {
        PendingItem { left: "a".into(), right: "b".into(), left_label: "a".into(), right_label: "b".into(), probability: 0.3 }
    }

    #[test]
    fn allowed_transitions() {
        let allowed: Vec<(TaskStatus, TaskStatus)> =
            ALL.iter().flat_map(|&a| ALL.iter().map(move |&b| (a, b))).filter(|&(a, b)| a.can_become(b)).collect();
        use TaskStatus::*;
        assert_eq!(
            allowed,
            vec![
                (Queued, Running),
                (Queued, Failed),
                (Running, AwaitingFeedback),
                (Running, Done),
                (Running, Failed),
                (AwaitingFeedback, Running),
                (AwaitingFeedback, Failed),
            ]
        );
    }

    #[test]
    fn pending_tracks_awaiting() {
        let mut r = TaskRecord::new("t".into(), "x".into(), PipelineConfig::default());
        r.transition(TaskStatus::Running, vec![]).unwrap();
        assert!(r.transition(TaskStatus::AwaitingFeedback, vec![]).is_err());
        r.transition(TaskStatus::AwaitingFeedback, vec![item()]).unwrap();
        assert!(r.transition(TaskStatus::Running, vec![item()]).is_err());
        r.transition(TaskStatus::Running, vec![]).unwrap();
        assert!(r.pending_feedback.is_empty());
        r.fail("boom".into());
        assert_eq!(r.status, TaskStatus::Failed);
        r.fail("again".into());
        assert_eq!(r.error.as_deref(), Some("boom"));
    }

    #[test]
    fn status_wire_names() {
        for s in ALL {
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
    }
}
