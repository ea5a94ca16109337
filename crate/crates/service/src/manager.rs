//! Task registry, FIFO work queue and on-disk task state.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};

use kgalign_core::{
    run_pipeline, ExportRow, FeedbackLabel, FeedbackResponse, FeedbackSource, KnowledgeGraph, PRState,
    PipelineConfig, ProgressEvent, ProgressSink, ReferenceAlignment, Side, Stage, UncertainItem,
};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};

use crate::dataset::{DatasetFiles, DatasetRef, LoadedDataset};
use crate::error::{ServiceError, ServiceResult};
use crate::task::{PendingItem, TaskRecord, TaskStatus};

const RECORD_FILE: &str = "task.json";
const MAPPINGS_FILE: &str = "mappings.tsv";
const DATASET_DIR: &str = "dataset";

fn read<T>(lock: &RwLock<T>) -> RwLockReadGuard<'_, T> {
    lock.read().unwrap_or_else(|e| e.into_inner())
}

fn write<T>(lock: &RwLock<T>) -> RwLockWriteGuard<'_, T> {
    lock.write().unwrap_or_else(|e| e.into_inner())
}

fn lock<T>(mutex: &Mutex<T>) -> MutexGuard<'_, T> {
    mutex.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Clone)]
pub struct ManagerConfig {
    pub data_dir: PathBuf,
    pub datasets_dir: PathBuf,
    pub workers: usize,
}

/// One label as submitted by an annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmittedLabel {
    pub left: String,
    pub right: String,
    pub label: u8,
}

pub struct Graphs {
    pub left: Arc<KnowledgeGraph>,
    pub right: Arc<KnowledgeGraph>,
    pub reference: Option<ReferenceAlignment>,
}

impl Graphs {
    pub fn side(&self, side: Side) -> &KnowledgeGraph {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

pub struct TaskHandle {
    dir: PathBuf,
    record: RwLock<TaskRecord>,
    graphs: Mutex<Option<Arc<Graphs>>>,
    /// Latest exported mappings, refreshed at every stage boundary.
    rows: RwLock<Option<Arc<Vec<ExportRow>>>>,
    feedback_tx: Mutex<Option<mpsc::Sender<FeedbackResponse>>>,
}

impl TaskHandle {
    pub fn record(&self) -> TaskRecord {
        read(&self.record).clone()
    }

    pub fn status(&self) -> TaskStatus {
        read(&self.record).status
    }

    fn update<T>(&self, f: impl FnOnce(&mut TaskRecord) -> ServiceResult<T>) -> ServiceResult<T> {
        let mut record = write(&self.record);
        let out = f(&mut record)?;
        persist_record(&self.dir, &record)?;
        Ok(out)
    }

    /// Parsed graphs, loaded from the task directory on first use.
    pub fn graphs(&self) -> ServiceResult<Arc<Graphs>> {
        let mut slot = lock(&self.graphs);
        if let Some(g) = slot.as_ref() {
            return Ok(g.clone());
        }
        let files = DatasetFiles::read_from(&self.dir.join(DATASET_DIR))?;
        let graphs = Arc::new(into_graphs(files.parse()?));
        *slot = Some(graphs.clone());
        Ok(graphs)
    }

    /// Current mappings: the live snapshot while running, the export once done.
    pub fn rows(&self) -> ServiceResult<Arc<Vec<ExportRow>>> {
        if let Some(rows) = read(&self.rows).as_ref() {
            return Ok(rows.clone());
        }
        if self.status() != TaskStatus::Done {
            return Ok(Arc::new(Vec::new()));
        }
        let rows = Arc::new(parse_export(&self.export()?));
        *write(&self.rows) = Some(rows.clone());
        Ok(rows)
    }

    pub fn export(&self) -> ServiceResult<String> {
        let status = self.status();
        if status != TaskStatus::Done {
            return Err(ServiceError::WrongState { status, expected: "DONE" });
        }
        Ok(fs::read_to_string(self.dir.join(MAPPINGS_FILE))?)
    }

    /// Pending items, empty unless the task is awaiting feedback.
    pub fn uncertain(&self) -> Vec<PendingItem> {
        read(&self.record).pending_feedback.clone()
    }

    /// Forwards labels to the waiting pipeline. An empty label set with
    /// `decline` stops all further feedback requests for this task.
    pub fn submit_feedback(&self, labels: &[SubmittedLabel], decline: bool) -> ServiceResult<usize> {
        if decline && !labels.is_empty() {
            return Err(ServiceError::BadRequest("decline takes no labels".into()));
        }
        let graphs = self.graphs()?;
        self.update(|record| {
            if record.status != TaskStatus::AwaitingFeedback {
                return Err(ServiceError::WrongState { status: record.status, expected: "AWAITING_FEEDBACK" });
            }
            let mut converted = Vec::with_capacity(labels.len());
            for l in labels {
                let pending = record.pending_feedback.iter().any(|p| p.left == l.left && p.right == l.right);
                let ids = graphs.left.entity_id(&l.left).zip(graphs.right.entity_id(&l.right));
                let (Some((left, right)), true) = (ids, pending) else {
                    return Err(ServiceError::UnknownPair { left: l.left.clone(), right: l.right.clone() });
                };
                if l.label > 1 {
                    return Err(ServiceError::BadRequest(format!("label must be 0 or 1, got {}", l.label)));
                }
                converted.push(FeedbackLabel { left, right, correct: l.label == 1 });
            }
            let response = if decline { FeedbackResponse::Decline } else { FeedbackResponse::Labels(converted) };
            let sender = lock(&self.feedback_tx).take();
            let delivered = sender.is_some_and(|tx| tx.send(response).is_ok());
            if !delivered {
                return Err(ServiceError::Internal("pipeline is no longer waiting for feedback".into()));
            }
            record.transition(TaskStatus::Running, Vec::new())?;
            Ok(labels.len())
        })
    }
}

fn into_graphs(loaded: LoadedDataset) -> Graphs {
    Graphs { left: Arc::new(loaded.left), right: Arc::new(loaded.right), reference: loaded.reference }
}

fn parse_export(tsv: &str) -> Vec<ExportRow> {
    tsv.lines()
        .filter_map(|line| {
            let mut fields = line.split('\t');
            let (left, right, p) = (fields.next()?, fields.next()?, fields.next()?);
            Some(ExportRow { left: left.to_owned(), right: right.to_owned(), probability: p.parse().ok()? })
        })
        .collect()
}

/// Writes via a temporary file so a crash never leaves half a record.
fn persist_record(dir: &Path, record: &TaskRecord) -> ServiceResult<()> {
    let json = serde_json::to_vec_pretty(record).map_err(|e| ServiceError::Internal(e.to_string()))?;
    let tmp = dir.join("task.json.tmp");
    fs::write(&tmp, json)?;
    fs::rename(tmp, dir.join(RECORD_FILE))?;
    Ok(())
}

struct TaskSink<'a> {
    handle: &'a TaskHandle,
    theta_output: f64,
}

impl ProgressSink for TaskSink<'_> {
    fn emit(&mut self, event: &ProgressEvent) {
        let result = self.handle.update(|r| {
            r.progress_log.push(*event);
            r.updated_at = crate::task::now_ms();
            Ok(())
        });
        if let Err(e) = result {
            tracing::warn!(error = %e, "could not persist progress");
        }
    }

    fn stage_finished(&mut self, _stage: Stage, state: &PRState) {
        *write(&self.handle.rows) = Some(Arc::new(state.export_rows(self.theta_output)));
    }
}

struct TaskFeedback<'a> {
    handle: &'a TaskHandle,
}

impl FeedbackSource for TaskFeedback<'_> {
    fn request(&mut self, items: &[UncertainItem]) -> FeedbackResponse {
        let (tx, rx) = mpsc::channel();
        *lock(&self.handle.feedback_tx) = Some(tx);
        let pending = items.iter().map(PendingItem::from).collect();
        if let Err(e) = self.handle.update(|r| r.transition(TaskStatus::AwaitingFeedback, pending)) {
            tracing::warn!(error = %e, "could not enter feedback state");
            lock(&self.handle.feedback_tx).take();
            return FeedbackResponse::Decline;
        }
        // A dropped sender means the task is being torn down.
        rx.recv().unwrap_or(FeedbackResponse::Decline)
    }
}

struct Inner {
    config: ManagerConfig,
    tasks: RwLock<HashMap<String, Arc<TaskHandle>>>,
    queue: UnboundedSender<String>,
}

/// Owns every task and the workers that run them. Cheap to clone.
#[derive(Clone)]
pub struct TaskManager {
    inner: Arc<Inner>,
}

impl TaskManager {
    /// Loads persisted tasks and starts the workers. Must be called inside a
    /// Tokio runtime. Queued tasks are re-enqueued in creation order; tasks
    /// that were mid-run are marked failed.
    pub fn start(config: ManagerConfig) -> ServiceResult<Self> {
        let tasks_dir = config.data_dir.join("tasks");
        fs::create_dir_all(&tasks_dir)?;
        let (queue, rx) = unbounded_channel();
        let workers = config.workers.max(1);
        let manager = TaskManager { inner: Arc::new(Inner { config, tasks: RwLock::new(HashMap::new()), queue }) };

        let mut queued = Vec::new();
        for entry in fs::read_dir(&tasks_dir)? {
            let dir = entry?.path();
            let Ok(bytes) = fs::read(dir.join(RECORD_FILE)) else { continue };
            let mut record: TaskRecord = match serde_json::from_slice(&bytes) {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(dir = %dir.display(), error = %e, "skipping unreadable task record");
                    continue;
                }
            };
            match record.status {
                TaskStatus::Queued => queued.push((record.created_at, record.task_id.clone())),
                TaskStatus::Running | TaskStatus::AwaitingFeedback => {
                    record.fail("interrupted by a service restart".into());
                    persist_record(&dir, &record)?;
                }
                TaskStatus::Done | TaskStatus::Failed => {}
            }
            let id = record.task_id.clone();
            write(&manager.inner.tasks).insert(id, Arc::new(new_handle(dir, record)));
        }
        queued.sort();
        for (_, id) in queued {
            let _ = manager.inner.queue.send(id);
        }

        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        for _ in 0..workers {
            tokio::spawn(worker(manager.clone(), rx.clone()));
        }
        Ok(manager)
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.inner.config
    }

    pub fn get(&self, id: &str) -> ServiceResult<Arc<TaskHandle>> {
        read(&self.inner.tasks).get(id).cloned().ok_or_else(|| ServiceError::UnknownTask(id.to_owned()))
    }

    /// Validates the dataset and config, persists a QUEUED record and
    /// enqueues it. Blocks on file IO and parsing.
    pub fn create_task(&self, dataset: &DatasetRef, config: PipelineConfig) -> ServiceResult<String> {
        config.validate()?;
        let files = DatasetFiles::resolve(dataset, &self.inner.config.datasets_dir)?;
        let graphs = into_graphs(files.parse()?);
        let label = match dataset {
            DatasetRef::Builtin { name } => name.clone(),
            DatasetRef::Uploaded { .. } => "uploaded".to_owned(),
        };

        let tasks_dir = self.inner.config.data_dir.join("tasks");
        let (id, dir) = loop {
            let id = uuid::Uuid::new_v4().simple().to_string();
            let dir = tasks_dir.join(&id);
            // create_dir fails on an existing directory, so ids never repeat.
            match fs::create_dir(&dir) {
                Ok(()) => break (id, dir),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        };
        files.write_to(&dir.join(DATASET_DIR))?;
        let record = TaskRecord::new(id.clone(), label, config);
        persist_record(&dir, &record)?;
        let handle = new_handle(dir, record);
        *lock(&handle.graphs) = Some(Arc::new(graphs));
        write(&self.inner.tasks).insert(id.clone(), Arc::new(handle));
        self.inner.queue.send(id.clone()).map_err(|_| ServiceError::Internal("work queue closed".into()))?;
        tracing::info!(task = %id, "queued");
        Ok(id)
    }

    fn run(&self, id: &str) -> ServiceResult<()> {
        let handle = self.get(id)?;
        handle.update(|r| r.transition(TaskStatus::Running, Vec::new()))?;
        let graphs = handle.graphs()?;
        let config = handle.record().config;
        let outcome = run_pipeline(
            graphs.left.clone(),
            graphs.right.clone(),
            &config,
            &mut TaskSink { handle: &handle, theta_output: config.pr_config.theta_output },
            &mut TaskFeedback { handle: &handle },
        )?;
        let tsv = outcome.export_tsv();
        fs::write(handle.dir.join(MAPPINGS_FILE), &tsv)?;
        let metrics = graphs.reference.as_ref().map(|gold| outcome.metrics(gold)).transpose()?;
        *write(&handle.rows) = Some(Arc::new(outcome.state.export_rows(outcome.theta_output)));
        handle.update(|r| {
            r.metrics = metrics;
            r.transition(TaskStatus::Done, Vec::new())
        })
    }

    fn fail(&self, id: &str, message: String) {
        tracing::warn!(task = %id, error = %message, "task failed");
        if let Ok(handle) = self.get(id) {
            lock(&handle.feedback_tx).take();
            let _ = handle.update(|r| {
                r.fail(message);
                Ok(())
            });
        }
    }
}

fn new_handle(dir: PathBuf, record: TaskRecord) -> TaskHandle {
    TaskHandle {
        dir,
        record: RwLock::new(record),
        graphs: Mutex::new(None),
        rows: RwLock::new(None),
        feedback_tx: Mutex::new(None),
    }
}

async fn worker(manager: TaskManager, rx: Arc<tokio::sync::Mutex<UnboundedReceiver<String>>>) {
    loop {
        // Holding the lock while waiting keeps hand-out strictly FIFO.
        let Some(id) = rx.lock().await.recv().await else { return };
        tracing::info!(task = %id, "started");
        let m = manager.clone();
        let task_id = id.clone();
        let result = tokio::task::spawn_blocking(move || m.run(&task_id)).await;
        match result {
            Ok(Ok(())) => tracing::info!(task = %id, "done"),
            Ok(Err(e)) => manager.fail(&id, e.to_string()),
            Err(e) => manager.fail(&id, format!("worker panicked: {e}")),
        }
    }
}

/// Rows whose two sides both fall inside the given name sets.
pub fn mappings_between<'a>(
    rows: &'a [ExportRow],
    left_names: &std::collections::HashSet<&str>,
    right_names: &std::collections::HashSet<&str>,
) -> Vec<&'a ExportRow> {
    rows.iter().filter(|r| left_names.contains(r.left.as_str()) && right_names.contains(r.right.as_str())).collect()
}
