//! HTTP task service for knowledge graph alignment runs.
//!
//! [`manager::TaskManager`] owns tasks, the FIFO work queue and their on-disk
//! state; [`api::router`] exposes them over HTTP.

pub mod api;
pub mod dataset;
pub mod error;
pub mod manager;
pub mod task;

pub use api::router;
pub use dataset::{DatasetFiles, DatasetRef};
pub use error::{ServiceError, ServiceResult};
pub use manager::{ManagerConfig, SubmittedLabel, TaskManager};
pub use task::{PendingItem, TaskRecord, TaskStatus};
