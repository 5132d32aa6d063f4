//! Canonical `tasks.json` dataset loading.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Operation, TaskSpec};

pub const TASKS_FILE: &str = "tasks.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema violation in {path}: {field}")]
    SchemaViolation { path: String, field: String },
    #[error("missing asset: {0}")]
    MissingAsset(PathBuf),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn schema(path: impl Into<String>, field: impl Into<String>) -> DatasetError {
    DatasetError::SchemaViolation {
        path: path.into(),
        field: field.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    #[serde(alias = "test_task", alias = "CrossTask")]
    CrossTask,
    #[serde(alias = "test_website", alias = "CrossWebsite")]
    CrossWebsite,
    #[serde(alias = "test_domain", alias = "CrossDomain")]
    CrossDomain,
    #[serde(alias = "train", alias = "Train")]
    Train,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::CrossTask, Split::CrossWebsite, Split::CrossDomain, Split::Train];

    pub fn name(self) -> &'static str {
        match self {
            Split::CrossTask => "cross-task",
            Split::CrossWebsite => "cross-website",
            Split::CrossDomain => "cross-domain",
            Split::Train => "train",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| format!("unknown split: {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineStep {
    pub action_uid: String,
    pub html_path: PathBuf,
    pub screenshot_path: PathBuf,
    /// Gold element ids as they appear in the dump (native ids or
    /// `backend_node_id`s); resolved against the parsed page at run time.
    pub gold_element_ids: Vec<String>,
    pub gold_operation: Operation,
    pub gold_value: Option<String>,
    pub candidate_ranking: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineTask {
    pub task: TaskSpec,
    pub split: Split,
    pub steps: Vec<OfflineStep>,
}

// On-disk schema.

#[derive(Debug, Serialize, Deserialize)]
pub struct RawTask {
    pub task_id: String,
    #[serde(default)]
    pub website: String,
    #[serde(default)]
    pub domain: String,
    pub split: String,
    pub confirmed_task: String,
    pub actions: Vec<RawAction>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RawAction {
    pub action_uid: String,
    pub html_path: String,
    pub screenshot_path: String,
    pub pos_candidate_ids: Vec<String>,
    pub operation: RawOperation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_ranking_path: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RawOperation {
    pub op: String,
    #[serde(default)]
    pub value: Option<String>,
}

/// Offline gold operations: hover and enter count as clicks.
pub fn gold_operation(op: &str) -> Option<Operation> {
    match op.trim().to_ascii_uppercase().as_str() {
        "CLICK" | "HOVER" | "ENTER" | "PRESS ENTER" => Some(Operation::Click),
        "TYPE" => Some(Operation::Type),
        "SELECT" => Some(Operation::Select),
        _ => None,
    }
}

fn resolve(root: &Path, rel: &str) -> Result<PathBuf, DatasetError> {
    let p = root.join(rel);
    if p.is_file() {
        Ok(p)
    } else {
        Err(DatasetError::MissingAsset(p))
    }
}

/// Reads and validates `root/tasks.json`, resolving asset paths against `root`.
pub fn load_canonical(root: &Path) -> Result<Vec<OfflineTask>, DatasetError> {
    let path = root.join(TASKS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DatasetError::MissingAsset(path.clone()),
        _ => DatasetError::Io { path: path.clone(), source: e },
    })?;
    let raw: Vec<RawTask> = serde_json::from_str(&text).map_err(|e| schema(path.display().to_string(), e.to_string()))?;
    raw.into_iter().enumerate().map(|(i, t)| convert(root, i, t)).collect()
}

fn convert(root: &Path, i: usize, t: RawTask) -> Result<OfflineTask, DatasetError> {
    let at = |field: &str| format!("tasks[{i}].{field}");
    let split: Split = t.split.parse().map_err(|_| schema(TASKS_FILE, at("split")))?;
    let task = TaskSpec {
        task_id: t.task_id,
        instruction: t.confirmed_task,
        website: t.website,
        domain: t.domain,
        start_url: None,
    };
    task.validate().map_err(|_| schema(TASKS_FILE, at("confirmed_task")))?;
    if t.actions.is_empty() {
        return Err(schema(TASKS_FILE, at("actions")));
    }
    let mut steps = Vec::with_capacity(t.actions.len());
    for (j, a) in t.actions.into_iter().enumerate() {
        let at = |field: &str| format!("tasks[{i}].actions[{j}].{field}");
        let op = gold_operation(&a.operation.op).ok_or_else(|| schema(TASKS_FILE, at("operation.op")))?;
        let value = a.operation.value.filter(|v| !v.trim().is_empty());
        if op.requires_value() && value.is_none() {
            return Err(schema(TASKS_FILE, at("operation.value")));
        }
        if a.pos_candidate_ids.is_empty() {
            return Err(schema(TASKS_FILE, at("pos_candidate_ids")));
        }
        let candidate_ranking = match &a.candidate_ranking_path {
            Some(rel) => {
                let p = resolve(root, rel)?;
                let text = std::fs::read_to_string(&p).map_err(|e| DatasetError::Io { path: p.clone(), source: e })?;
                Some(serde_json::from_str::<Vec<String>>(&text).map_err(|_| schema(p.display().to_string(), "ranking must be a JSON array of ids"))?)
            }
            None => None,
        };
        steps.push(OfflineStep {
            action_uid: a.action_uid,
            html_path: resolve(root, &a.html_path)?,
            screenshot_path: resolve(root, &a.screenshot_path)?,
            gold_element_ids: a.pos_candidate_ids,
            gold_operation: op,
            gold_value: if op.requires_value() { value } else { None },
            candidate_ranking,
        });
    }
    Ok(OfflineTask { task, split, steps })
}

/// Loads a dataset directory: the canonical layout, or a Mind2Web-style JSON
/// lines export which is imported into a cache directory first.
pub fn load_dataset(root: &Path) -> Result<Vec<OfflineTask>, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::MissingAsset(root.to_path_buf()));
    }
    if root.join(TASKS_FILE).is_file() {
        return load_canonical(root);
    }
    if super::import::is_import_layout(root) {
        let out = super::import::cache_dir(root);
        super::import::import_jsonl(root, &out)?;
        return load_canonical(&out);
    }
    Err(DatasetError::MissingAsset(root.join(TASKS_FILE)))
}
