use std::collections::BTreeMap;
use std::path::Path;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::{DatasetError, OfflineStep, OfflineTask, Split};
use super::metrics::{difficulty_histogram, element_accuracy, macro_aggregate, operation_f1, step_success, Aggregates, Difficulty, StepScore};
use crate::agent::{summarize_action, ActionHistory, Agent, AgentError, GroundedAction, GroundingFailure, Observation};
use crate::dom::{parse_document, DomSnapshot, ElementId};
use crate::gateway::{PngImage, TranscriptId};
use crate::ranking::{load_external_ranking, RankingError};

/// Rule used for the headline step success rate.
pub const STEP_SUCCESS_RULE: &str = "element correct, same operation, exact value after case and whitespace normalization";

#[derive(Debug, Error)]
pub enum OfflineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{0}")]
    Ranking(#[from] RankingError),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub action_uid: String,
    pub element_correct: bool,
    pub op_f1: f64,
    pub step_success: bool,
    pub step_success_f1: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<GroundedAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding_failure: Option<GroundingFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default)]
    pub transcripts: Vec<TranscriptId>,
}

impl StepResult {
    pub fn score(&self) -> StepScore {
        StepScore {
            element_correct: self.element_correct,
            op_f1: self.op_f1,
            step_success: self.step_success,
            step_success_f1: self.step_success_f1,
        }
    }

    fn failed(uid: &str, detail: String) -> Self {
        Self {
            action_uid: uid.to_owned(),
            element_correct: false,
            op_f1: 0.0,
            step_success: false,
            step_success_f1: false,
            predicted: None,
            grounding_failure: None,
            detail: Some(detail),
            transcripts: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub split: Split,
    #[serde(default)]
    pub website: String,
    #[serde(default)]
    pub domain: String,
    pub steps: Vec<StepResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub tool: String,
    pub version: String,
    pub step_success_rule: String,
    /// Echo of the run configuration.
    pub config: serde_json::Value,
}

impl ReportHeader {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            tool: "webground".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            step_success_rule: STEP_SUCCESS_RULE.into(),
            config,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub header: ReportHeader,
    /// Aggregates per split name, plus `all`.
    pub splits: BTreeMap<String, Aggregates>,
    pub difficulty: BTreeMap<Difficulty, usize>,
    pub tasks: Vec<TaskResult>,
}

impl EvalReport {
    pub fn build(header: ReportHeader, tasks: Vec<TaskResult>) -> Self {
        let scores = |ts: &[&TaskResult]| ts.iter().map(|t| t.steps.iter().map(StepResult::score).collect()).collect::<Vec<Vec<_>>>();
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let ts: Vec<&TaskResult> = tasks.iter().filter(|t| t.split == split).collect();
            if !ts.is_empty() {
                splits.insert(split.name().to_owned(), macro_aggregate(&scores(&ts)));
            }
        }
        let all: Vec<&TaskResult> = tasks.iter().collect();
        splits.insert("all".to_owned(), macro_aggregate(&scores(&all)));
        let difficulty = difficulty_histogram(tasks.iter().map(|t| t.steps.len()));
        Self {
            header,
            splits,
            difficulty,
            tasks,
        }
    }

    pub fn overall(&self) -> &Aggregates {
        &self.splits["all"]
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("split,ele_acc,op_f1,step_sr,sr0,sr1,tasks,steps\n");
        for (name, a) in self.ordered() {
            out.push_str(&format!("{name},{:.3},{:.3},{:.3},{:.3},{:.3},{},{}\n", a.ele_acc, a.op_f1, a.step_sr, a.sr0, a.sr1, a.tasks, a.steps));
        }
        out
    }

    /// Splits in canonical order with `all` last.
    fn ordered(&self) -> Vec<(&str, &Aggregates)> {
        let mut v: Vec<(&str, &Aggregates)> = Split::ALL.iter().filter_map(|s| self.splits.get(s.name()).map(|a| (s.name(), a))).collect();
        v.push(("all", self.overall()));
        v
    }

    /// Human-readable table, in percent.
    pub fn table(&self) -> String {
        let mut out = format!("{:<14} {:>9} {:>8} {:>8} {:>7} {:>7}\n", "Split", "Ele. Acc", "Op. F1", "Step SR", "SR0", "SR1");
        for (name, a) in self.ordered() {
            out.push_str(&format!(
                "{:<14} {:>9.1} {:>8.1} {:>8.1} {:>7.1} {:>7.1}\n",
                name,
                a.ele_acc * 100.0,
                a.op_f1 * 100.0,
                a.step_sr * 100.0,
                a.sr0 * 100.0,
                a.sr1 * 100.0
            ));
        }
        out
    }

    /// Writes `report.json` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("report.json"), json)?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv())
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OfflineOptions {
    /// Tasks evaluated concurrently.
    pub jobs: usize,
}

impl Default for OfflineOptions {
    fn default() -> Self {
        Self { jobs: 1 }
    }
}

/// A step's page restored from the dump.
pub(crate) struct PreparedStep {
    pub obs: Observation,
    pub gold: Vec<ElementId>,
}

pub(crate) fn prepare_step(step: &OfflineStep, k: usize) -> Result<Result<PreparedStep, String>, OfflineError> {
    let io = |p: &Path| {
        let path = p.to_path_buf();
        move |source| OfflineError::Dataset(DatasetError::Io { path, source })
    };
    let html = std::fs::read_to_string(&step.html_path).map_err(io(&step.html_path))?;
    let shot = std::fs::read(&step.screenshot_path).map_err(io(&step.screenshot_path))?;
    let snapshot: DomSnapshot = match parse_document(&html, "") {
        Ok(s) => s,
        Err(e) => return Ok(Err(format!("{}: {e}", step.html_path.display()))),
    };
    let gold: Vec<ElementId> = step.gold_element_ids.iter().filter_map(|raw| snapshot.resolve(raw)).map(|e| e.id.clone()).collect();
    let candidates = match &step.candidate_ranking {
        Some(ids) => {
            let mut set = load_external_ranking(ids, &snapshot)?;
            set.candidates.truncate(k);
            set.k = k;
            Some(set)
        }
        None => None,
    };
    Ok(Ok(PreparedStep {
        obs: Observation {
            snapshot,
            screenshot: PngImage::new(shot),
            candidates,
        },
        gold,
    }))
}

/// History entry for a gold step, in the same format the agent writes.
pub(crate) fn gold_summary(step: &OfflineStep, prepared: Option<&PreparedStep>) -> String {
    let el = prepared.and_then(|p| p.gold.first().and_then(|id| p.obs.snapshot.get(id)));
    summarize_action(el, step.gold_operation, step.gold_value.as_deref())
}

async fn run_task(task: &OfflineTask, agent: &Agent) -> Result<TaskResult, OfflineError> {
    let mut gold_history = ActionHistory::new();
    let mut steps = Vec::with_capacity(task.steps.len());
    for (i, step) in task.steps.iter().enumerate() {
        let prepared = prepare_step(step, agent.config.k)?;
        let result = match &prepared {
            Err(why) => StepResult::failed(&step.action_uid, why.clone()),
            Ok(p) => {
                let mut history = gold_history.clone();
                let mut obs = p.obs.clone();
                if let Some(set) = obs.candidates.take() {
                    obs.candidates = Some(set.with_context(task.task.task_id.clone(), i));
                }
                let out = agent.step(&task.task, &mut history, &obs).await?;
                let gold_op = (Some(step.gold_operation), step.gold_value.as_deref());
                let (element_correct, op_f1, success) = match out.outcome.action() {
                    Some(a) => {
                        let ec = element_accuracy(a.element_id.as_ref(), &p.gold);
                        let pred = (Some(a.operation), a.value.as_deref());
                        (ec, operation_f1(pred, gold_op), step_success(ec, pred, gold_op))
                    }
                    None => (false, operation_f1((None, None), gold_op), false),
                };
                StepResult {
                    action_uid: step.action_uid.clone(),
                    element_correct,
                    op_f1,
                    step_success: success,
                    step_success_f1: element_correct && op_f1 == 1.0,
                    predicted: out.outcome.action().cloned(),
                    grounding_failure: out.outcome.failure(),
                    detail: out.outcome.detail.clone(),
                    transcripts: out.transcripts,
                }
            }
        };
        gold_history.push(gold_summary(step, prepared.as_ref().ok()));
        steps.push(result);
    }
    Ok(TaskResult {
        task_id: task.task.task_id.clone(),
        split: task.split,
        website: task.task.website.clone(),
        domain: task.task.domain.clone(),
        steps,
    })
}

/// Evaluates every step with gold history. Grounding failures count as
/// incorrect steps; only infrastructure errors abort.
pub async fn run_offline(tasks: &[OfflineTask], agent: &Agent, opts: &OfflineOptions) -> Result<Vec<TaskResult>, OfflineError> {
    stream::iter(tasks.iter().map(|t| run_task(t, agent)))
        .buffered(opts.jobs.max(1))
        .try_collect()
        .await
}
