//! Append-only JSON-lines session trace and its replay check.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use webground_core::agent::{GroundedAction, GroundingFailure, Operation, TaskSpec};

use crate::policy::PolicyMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Proposing,
    AwaitingApproval,
    Executing,
    AwaitingVerdict,
    Finished,
    Aborted,
}

impl Status {
    pub fn is_final(self) -> bool {
        matches!(self, Status::Finished | Status::Aborted)
    }

    pub fn can_become(self, to: Status) -> bool {
        use Status::*;
        match (self, to) {
            (Finished | Aborted, _) => false,
            (_, Aborted) => true,
            (Proposing, AwaitingApproval | AwaitingVerdict) => true,
            (AwaitingApproval, Executing | Proposing | AwaitingVerdict) => true,
            (Executing, Proposing | AwaitingVerdict) => true,
            (AwaitingVerdict, Finished) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Approved,
    Denied,
    Terminated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actor {
    Policy,
    Human,
    Agent,
    Checker,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub success: bool,
    #[serde(default)]
    pub notes: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    SessionStarted {
        session_id: String,
        task: TaskSpec,
        mode: PolicyMode,
        overlay_selectors: Vec<String>,
        viewport: (u32, u32),
        at: DateTime<Utc>,
    },
    Status {
        from: Option<Status>,
        to: Status,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
        at: DateTime<Utc>,
    },
    Observed {
        step_index: usize,
        url: String,
        title: String,
        screenshot_digest: String,
        screenshot_path: String,
        at: DateTime<Utc>,
    },
    OverlayDismissed {
        step_index: usize,
        count: usize,
        by: Actor,
        at: DateTime<Utc>,
    },
    GroundingFailed {
        step_index: usize,
        failure: GroundingFailure,
        #[serde(default)]
        detail: String,
        at: DateTime<Utc>,
    },
    Decision {
        step_index: usize,
        proposal: GroundedAction,
        decision: Decision,
        by: Actor,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
        screenshot_digest: String,
        url_before: String,
        at: DateTime<Utc>,
    },
    Executed {
        step_index: usize,
        action: GroundedAction,
        result: ExecutionResult,
        url_before: String,
        url_after: String,
        at: DateTime<Utc>,
    },
    Verdict {
        success: bool,
        notes: String,
        by: Actor,
        at: DateTime<Utc>,
    },
    Closed {
        status: Status,
        at: DateTime<Utc>,
    },
}

impl TraceRecord {
    /// Records that dispatch input to the browser.
    pub fn is_browser_event(&self) -> bool {
        match self {
            TraceRecord::Executed { action, .. } => action.operation != Operation::Terminate,
            TraceRecord::OverlayDismissed { count, .. } => *count > 0,
            _ => false,
        }
    }
}

/// One proposed action with its decision and execution, as seen by readers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step_index: usize,
    pub timestamp: DateTime<Utc>,
    pub screenshot_digest: String,
    pub proposed: GroundedAction,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution: Option<ExecutionResult>,
    pub url_before: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url_after: Option<String>,
}

const TAIL: usize = 50;

pub struct TraceWriter {
    path: PathBuf,
    file: File,
    tail: VecDeque<TraceRecord>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            path: path.to_owned(),
            file: File::create(path)?,
            tail: VecDeque::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, rec: TraceRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(&rec).map_err(std::io::Error::other)?;
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        if self.tail.len() == TAIL {
            self.tail.pop_front();
        }
        self.tail.push_back(rec);
        Ok(())
    }

    pub fn tail(&self) -> Vec<TraceRecord> {
        self.tail.iter().cloned().collect()
    }
}

pub fn read_trace(path: &Path) -> std::io::Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("record {0}: trace does not start with session_started")]
    MissingStart(usize),
    #[error("record {index}: status {from:?} cannot become {to:?}")]
    BadTransition { index: usize, from: Option<Status>, to: Status },
    #[error("record {0}: browser event without a preceding approval")]
    UnapprovedExecution(usize),
    #[error("record {0}: executed action differs from the approved proposal")]
    ActionMismatch(usize),
    #[error("record {0}: execution outside the Executing status")]
    ExecutionOutOfStatus(usize),
    #[error("record {0}: overlay dismissal not sanctioned by the policy")]
    UnsanctionedDismissal(usize),
    #[error("record {0}: record after the trace was closed")]
    AfterClose(usize),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Replay {
    pub statuses: Vec<Status>,
    pub executed: Vec<GroundedAction>,
    pub events: Vec<TraceEvent>,
    pub verdict: Option<Verdict>,
    pub closed: bool,
}

impl Replay {
    pub fn final_status(&self) -> Option<Status> {
        self.statuses.last().copied()
    }

    /// Events approved and dispatched to the browser without error.
    pub fn approved_and_executed(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.decision == Decision::Approved && e.execution.as_ref().is_some_and(|x| x.ok))
            .count()
    }
}

/// Rebuilds the session from its records, checking that every status change
/// is legal and every browser event follows an approval of that exact action.
pub fn replay(records: &[TraceRecord]) -> Result<Replay, ReplayError> {
    let mut out = Replay::default();
    let mut status: Option<Status> = None;
    let mut auto_dismiss = false;
    let mut pending: Option<usize> = None;
    for (i, rec) in records.iter().enumerate() {
        if out.closed {
            return Err(ReplayError::AfterClose(i));
        }
        if i == 0 && !matches!(rec, TraceRecord::SessionStarted { .. }) {
            return Err(ReplayError::MissingStart(0));
        }
        match rec {
            TraceRecord::SessionStarted { mode, overlay_selectors, .. } => {
                if i != 0 {
                    return Err(ReplayError::MissingStart(i));
                }
                auto_dismiss = *mode == PolicyMode::AutoApprove && !overlay_selectors.is_empty();
            }
            TraceRecord::Status { from, to, .. } => {
                let ok = *from == status && from.map_or(*to == Status::Proposing || *to == Status::Aborted, |f| f.can_become(*to));
                if !ok {
                    return Err(ReplayError::BadTransition { index: i, from: *from, to: *to });
                }
                status = Some(*to);
                out.statuses.push(*to);
            }
            TraceRecord::OverlayDismissed { by, count, .. } => {
                let sanctioned = match by {
                    Actor::Policy => auto_dismiss,
                    Actor::Human => true,
                    _ => false,
                };
                if *count > 0 && !sanctioned {
                    return Err(ReplayError::UnsanctionedDismissal(i));
                }
            }
            TraceRecord::Decision {
                step_index,
                proposal,
                decision,
                note,
                screenshot_digest,
                url_before,
                at,
                ..
            } => {
                out.events.push(TraceEvent {
                    step_index: *step_index,
                    timestamp: *at,
                    screenshot_digest: screenshot_digest.clone(),
                    proposed: proposal.clone(),
                    decision: *decision,
                    note: note.clone(),
                    execution: None,
                    url_before: url_before.clone(),
                    url_after: None,
                });
                pending = (*decision == Decision::Approved).then_some(out.events.len() - 1);
            }
            TraceRecord::Executed { action, result, url_after, .. } => {
                let Some(ev) = pending.take() else {
                    return Err(ReplayError::UnapprovedExecution(i));
                };
                if out.events[ev].proposed != *action {
                    return Err(ReplayError::ActionMismatch(i));
                }
                if status != Some(Status::Executing) {
                    return Err(ReplayError::ExecutionOutOfStatus(i));
                }
                out.events[ev].execution = Some(result.clone());
                out.events[ev].url_after = Some(url_after.clone());
                out.executed.push(action.clone());
            }
            TraceRecord::Verdict { success, notes, .. } => {
                out.verdict = Some(Verdict {
                    success: *success,
                    notes: notes.clone(),
                });
            }
            TraceRecord::Closed { .. } => out.closed = true,
            TraceRecord::Observed { .. } | TraceRecord::GroundingFailed { .. } => {}
        }
    }
    if records.is_empty() {
        return Err(ReplayError::MissingStart(0));
    }
    Ok(out)
}
