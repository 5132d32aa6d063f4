//! One browser session driven through observe → propose → gate → execute.
//! The control API talks to a running session only through its command
//! queue; the worker answers commands at its wait points.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use webground_core::agent::{
    ActionDescription, ActionHistory, Agent, GroundedAction, Observation, OracleChannel, OracleError, OracleSubmission, Operation,
    StepOutput, TaskSpec,
};
use webground_core::dom::{element_repr, extract_interactive_elements, parse_document, BBox, Element, ElementId, DEFAULT_REPR_LEN};
use webground_core::gateway::PngImage;

use crate::browser::{Browser, BrowserError, ScrollDirection};
use crate::policy::{PolicyMode, SafetyPolicy};
use crate::task::OnlineTask;
use crate::trace::{Actor, Decision, ExecutionResult, Status, TraceRecord, TraceWriter, Verdict};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionKind {
    Approve,
    Deny,
    Terminate,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum CommandError {
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
}

type Reply = oneshot::Sender<Result<(), CommandError>>;

#[derive(Debug)]
pub enum Command {
    Decision { kind: DecisionKind, reply: Reply },
    Oracle { submission: OracleSubmission, reply: Reply },
    Verdict { verdict: Verdict, reply: Reply },
    Dismiss { selectors: Vec<String>, reply: Reply },
}

impl Command {
    fn refuse(self, why: &str) {
        let reply = match self {
            Command::Decision { reply, .. } | Command::Oracle { reply, .. } | Command::Verdict { reply, .. } | Command::Dismiss { reply, .. } => reply,
        };
        let _ = reply.send(Err(CommandError::Conflict(why.to_owned())));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub rank: usize,
    pub element_id: ElementId,
    pub repr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

/// What the control API serves for a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub task: TaskSpec,
    pub status: Option<Status>,
    pub step_count: usize,
    pub url: String,
    pub title: String,
    pub screenshot_url: Option<String>,
    pub screenshot_digest: Option<String>,
    pub proposed_action: Option<GroundedAction>,
    pub raw_description: Option<String>,
    pub candidates: Vec<CandidateView>,
    pub history: Vec<String>,
    pub trace_tail: Vec<TraceRecord>,
    pub awaiting_oracle: bool,
    pub oracle_error: Option<String>,
    pub verdict: Option<Verdict>,
    pub note: Option<String>,
    pub revision: u64,
}

/// State shared between a session worker and the control API.
pub struct SessionShared {
    pub id: String,
    view: watch::Sender<SessionView>,
    screenshot: Mutex<Option<PngImage>>,
    elements: Mutex<HashSet<ElementId>>,
    commands: mpsc::Sender<Command>,
    inbox: tokio::sync::Mutex<mpsc::Receiver<Command>>,
    clients: Arc<AtomicUsize>,
    changes: broadcast::Sender<SessionView>,
}

impl SessionShared {
    pub(crate) fn new(id: String, task: TaskSpec, clients: Arc<AtomicUsize>, changes: broadcast::Sender<SessionView>) -> Self {
        let (tx, rx) = mpsc::channel(16);
        let view = SessionView {
            session_id: id.clone(),
            task,
            status: None,
            step_count: 0,
            url: String::new(),
            title: String::new(),
            screenshot_url: None,
            screenshot_digest: None,
            proposed_action: None,
            raw_description: None,
            candidates: Vec::new(),
            history: Vec::new(),
            trace_tail: Vec::new(),
            awaiting_oracle: false,
            oracle_error: None,
            verdict: None,
            note: None,
            revision: 0,
        };
        Self {
            id,
            view: watch::Sender::new(view),
            screenshot: Mutex::new(None),
            elements: Mutex::new(HashSet::new()),
            commands: tx,
            inbox: tokio::sync::Mutex::new(rx),
            clients,
            changes,
        }
    }

    pub fn view(&self) -> SessionView {
        self.view.borrow().clone()
    }

    pub fn subscribe(&self) -> watch::Receiver<SessionView> {
        self.view.subscribe()
    }

    pub fn screenshot(&self) -> Option<PngImage> {
        self.screenshot.lock().expect("screenshot lock").clone()
    }

    pub fn knows_element(&self, id: &ElementId) -> bool {
        self.elements.lock().expect("elements lock").contains(id)
    }

    pub fn approval_clients(&self) -> usize {
        self.clients.load(Ordering::SeqCst)
    }

    fn update(&self, f: impl FnOnce(&mut SessionView)) {
        self.view.send_modify(|v| {
            f(v);
            v.revision += 1;
        });
        let _ = self.changes.send(self.view());
    }

    /// Queues a command and waits for the worker's answer.
    pub async fn send(&self, make: impl FnOnce(Reply) -> Command, wait: Duration) -> Result<(), CommandError> {
        let (tx, rx) = oneshot::channel();
        self.commands
            .send(make(tx))
            .await
            .map_err(|_| CommandError::Conflict("session has ended".into()))?;
        match tokio::time::timeout(wait, rx).await {
            Ok(Ok(r)) => r,
            Ok(Err(_)) => Err(CommandError::Conflict("session has ended".into())),
            Err(_) => Err(CommandError::Conflict("session is busy".into())),
        }
    }

    async fn recv(&self, wait: Duration) -> Option<Command> {
        let mut inbox = self.inbox.lock().await;
        tokio::time::timeout(wait, inbox.recv()).await.ok().flatten()
    }

    /// Answers queued commands that arrived while nobody was waiting.
    async fn refuse_pending(&self, why: &str) {
        let mut inbox = self.inbox.lock().await;
        while let Ok(cmd) = inbox.try_recv() {
            cmd.refuse(why);
        }
    }
}

/// Oracle grounding through the control API's `/oracle` endpoint.
pub struct ControlOracle {
    shared: Arc<SessionShared>,
}

impl ControlOracle {
    pub fn new(shared: Arc<SessionShared>) -> Self {
        Self { shared }
    }
}

#[async_trait]
impl OracleChannel for ControlOracle {
    async fn next(&self, desc: &ActionDescription) -> Result<OracleSubmission, OracleError> {
        let raw = desc.raw_text.clone();
        self.shared.update(|v| {
            v.awaiting_oracle = true;
            v.raw_description = Some(raw);
        });
        loop {
            let Some(cmd) = self.shared.recv(Duration::from_secs(3600)).await else {
                continue;
            };
            match cmd {
                Command::Oracle { submission, reply } => {
                    let _ = reply.send(Ok(()));
                    self.shared.update(|v| {
                        v.awaiting_oracle = false;
                        v.oracle_error = None;
                    });
                    return Ok(submission);
                }
                other => other.refuse("session is waiting for an oracle action"),
            }
        }
    }

    async fn reject(&self, reason: String) {
        self.shared.update(|v| v.oracle_error = Some(reason));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub max_steps: usize,
    pub max_reproposals: usize,
    pub viewport: (u32, u32),
    pub out_dir: PathBuf,
    #[serde(with = "crate::policy::secs")]
    pub verdict_timeout: Duration,
    #[serde(with = "crate::policy::secs")]
    pub observe_timeout: Duration,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_steps: 40,
            max_reproposals: 2,
            viewport: (1280, 800),
            out_dir: PathBuf::from("online-out"),
            verdict_timeout: Duration::from_secs(3600),
            observe_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session_id: String,
    pub task_id: String,
    pub status: Status,
    pub verdict: Option<Verdict>,
    pub actions_executed: usize,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub trace_path: PathBuf,
}

impl SessionOutcome {
    pub fn success(&self) -> bool {
        self.status == Status::Finished && self.verdict.as_ref().is_some_and(|v| v.success)
    }
}

/// Page elements until the strategy ranks a candidate set.
fn candidate_view(rank: usize, e: &Element) -> CandidateView {
    CandidateView {
        rank,
        element_id: e.id.clone(),
        repr: element_repr(e, DEFAULT_REPR_LEN).repr_text,
        bbox: e.bbox,
    }
}

#[derive(Debug, Error)]
enum Halt {
    #[error("{0}")]
    Abort(String),
    #[error("trace write failed: {0}")]
    Io(#[from] std::io::Error),
}

impl From<BrowserError> for Halt {
    fn from(e: BrowserError) -> Self {
        Halt::Abort(e.to_string())
    }
}

enum Gate {
    Decided(Decision, Actor, Option<String>),
    Withdrawn,
}

struct Runner<'a> {
    shared: Arc<SessionShared>,
    task: &'a OnlineTask,
    policy: &'a SafetyPolicy,
    cfg: &'a SessionConfig,
    browser: Box<dyn Browser>,
    trace: TraceWriter,
    dir: PathBuf,
    status: Option<Status>,
    steps: usize,
    executed: usize,
    verdict: Option<Verdict>,
    note: Option<String>,
}

/// Runs one task to a final status. Never fails: problems end the session
/// as Aborted with a note.
pub async fn run_session(
    shared: Arc<SessionShared>,
    task: &OnlineTask,
    agent: &Agent,
    policy: &SafetyPolicy,
    browser: Box<dyn Browser>,
    cfg: &SessionConfig,
) -> SessionOutcome {
    let dir = cfg.out_dir.join(&shared.id);
    let trace_path = dir.join("trace.jsonl");
    let trace = match TraceWriter::create(&trace_path) {
        Ok(t) => t,
        Err(e) => {
            return SessionOutcome {
                session_id: shared.id.clone(),
                task_id: task.task.task_id.clone(),
                status: Status::Aborted,
                verdict: None,
                actions_executed: 0,
                steps: 0,
                note: Some(format!("cannot create trace: {e}")),
                trace_path,
            }
        }
    };
    let mut r = Runner {
        shared,
        task,
        policy,
        cfg,
        browser,
        trace,
        dir,
        status: None,
        steps: 0,
        executed: 0,
        verdict: None,
        note: None,
    };
    let result = r.drive(agent).await;
    if let Err(halt) = result {
        let why = halt.to_string();
        tracing::warn!(session = %r.shared.id, %why, "session aborted");
        if !r.status.is_some_and(Status::is_final) {
            let _ = r.set_status(Status::Aborted, Some(why.clone()));
        }
        r.note.get_or_insert(why);
    }
    let status = r.status.unwrap_or(Status::Aborted);
    let _ = r.record(TraceRecord::Closed { status, at: Utc::now() });
    let _ = r.browser.close().await;
    r.shared.refuse_pending("session has ended").await;
    SessionOutcome {
        session_id: r.shared.id.clone(),
        task_id: task.task.task_id.clone(),
        status,
        verdict: r.verdict,
        actions_executed: r.executed,
        steps: r.steps,
        note: r.note,
        trace_path,
    }
}

impl Runner<'_> {
    fn record(&mut self, rec: TraceRecord) -> std::io::Result<()> {
        self.trace.append(rec)?;
        let tail = self.trace.tail();
        self.shared.update(|v| v.trace_tail = tail);
        Ok(())
    }

    fn set_status(&mut self, to: Status, note: Option<String>) -> Result<(), Halt> {
        let from = self.status;
        let legal = match from {
            None => matches!(to, Status::Proposing | Status::Aborted),
            Some(f) => f.can_become(to),
        };
        if !legal {
            return Err(Halt::Abort(format!("illegal transition {from:?} -> {to:?}")));
        }
        self.status = Some(to);
        if to == Status::Aborted {
            self.note = note.clone().or(self.note.take());
        }
        self.record(TraceRecord::Status { from, to, note: note.clone(), at: Utc::now() })?;
        self.shared.update(|v| {
            v.status = Some(to);
            if note.is_some() {
                v.note = note;
            }
            if to != Status::AwaitingApproval {
                v.proposed_action = None;
            }
        });
        Ok(())
    }

    async fn drive(&mut self, agent: &Agent) -> Result<(), Halt> {
        let task = &self.task.task;
        self.record(TraceRecord::SessionStarted {
            session_id: self.shared.id.clone(),
            task: task.clone(),
            mode: self.policy.mode,
            overlay_selectors: self.policy.overlay_selectors.clone(),
            viewport: self.cfg.viewport,
            at: Utc::now(),
        })?;
        if self.policy.mode == PolicyMode::HumanGate && self.shared.approval_clients() == 0 {
            return Err(Halt::Abort("human gate needs a connected approval client".into()));
        }
        self.set_status(Status::Proposing, None)?;
        let url = task.start_url.clone().ok_or_else(|| Halt::Abort("task has no start_url".into()))?;
        self.browser.navigate(&url).await?;

        let mut history = ActionHistory::default();
        'steps: loop {
            if self.steps >= self.cfg.max_steps {
                return self.set_status(Status::Aborted, Some(format!("step cap {} reached", self.cfg.max_steps)));
            }
            self.steps += 1;
            let step = self.steps;
            let obs = match tokio::time::timeout(self.cfg.observe_timeout, self.observe(step)).await {
                Ok(o) => o?,
                Err(_) => return Err(BrowserError::PageCrashed("page did not settle before the observation timeout".into()).into()),
            };
            let page_url = obs.snapshot.url.clone();
            let digest = obs.screenshot.digest();
            let mut denials = 0;
            loop {
                let mut hist = history.clone();
                let out = agent.step(task, &mut hist, &obs).await.map_err(|e| Halt::Abort(format!("agent: {e}")))?;
                self.publish_proposal(&out);
                let action = match &out.outcome.result {
                    Ok(a) => a.clone(),
                    Err(f) => {
                        self.record(TraceRecord::GroundingFailed {
                            step_index: step,
                            failure: *f,
                            detail: out.outcome.detail.clone().unwrap_or_default(),
                            at: Utc::now(),
                        })?;
                        continue 'steps;
                    }
                };
                if action.operation == Operation::Terminate {
                    self.decision(step, &action, Decision::Terminated, Actor::Agent, None, &digest, &page_url)?;
                    self.set_status(Status::AwaitingVerdict, None)?;
                    break 'steps;
                }
                self.set_status(Status::AwaitingApproval, None)?;
                self.shared.update(|v| v.proposed_action = Some(action.clone()));
                let element = action.element_id.as_ref().and_then(|id| obs.snapshot.get(id));
                match self.gate(&action, element, &page_url, step).await? {
                    Gate::Withdrawn => {
                        let note = Some("withdrawn after overlay dismissal".to_owned());
                        self.decision(step, &action, Decision::Denied, Actor::Human, note, &digest, &page_url)?;
                        self.set_status(Status::Proposing, None)?;
                        continue 'steps;
                    }
                    Gate::Decided(decision, by, note) => {
                        self.decision(step, &action, decision, by, note.clone(), &digest, &page_url)?;
                        match decision {
                            Decision::Approved => {
                                self.set_status(Status::Executing, None)?;
                                let (result, after) = self.execute(&action).await;
                                self.record(TraceRecord::Executed {
                                    step_index: step,
                                    action: action.clone(),
                                    result: result.clone(),
                                    url_before: page_url.clone(),
                                    url_after: after,
                                    at: Utc::now(),
                                })?;
                                if result.ok {
                                    self.executed += 1;
                                    history = hist;
                                    let entries = history.entries().to_vec();
                                    self.shared.update(|v| v.history = entries);
                                }
                                self.set_status(Status::Proposing, None)?;
                                continue 'steps;
                            }
                            Decision::Denied => {
                                denials += 1;
                                if denials > self.cfg.max_reproposals {
                                    return self.set_status(Status::Aborted, Some(format!("action denied {denials} times")));
                                }
                                self.set_status(Status::Proposing, note)?;
                            }
                            Decision::Terminated => {
                                self.set_status(Status::AwaitingVerdict, None)?;
                                break 'steps;
                            }
                        }
                    }
                }
            }
        }
        self.conclude().await
    }

    #[allow(clippy::too_many_arguments)]
    fn decision(
        &mut self,
        step: usize,
        action: &GroundedAction,
        decision: Decision,
        by: Actor,
        note: Option<String>,
        digest: &str,
        url: &str,
    ) -> Result<(), Halt> {
        self.record(TraceRecord::Decision {
            step_index: step,
            proposal: action.clone(),
            decision,
            by,
            note,
            screenshot_digest: digest.to_owned(),
            url_before: url.to_owned(),
            at: Utc::now(),
        })?;
        Ok(())
    }

    fn publish_proposal(&self, out: &StepOutput) {
        let ranked: Option<Vec<CandidateView>> = out
            .candidates
            .as_ref()
            .map(|set| set.candidates.iter().enumerate().map(|(i, c)| candidate_view(i, &c.element)).collect());
        let raw = out.description.raw_text.clone();
        self.shared.update(|v| {
            v.raw_description = Some(raw);
            if let Some(c) = ranked {
                v.candidates = c;
            }
        });
    }

    async fn observe(&mut self, step: usize) -> Result<Observation, Halt> {
        if self.policy.mode == PolicyMode::AutoApprove && !self.policy.overlay_selectors.is_empty() {
            let count = self.browser.dismiss(&self.policy.overlay_selectors).await?;
            if count > 0 {
                self.record(TraceRecord::OverlayDismissed { step_index: step, count, by: Actor::Policy, at: Utc::now() })?;
            }
        }
        let html = self.browser.serialize_dom().await?;
        let url = self.browser.current_url().await?;
        let title = self.browser.title().await?;
        let snapshot = parse_document(&html, &url).map_err(|e| BrowserError::PageCrashed(e.to_string()))?;
        let screenshot = self.browser.screenshot().await?;
        let name = format!("step-{step:03}.png");
        std::fs::write(self.dir.join(&name), screenshot.bytes())?;
        let digest = screenshot.digest();
        self.record(TraceRecord::Observed {
            step_index: step,
            url: url.clone(),
            title: title.clone(),
            screenshot_digest: digest.clone(),
            screenshot_path: name,
            at: Utc::now(),
        })?;
        *self.shared.screenshot.lock().expect("screenshot lock") = Some(screenshot.clone());
        *self.shared.elements.lock().expect("elements lock") = snapshot.elements.iter().map(|e| e.id.clone()).collect();
        let id = self.shared.id.clone();
        let elements: Vec<CandidateView> = extract_interactive_elements(&snapshot).iter().enumerate().map(|(i, e)| candidate_view(i, e)).collect();
        self.shared.update(|v| {
            v.step_count = step;
            v.candidates = elements;
            v.raw_description = None;
            v.url = url;
            v.title = title;
            v.screenshot_url = Some(format!("/sessions/{id}/screenshot.png"));
            v.screenshot_digest = Some(digest);
        });
        Ok(Observation {
            snapshot,
            screenshot,
            candidates: None,
        })
    }

    async fn gate(&mut self, action: &GroundedAction, element: Option<&Element>, url: &str, step: usize) -> Result<Gate, Halt> {
        if let Some(p) = self.policy.blocked(action, element, url) {
            return Ok(Gate::Decided(Decision::Denied, Actor::Policy, Some(format!("blocked by {p}"))));
        }
        if self.policy.mode == PolicyMode::AutoApprove {
            return Ok(Gate::Decided(Decision::Approved, Actor::Policy, None));
        }
        let deadline = tokio::time::Instant::now() + self.policy.approval_timeout;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            let Some(cmd) = self.shared.recv(left).await else {
                return Ok(Gate::Decided(Decision::Denied, Actor::Policy, Some("approval timeout".into())));
            };
            match cmd {
                Command::Decision { kind, reply } => {
                    let _ = reply.send(Ok(()));
                    let d = match kind {
                        DecisionKind::Approve => Decision::Approved,
                        DecisionKind::Deny => Decision::Denied,
                        DecisionKind::Terminate => Decision::Terminated,
                    };
                    return Ok(Gate::Decided(d, Actor::Human, None));
                }
                Command::Dismiss { selectors, reply } => match self.browser.dismiss(&selectors).await {
                    Ok(count) => {
                        let _ = reply.send(Ok(()));
                        self.record(TraceRecord::OverlayDismissed { step_index: step, count, by: Actor::Human, at: Utc::now() })?;
                        return Ok(Gate::Withdrawn);
                    }
                    Err(e) => {
                        let _ = reply.send(Err(CommandError::Invalid(e.to_string())));
                    }
                },
                other => other.refuse("session is waiting for an approval decision"),
            }
        }
    }

    async fn resolve(&mut self, id: Option<&ElementId>) -> Result<Option<usize>, BrowserError> {
        let Some(id) = id else { return Ok(None) };
        let html = self.browser.serialize_dom().await?;
        let snap = parse_document(&html, "").map_err(|e| BrowserError::PageCrashed(e.to_string()))?;
        snap.get(id).map(|e| Some(e.index)).ok_or_else(|| BrowserError::StaleElement(id.to_string()))
    }

    async fn execute(&mut self, action: &GroundedAction) -> (ExecutionResult, String) {
        let result = self.dispatch(action).await;
        let after = self.browser.current_url().await.unwrap_or_default();
        let result = match result {
            Ok(()) => ExecutionResult { ok: true, error: None },
            Err(e) => ExecutionResult { ok: false, error: Some(e.to_string()) },
        };
        (result, after)
    }

    async fn dispatch(&mut self, action: &GroundedAction) -> Result<(), BrowserError> {
        let idx = self.resolve(action.element_id.as_ref()).await?;
        let need = |i: Option<usize>| i.ok_or_else(|| BrowserError::ExecutionFailed(format!("{} needs an element", action.operation)));
        let value = action.value.as_deref().unwrap_or("");
        match action.operation {
            Operation::Click => self.browser.click(need(idx)?).await,
            Operation::Type => self.browser.type_text(need(idx)?, value).await,
            Operation::Select => self.browser.select_option(need(idx)?, value).await,
            Operation::PressEnter => self.browser.press_enter(idx).await,
            Operation::Scroll => self.browser.scroll(ScrollDirection::from_value(action.value.as_deref())).await,
            Operation::Terminate => Ok(()),
        }
    }

    async fn conclude(&mut self) -> Result<(), Halt> {
        let auto = self.policy.mode == PolicyMode::AutoApprove;
        let verdict = match (&self.task.success_check, auto) {
            (Some(check), true) => {
                let url = self.browser.current_url().await?;
                let html = self.browser.serialize_dom().await?;
                let text = parse_document(&html, &url)
                    .ok()
                    .and_then(|s| s.elements.iter().find(|e| e.tag == "body").map(|b| b.text_content.clone()))
                    .unwrap_or_default();
                let (success, notes) = check.evaluate(&url, &text);
                Some((Verdict { success, notes }, Actor::Checker))
            }
            _ => self.await_verdict().await,
        };
        let Some((verdict, by)) = verdict else {
            return self.set_status(Status::Aborted, Some("no verdict before timeout".into()));
        };
        self.record(TraceRecord::Verdict {
            success: verdict.success,
            notes: verdict.notes.clone(),
            by,
            at: Utc::now(),
        })?;
        let v = verdict.clone();
        self.shared.update(|view| view.verdict = Some(v));
        self.verdict = Some(verdict);
        self.set_status(Status::Finished, None)
    }

    async fn await_verdict(&mut self) -> Option<(Verdict, Actor)> {
        let deadline = tokio::time::Instant::now() + self.cfg.verdict_timeout;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            match self.shared.recv(left).await? {
                Command::Verdict { verdict, reply } => {
                    let _ = reply.send(Ok(()));
                    return Some((verdict, Actor::Human));
                }
                other => other.refuse("session is waiting for a verdict"),
            }
        }
    }
}
