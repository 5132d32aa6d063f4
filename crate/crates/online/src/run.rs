use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use webground_core::agent::{Agent, GroundingStrategy};
use webground_core::offline::difficulty_bucket;

use crate::api::Registry;
use crate::browser::{BrowserError, BrowserFactory};
use crate::policy::{PolicyMode, SafetyPolicy};
use crate::session::{run_session, ControlOracle, SessionConfig, SessionOutcome};
use crate::task::OnlineTask;
use crate::trace::Status;

#[derive(Debug, Error)]
pub enum OnlineError {
    #[error("human gate needs a connected approval client before the run starts")]
    NoApprovalChannel,
    #[error(transparent)]
    Browser(#[from] BrowserError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineOptions {
    pub session: SessionConfig,
    pub jobs: usize,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifficultyStat {
    pub tasks: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineHeader {
    pub tool: String,
    pub version: String,
    pub strategy: GroundingStrategy,
    pub policy: SafetyPolicy,
    pub options: OnlineOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub header: OnlineHeader,
    pub tasks: Vec<SessionOutcome>,
    /// Fraction of tasks finished with a successful verdict.
    pub success_rate: f64,
    pub by_difficulty: BTreeMap<String, DifficultyStat>,
}

impl OnlineReport {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("online_report.json"), json)
    }
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

async fn run_one(
    i: usize,
    task: &OnlineTask,
    agent: &Agent,
    policy: &SafetyPolicy,
    browsers: &dyn BrowserFactory,
    registry: &Registry,
    opts: &OnlineOptions,
) -> Result<(SessionOutcome, Option<usize>), OnlineError> {
    let shared = registry.create_session(format!("{:03}-{}", i + 1, slug(&task.task.task_id)), task.task.clone());
    let browser = browsers.open(opts.session.viewport).await?;
    let agent = match agent.config.strategy {
        GroundingStrategy::Oracle => agent.clone().with_oracle(Arc::new(ControlOracle::new(shared.clone()))),
        _ => agent.clone(),
    };
    let out = run_session(shared, task, &agent, policy, browser, &opts.session).await;
    Ok((out, task.reference_actions))
}

/// Runs every task in its own session. Per-session failures are recorded in
/// the report; only a missing approval client or an unreachable browser
/// stop the run.
pub async fn run_online(
    tasks: &[OnlineTask],
    agent: &Agent,
    policy: &SafetyPolicy,
    browsers: &dyn BrowserFactory,
    registry: &Arc<Registry>,
    opts: &OnlineOptions,
) -> Result<OnlineReport, OnlineError> {
    if policy.mode == PolicyMode::HumanGate && registry.approval_clients() == 0 {
        return Err(OnlineError::NoApprovalChannel);
    }
    std::fs::create_dir_all(&opts.session.out_dir)?;
    let sessions: Vec<_> = tasks.iter().enumerate().map(|(i, task)| run_one(i, task, agent, policy, browsers, registry, opts)).collect();
    let results: Vec<Result<(SessionOutcome, Option<usize>), OnlineError>> = stream::iter(sessions).buffered(opts.jobs.max(1)).collect().await;

    let mut outcomes = Vec::with_capacity(results.len());
    let mut by_difficulty: BTreeMap<String, DifficultyStat> = BTreeMap::new();
    for r in results {
        let (out, reference) = r?;
        let bucket = difficulty_bucket(reference.unwrap_or(out.actions_executed).max(1));
        let stat = by_difficulty.entry(format!("{bucket:?}")).or_insert(DifficultyStat {
            tasks: 0,
            successes: 0,
            success_rate: 0.0,
        });
        stat.tasks += 1;
        stat.successes += usize::from(out.success());
        outcomes.push(out);
    }
    for stat in by_difficulty.values_mut() {
        stat.success_rate = stat.successes as f64 / stat.tasks as f64;
    }
    let successes = outcomes.iter().filter(|o| o.success()).count();
    let report = OnlineReport {
        header: OnlineHeader {
            tool: "webground".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            strategy: agent.config.strategy,
            policy: policy.clone(),
            options: opts.clone(),
        },
        success_rate: if outcomes.is_empty() { 0.0 } else { successes as f64 / outcomes.len() as f64 },
        tasks: outcomes,
        by_difficulty,
    };
    report.write(&opts.session.out_dir)?;
    Ok(report)
}

/// Sessions that ended for a reason other than a verdict.
pub fn aborted(report: &OnlineReport) -> impl Iterator<Item = &SessionOutcome> {
    report.tasks.iter().filter(|t| t.status == Status::Aborted)
}
