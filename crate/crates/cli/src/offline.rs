use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use serde_json::json;
use webground_core::agent::{GroundingStrategy, OperationSpace};
use webground_core::gateway::BackendKind;
use webground_core::offline::{gold_script, load_dataset, run_offline, EvalReport, OfflineOptions, ReportHeader, Split, TaskResult};

use crate::config::{AgentArgs, AgentSettings, RankerKind, Sources};
use crate::UsageError;

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Dataset directory (canonical layout or a JSON-lines export)
    #[arg(long)]
    pub dataset: Option<String>,
    /// Only evaluate tasks of this split
    #[arg(long)]
    pub split: Option<Split>,
    #[command(flatten)]
    pub agent: AgentArgs,
}

pub async fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let src = Sources::load(a.agent.config.as_deref())?;
    let mut settings = AgentSettings::resolve(&src, &a.agent, GroundingStrategy::Annotation, "eval-out")?;
    let dataset: PathBuf = src.get("dataset", a.dataset.clone())?.ok_or_else(|| UsageError::new("--dataset is required"))?;
    if settings.strategy == GroundingStrategy::Oracle {
        return Err(UsageError::new("oracle grounding needs a human and is only available in run-online").into());
    }

    let mut tasks = load_dataset(&dataset).map_err(|e| UsageError(format!("dataset {}: {e}", dataset.display())))?;
    if let Some(split) = a.split {
        tasks.retain(|t| t.split == split);
    }
    match settings.ranker {
        RankerKind::Lexical => tasks.iter_mut().flat_map(|t| &mut t.steps).for_each(|s| s.candidate_ranking = None),
        RankerKind::Imported => {
            if let Some(s) = tasks.iter().flat_map(|t| &t.steps).find(|s| s.candidate_ranking.is_none()) {
                return Err(UsageError(format!("ranker=imported but step {} has no ranking", s.action_uid)).into());
            }
        }
    }

    let script = if settings.script.as_deref() == Some("gold") {
        if settings.backend.kind != BackendKind::Scripted {
            return Err(UsageError::new("--script gold needs the scripted backend").into());
        }
        if settings.jobs != 1 {
            tracing::warn!(jobs = settings.jobs, "gold scripts replay in order; using one job");
            settings.jobs = 1;
        }
        let probe = settings.agent(OperationSpace::Offline, Some(Default::default()))?;
        Some(gold_script(&tasks, &probe).context("building gold script")?)
    } else {
        None
    };
    let agent = settings.agent(OperationSpace::Offline, script)?;

    let started = Instant::now();
    let results = run_offline(&tasks, &agent, &OfflineOptions { jobs: settings.jobs }).await?;
    tracing::info!(tasks = results.len(), secs = started.elapsed().as_secs_f64(), "offline run done");
    let header = ReportHeader::new(json!({ "dataset": dataset, "split": a.split, "settings": settings }));
    let report = EvalReport::build(header, results);
    report.write(&settings.out_dir).with_context(|| format!("writing report to {}", settings.out_dir.display()))?;
    print!("{}", report.table());
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct ReportArgs {
    /// A report.json or a JSON array of task results
    pub input: PathBuf,
    /// Also write report.json and summary.csv here
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print summary.csv instead of the table
    #[arg(long)]
    pub csv: bool,
}

pub fn report(a: ReportArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| UsageError(format!("{}: {e}", a.input.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", a.input.display())))?;
    let (header, tasks) = if value.is_array() {
        let tasks: Vec<TaskResult> = serde_json::from_value(value).map_err(|e| UsageError(format!("{}: {e}", a.input.display())))?;
        (ReportHeader::new(json!({ "source": a.input })), tasks)
    } else {
        let r: EvalReport = serde_json::from_value(value).map_err(|e| UsageError(format!("{}: {e}", a.input.display())))?;
        (r.header, r.tasks)
    };
    let report = EvalReport::build(header, tasks);
    if let Some(dir) = &a.out {
        report.write(dir)?;
    }
    if a.csv {
        print!("{}", report.summary_csv());
    } else {
        print!("{}", report.table());
    }
    Ok(())
}
