use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::Context;
use webground_core::agent::{GroundingStrategy, OperationSpace};
use webground_online::{load_tasks, router, run_online, serve, serve_dir, BrowserFactory, LiteFactory, OnlineError, OnlineOptions, PolicyMode, Registry, SessionConfig, WebDriverFactory};

use crate::config::{resolve_policy, AgentArgs, AgentSettings, SafetyArgs, Sources, Viewport};
use crate::UsageError;

pub const DEFAULT_API_ADDR: &str = "127.0.0.1:8765";

#[derive(clap::Args, Debug)]
pub struct RunArgs {
    /// Task file: {"tasks": [...]} or a bare array
    #[arg(long)]
    pub tasks: Option<String>,
    /// Serve this directory on a loopback port and substitute it for {SITE}
    #[arg(long)]
    pub site: Option<String>,
    /// Step cap per session
    #[arg(long)]
    pub max_steps: Option<String>,
    /// Seconds to wait for a monitor to connect before a human-gated run
    #[arg(long)]
    pub ui_wait: Option<String>,
    /// Control API address
    #[arg(long)]
    pub api_addr: Option<String>,
    /// lite | webdriver
    #[arg(long)]
    pub browser: Option<String>,
    /// WebDriver endpoint for --browser webdriver
    #[arg(long)]
    pub webdriver_url: Option<String>,
    /// Browser viewport, WxH
    #[arg(long)]
    pub viewport: Option<String>,
    #[command(flatten)]
    pub safety: SafetyArgs,
    #[command(flatten)]
    pub agent: AgentArgs,
}

pub async fn run(a: RunArgs) -> anyhow::Result<()> {
    let src = Sources::load(a.agent.config.as_deref())?;
    let settings = AgentSettings::resolve(&src, &a.agent, GroundingStrategy::Attributes, "online-out")?;
    let policy = resolve_policy(&src, &a.safety)?;
    let d = SessionConfig::default();
    let Viewport(w, h) = src.or("viewport", a.viewport.clone(), Viewport(d.viewport.0, d.viewport.1))?;
    let session = SessionConfig {
        max_steps: src.or("max_steps", a.max_steps.clone(), d.max_steps)?,
        max_reproposals: src.or("max_reproposals", None, d.max_reproposals)?,
        viewport: (w, h),
        out_dir: settings.out_dir.clone(),
        verdict_timeout: src.secs("verdict_timeout_secs", None, d.verdict_timeout)?,
        ..d
    };
    if session.max_steps == 0 {
        return Err(UsageError::new("max_steps must be at least 1").into());
    }
    let opts = OnlineOptions { session, jobs: settings.jobs };
    let ui_wait = src.secs("ui_wait_secs", a.ui_wait.clone(), Duration::ZERO)?;
    let api_addr: SocketAddr = src.or("api_addr", a.api_addr.clone(), DEFAULT_API_ADDR.parse().expect("valid default"))?;
    let browsers: Box<dyn BrowserFactory> = match src.or("browser", a.browser.clone(), "lite".to_owned())?.as_str() {
        "lite" => Box::new(LiteFactory),
        "webdriver" => {
            let endpoint: String = src.get("webdriver_url", a.webdriver_url.clone())?.ok_or_else(|| UsageError::new("--browser webdriver needs --webdriver-url"))?;
            Box::new(WebDriverFactory { endpoint })
        }
        other => return Err(UsageError(format!("unknown browser {other:?}")).into()),
    };

    let site_base = match src.get::<PathBuf>("site", a.site.clone())? {
        Some(dir) => {
            let (addr, _) = serve_dir(&dir, "127.0.0.1:0".parse().expect("valid addr")).await.map_err(|e| UsageError(format!("site: {e}")))?;
            tracing::info!(%addr, dir = %dir.display(), "serving site");
            Some(format!("http://{addr}"))
        }
        None => None,
    };
    let task_path: PathBuf = src.get("tasks", a.tasks.clone())?.ok_or_else(|| UsageError::new("--tasks is required"))?;
    let tasks = load_tasks(&task_path, site_base.as_deref()).map_err(UsageError)?;
    let agent = settings.agent(OperationSpace::Online, None)?;

    let registry = Registry::new();
    let (bound, _server) = serve(router(registry.clone()), api_addr).await.with_context(|| format!("binding control API on {api_addr}"))?;
    eprintln!("control API listening on http://{bound}");
    if policy.mode == PolicyMode::HumanGate {
        let deadline = Instant::now() + ui_wait;
        while registry.approval_clients() == 0 && Instant::now() < deadline {
            tokio::time::sleep(Duration::from_millis(100)).await;
        }
    }

    let report = match run_online(&tasks, &agent, &policy, browsers.as_ref(), &registry, &opts).await {
        Ok(r) => r,
        Err(OnlineError::NoApprovalChannel) => {
            return Err(UsageError::new("human gate needs a connected monitor; pass --auto-approve or raise --ui-wait").into());
        }
        Err(e) => return Err(e.into()),
    };
    for t in &report.tasks {
        println!("{}\t{:?}\tsuccess={}\tactions={}\t{}", t.session_id, t.status, t.success(), t.actions_executed, t.note.as_deref().unwrap_or(""));
    }
    println!("success rate {:.3} over {} task(s)", report.success_rate, report.tasks.len());
    Ok(())
}
