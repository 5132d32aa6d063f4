use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde_json::{json, Value};
use webground_core::agent::{Agent, AgentConfig, GroundingStrategy, Operation, OperationSpace};
use webground_core::dom::{extract_interactive_elements, parse_document};
use webground_core::gateway::{Gateway, PngImage, Script, ScriptedBackend};
use webground_online::trace::Actor;
use webground_online::*;

fn site_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/site")
}

async fn serve_site() -> String {
    let (addr, _) = serve_dir(&site_dir(), "127.0.0.1:0".parse().unwrap()).await.unwrap();
    format!("http://{addr}")
}

fn fixture_tasks(base: &str) -> Vec<OnlineTask> {
    load_tasks(&site_dir().join("tasks.json"), Some(base)).unwrap()
}

fn agent_with(strategy: GroundingStrategy, script: Script) -> Agent {
    let gw = Gateway::new(Arc::new(ScriptedBackend::new(script)));
    Agent::new(
        AgentConfig {
            strategy,
            operation_space: OperationSpace::Online,
            ..Default::default()
        },
        gw,
    )
}

fn fixture_script() -> Script {
    Script::load(&site_dir().join("script.jsonl")).unwrap()
}

/// Generation and grounding turns for one attribute-grounded step.
fn pair(ty: &str, text: &str, op: &str, value: &str) -> [String; 2] {
    [
        format!("Next I will {op} the {text} {ty}."),
        format!("ELEMENT: the {text} {ty}\nELEMENT TYPE: {ty}\nELEMENT TEXT: {text}\nACTION: {op}\nVALUE: {value}"),
    ]
}

fn terminate() -> [String; 2] {
    pair("BUTTON", "None", "TERMINATE", "None")
}

fn opts(dir: &Path) -> OnlineOptions {
    OnlineOptions {
        session: SessionConfig {
            out_dir: dir.to_owned(),
            ..Default::default()
        },
        jobs: 1,
    }
}

fn auto_policy() -> SafetyPolicy {
    SafetyPolicy {
        overlay_selectors: vec![".cookie-banner".into()],
        ..SafetyPolicy::auto_approve()
    }
}

fn records(out: &SessionOutcome) -> Vec<TraceRecord> {
    read_trace(&out.trace_path).unwrap()
}

fn decisions(recs: &[TraceRecord]) -> Vec<(Decision, Actor, Option<String>)> {
    recs.iter()
        .filter_map(|r| match r {
            TraceRecord::Decision { decision, by, note, .. } => Some((*decision, *by, note.clone())),
            _ => None,
        })
        .collect()
}

#[tokio::test]
async fn fixture_task_succeeds_under_auto_approve() {
    let base = serve_site().await;
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let report = run_online(&fixture_tasks(&base), &agent_with(GroundingStrategy::Attributes, fixture_script()), &auto_policy(), &LiteFactory, &Registry::new(), &opts(dir.path()))
        .await
        .unwrap();
    assert!(started.elapsed() < Duration::from_secs(30), "took {:?}", started.elapsed());

    assert_eq!(report.tasks.len(), 1);
    assert_eq!(report.success_rate, 1.0);
    let out = &report.tasks[0];
    assert_eq!(out.status, Status::Finished, "{:?}", out.note);
    assert!(out.verdict.as_ref().unwrap().success);
    assert_eq!(out.actions_executed, 4);
    assert!(dir.path().join("online_report.json").is_file());

    let recs = records(out);
    let rep = replay(&recs).unwrap();
    assert_eq!(rep.approved_and_executed(), 4);
    assert_eq!(rep.final_status(), Some(Status::Finished));
    assert!(rep.closed);
    let ops: Vec<Operation> = rep.executed.iter().map(|a| a.operation).collect();
    assert_eq!(ops, [Operation::Click, Operation::Type, Operation::Select, Operation::PressEnter]);
    assert_eq!(rep.executed[1].value.as_deref(), Some("SJD"));
    assert_eq!(rep.executed[2].value.as_deref(), Some("Large truck"));

    let last = rep.events.last().unwrap();
    assert_eq!(last.decision, Decision::Terminated);
    assert!(last.execution.is_none());
    let url = rep.events[3].url_after.as_deref().unwrap();
    assert!(url.contains("results.html") && url.contains("city=SJD") && url.contains("size=large"), "{url}");

    // The banner is removed by the policy before the first observation.
    let dismissed: Vec<_> = recs
        .iter()
        .filter_map(|r| match r {
            TraceRecord::OverlayDismissed { step_index, count, by, .. } => Some((*step_index, *count, *by)),
            _ => None,
        })
        .collect();
    assert_eq!(dismissed, [(1, 1, Actor::Policy)]);
    assert!(recs.iter().any(|r| matches!(r, TraceRecord::Verdict { by: Actor::Checker, success: true, .. })));
    for step in 1..=5 {
        assert!(out.trace_path.parent().unwrap().join(format!("step-{step:03}.png")).is_file());
    }
}

#[tokio::test]
async fn fixture_runs_are_deterministic() {
    let base = serve_site().await;
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let report = run_online(&fixture_tasks(&base), &agent_with(GroundingStrategy::Attributes, fixture_script()), &auto_policy(), &LiteFactory, &Registry::new(), &opts(dir.path()))
            .await
            .unwrap();
        let rep = replay(&records(&report.tasks[0])).unwrap();
        let events: Vec<_> = rep
            .events
            .iter()
            .map(|e| (e.step_index, e.screenshot_digest.clone(), e.proposed.clone(), e.decision, e.url_before.clone(), e.url_after.clone()))
            .collect();
        let shot = std::fs::read(report.tasks[0].trace_path.parent().unwrap().join("step-003.png")).unwrap();
        runs.push((events, rep.statuses, shot));
    }
    assert_eq!(runs[0], runs[1]);
}

#[tokio::test]
async fn step_cap_aborts_the_session() {
    let base = serve_site().await;
    let dir = tempfile::tempdir().unwrap();
    let mut o = opts(dir.path());
    o.session.max_steps = 3;
    let report = run_online(&fixture_tasks(&base), &agent_with(GroundingStrategy::Attributes, fixture_script()), &auto_policy(), &LiteFactory, &Registry::new(), &o)
        .await
        .unwrap();
    let out = &report.tasks[0];
    assert_eq!(out.status, Status::Aborted);
    assert_eq!(out.steps, 3);
    assert_eq!(out.actions_executed, 3);
    assert!(out.note.as_deref().unwrap().contains("step cap 3"));
    assert_eq!(aborted(&report).count(), 1);
    assert_eq!(report.success_rate, 0.0);
    assert!(replay(&records(out)).is_ok());
}

#[tokio::test]
async fn blocked_action_is_denied_even_under_auto_approve() {
    let base = serve_site().await;
    let dir = tempfile::tempdir().unwrap();
    let login = pair("LINK", "Log in", "CLICK", "None");
    let script = Script::queue(login.iter().cycle().take(6).cloned());
    let report = run_online(&fixture_tasks(&base), &agent_with(GroundingStrategy::Attributes, script), &auto_policy(), &LiteFactory, &Registry::new(), &opts(dir.path()))
        .await
        .unwrap();
    let out = &report.tasks[0];
    assert_eq!(out.status, Status::Aborted);
    assert_eq!(out.actions_executed, 0);
    assert!(out.note.as_deref().unwrap().contains("denied 3 times"));
    let recs = records(out);
    let ds = decisions(&recs);
    assert_eq!(ds.len(), 3);
    for (d, by, note) in &ds {
        assert_eq!((*d, *by), (Decision::Denied, Actor::Policy));
        assert_eq!(note.as_deref(), Some("blocked by text:log in"));
    }
    assert!(!recs.iter().any(|r| matches!(r, TraceRecord::Executed { .. })));
    // Re-proposals stay on the same observation.
    let observed = recs.iter().filter(|r| matches!(r, TraceRecord::Observed { .. })).count();
    assert_eq!(observed, 1);
}

#[tokio::test]
async fn human_gate_needs_an_approval_client() {
    let base = serve_site().await;
    let dir = tempfile::tempdir().unwrap();
    let tasks = fixture_tasks(&base);
    let agent = agent_with(GroundingStrategy::Attributes, fixture_script());
    let reg = Registry::new();
    let err = run_online(&tasks, &agent, &SafetyPolicy::default(), &LiteFactory, &reg, &opts(dir.path())).await.unwrap_err();
    assert!(matches!(err, OnlineError::NoApprovalChannel));
    assert!(reg.list().is_empty());

    // Driving a session directly fails closed too: nothing reaches the browser.
    let shared = reg.create_session("direct", tasks[0].task.clone());
    let cfg = SessionConfig {
        out_dir: dir.path().to_owned(),
        ..Default::default()
    };
    let out = run_session(shared, &tasks[0], &agent, &SafetyPolicy::default(), Box::new(LiteBrowser::new((1280, 800))), &cfg).await;
    assert_eq!(out.status, Status::Aborted);
    assert_eq!(out.steps, 0);
    let recs = records(&out);
    assert!(!recs.iter().any(TraceRecord::is_browser_event));
    assert!(!recs.iter().any(|r| matches!(r, TraceRecord::Observed { .. })));
}

#[tokio::test]
async fn form_page_observation() {
    let base = serve_site().await;
    let mut b = LiteBrowser::new((1280, 800));
    b.navigate(&format!("{base}/form.html")).await.unwrap();
    let html = b.serialize_dom().await.unwrap();
    assert_eq!(b.serialize_dom().await.unwrap(), html);
    let snap = parse_document(&html, &base).unwrap();
    let els = extract_interactive_elements(&snap);
    assert_eq!(els.len(), 6, "{:?}", els.iter().map(|e| &e.tag).collect::<Vec<_>>());
    for e in &els {
        let bb = e.bbox.expect("bbox");
        assert!(bb.w > 0.0 && bb.h > 0.0);
        assert!(e.is_visible);
    }
    let tags: Vec<&str> = els.iter().map(|e| e.tag.as_str()).collect();
    assert_eq!(tags, ["a", "input", "select", "input", "button", "a"]);

    let png = b.screenshot().await.unwrap();
    let img = image::load_from_memory(png.bytes()).unwrap();
    assert_eq!((img.width(), img.height()), (1280, 800));
    assert_eq!(b.screenshot().await.unwrap().digest(), png.digest());

    let city = els.iter().find(|e| e.attr("name") == Some("city")).unwrap();
    b.type_text(city.index, "SJD").await.unwrap();
    let again = parse_document(&b.serialize_dom().await.unwrap(), &base).unwrap();
    let typed = again.get(&city.id).expect("typing keeps the element identity");
    assert_eq!(typed.attr("value"), Some("SJD"));
}

#[tokio::test]
async fn custom_viewport_sets_screenshot_size() {
    let base = serve_site().await;
    let mut b = LiteBrowser::new((800, 600));
    b.navigate(&format!("{base}/index.html")).await.unwrap();
    let img = image::load_from_memory(b.screenshot().await.unwrap().bytes()).unwrap();
    assert_eq!((img.width(), img.height()), (800, 600));
}

#[tokio::test]
async fn unreachable_start_url_aborts_with_navigation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut task = OnlineTask {
        task: webground_core::agent::TaskSpec::new("dead", "Open the page"),
        success_check: None,
        reference_actions: None,
    };
    for url in ["http://127.0.0.1:1/index.html", "not a url"] {
        task.task.start_url = Some(url.into());
        let report = run_online(std::slice::from_ref(&task), &agent_with(GroundingStrategy::Attributes, Script::default()), &auto_policy(), &LiteFactory, &Registry::new(), &opts(dir.path()))
            .await
            .unwrap();
        let out = &report.tasks[0];
        assert_eq!(out.status, Status::Aborted);
        assert!(out.note.as_deref().unwrap().starts_with("navigation failed"), "{:?}", out.note);
    }
    let mut b = LiteBrowser::new((1280, 800));
    assert!(matches!(b.navigate("not a url").await, Err(BrowserError::NavigationFailed(_))));
}

/// Forwards to a [`LiteBrowser`], holding every click for a while.
struct SlowClicks(LiteBrowser, Duration);

#[async_trait]
impl Browser for SlowClicks {
    async fn navigate(&mut self, url: &str) -> Result<(), BrowserError> {
        self.0.navigate(url).await
    }
    async fn current_url(&mut self) -> Result<String, BrowserError> {
        self.0.current_url().await
    }
    async fn title(&mut self) -> Result<String, BrowserError> {
        self.0.title().await
    }
    async fn serialize_dom(&mut self) -> Result<String, BrowserError> {
        self.0.serialize_dom().await
    }
    async fn screenshot(&mut self) -> Result<PngImage, BrowserError> {
        self.0.screenshot().await
    }
    async fn click(&mut self, index: usize) -> Result<(), BrowserError> {
        tokio::time::sleep(self.1).await;
        self.0.click(index).await
    }
    async fn type_text(&mut self, index: usize, value: &str) -> Result<(), BrowserError> {
        self.0.type_text(index, value).await
    }
    async fn select_option(&mut self, index: usize, label: &str) -> Result<(), BrowserError> {
        self.0.select_option(index, label).await
    }
    async fn press_enter(&mut self, index: Option<usize>) -> Result<(), BrowserError> {
        self.0.press_enter(index).await
    }
    async fn scroll(&mut self, dir: ScrollDirection) -> Result<(), BrowserError> {
        self.0.scroll(dir).await
    }
    async fn dismiss(&mut self, selectors: &[String]) -> Result<usize, BrowserError> {
        self.0.dismiss(selectors).await
    }
}

struct SlowFactory(Duration);

#[async_trait]
impl BrowserFactory for SlowFactory {
    async fn open(&self, viewport: (u32, u32)) -> Result<Box<dyn Browser>, BrowserError> {
        Ok(Box::new(SlowClicks(LiteBrowser::new(viewport), self.0)))
    }
}

struct Api {
    base: String,
    http: reqwest::Client,
}

impl Api {
    async fn start(reg: &Arc<Registry>) -> Self {
        let (addr, _) = serve(router(reg.clone()), "127.0.0.1:0".parse().unwrap()).await.unwrap();
        Self {
            base: format!("http://{addr}"),
            http: reqwest::Client::new(),
        }
    }

    async fn get(&self, path: &str) -> reqwest::Response {
        self.http.get(format!("{}{path}", self.base)).send().await.unwrap()
    }

    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let r = self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap();
        let code = r.status().as_u16();
        (code, r.json().await.unwrap_or(Value::Null))
    }

    async fn state(&self, id: &str) -> SessionView {
        self.get(&format!("/sessions/{id}/state")).await.json().await.unwrap()
    }

    /// Polls until `pred` holds for the only session.
    async fn wait_for(&self, pred: impl Fn(&SessionView) -> bool) -> SessionView {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let list: Vec<Value> = self.get("/sessions").await.json().await.unwrap();
            if let Some(id) = list.first().and_then(|s| s["session_id"].as_str()) {
                let v = self.state(id).await;
                if pred(&v) {
                    return v;
                }
            }
            assert!(Instant::now() < deadline, "condition not reached");
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }
}

fn is(status: Status) -> impl Fn(&SessionView) -> bool {
    move |v| v.status == Some(status)
}

#[tokio::test]
async fn human_gate_flow_through_control_api() {
    let base = serve_site().await;
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new();
    let api = Api::start(&reg).await;

    // A monitor subscribed to the global event stream is the approval client.
    let mut events = api.get("/events").await;
    assert_eq!(events.status(), 200);
    let hello = String::from_utf8(events.chunk().await.unwrap().unwrap().to_vec()).unwrap();
    assert!(hello.contains("event: hello"), "{hello}");
    assert_eq!(reg.approval_clients(), 1);

    let run = {
        let (reg, tasks, out) = (reg.clone(), fixture_tasks(&base), dir.path().to_owned());
        tokio::spawn(async move {
            let agent = agent_with(GroundingStrategy::Attributes, fixture_script());
            let o = OnlineOptions {
                session: SessionConfig { out_dir: out, ..Default::default() },
                jobs: 1,
            };
            run_online(&tasks, &agent, &SafetyPolicy::default(), &SlowFactory(Duration::from_millis(400)), &reg, &o).await
        })
    };

    let v = api.wait_for(is(Status::AwaitingApproval)).await;
    let id = v.session_id.clone();
    assert_eq!(id, "001-truck-sjd-large");
    let proposed = v.proposed_action.clone().unwrap();
    assert_eq!(proposed.operation, Operation::Click);
    assert!(v.candidates.iter().any(|c| c.repr.contains("Reserve a truck")));
    assert!(v.raw_description.as_deref().unwrap().contains("Reserve a truck"));

    assert_eq!(api.get("/sessions/nope/state").await.status(), 404);
    assert_eq!(api.post("/sessions/nope/decision", json!({"decision": "approve"})).await.0, 404);
    assert_eq!(api.post(&format!("/sessions/{id}/verdict"), json!({"success": true, "notes": ""})).await.0, 409);
    assert_eq!(api.post(&format!("/sessions/{id}/decision"), json!({"decision": "maybe"})).await.0, 422);
    let el = v.candidates[0].element_id.clone();
    let (code, body) = api.post(&format!("/sessions/{id}/oracle"), json!({"element_id": el, "operation": "Type"})).await;
    assert_eq!(code, 422, "{body}");
    assert_eq!(api.post(&format!("/sessions/{id}/oracle"), json!({"element_id": el, "operation": "Click"})).await.0, 409);

    let shot = api.get(&format!("/sessions/{id}/screenshot.png")).await;
    assert_eq!(shot.status(), 200);
    assert_eq!(shot.headers()["content-type"], "image/png");
    let img = image::load_from_memory(&shot.bytes().await.unwrap()).unwrap();
    assert_eq!((img.width(), img.height()), (1280, 800));

    // Per-session stream opens with the current state.
    let mut sse = api.get(&format!("/sessions/{id}/events")).await;
    let first = String::from_utf8(sse.chunk().await.unwrap().unwrap().to_vec()).unwrap();
    assert!(first.starts_with("event: state") && first.contains(&id), "{first}");
    drop(sse);

    assert_eq!(api.post(&format!("/sessions/{id}/decision"), json!({"decision": "approve"})).await.0, 200);
    api.wait_for(is(Status::Executing)).await;
    assert_eq!(api.post(&format!("/sessions/{id}/decision"), json!({"decision": "approve"})).await.0, 409);

    let mut approved = 1;
    let mut last_step = 1;
    loop {
        let v = api
            .wait_for(|v| v.status == Some(Status::AwaitingVerdict) || (v.status == Some(Status::AwaitingApproval) && v.step_count > last_step))
            .await;
        if v.status == Some(Status::AwaitingVerdict) {
            break;
        }
        last_step = v.step_count;
        assert_eq!(api.post(&format!("/sessions/{id}/decision"), json!({"decision": "approve"})).await.0, 200);
        approved += 1;
    }
    assert_eq!(approved, 4);
    let v = api.state(&id).await;
    assert_eq!(v.history.len(), 4);
    assert!(v.url.contains("results.html"));

    assert_eq!(api.post(&format!("/sessions/{id}/decision"), json!({"decision": "approve"})).await.0, 409);
    let notes = "x".repeat(2048);
    assert_eq!(api.post(&format!("/sessions/{id}/verdict"), json!({"success": true, "notes": notes})).await.0, 200);

    let report = run.await.unwrap().unwrap();
    let out = &report.tasks[0];
    assert_eq!(out.status, Status::Finished);
    assert!(out.success());
    assert_eq!(out.verdict.as_ref().unwrap().notes, notes);
    let recs = records(out);
    let rep = replay(&recs).unwrap();
    assert_eq!(rep.approved_and_executed(), 4);
    assert!(recs.iter().any(|r| matches!(r, TraceRecord::Verdict { by: Actor::Human, notes: n, .. } if *n == notes)));
    assert!(decisions(&recs).iter().take(4).all(|(d, by, _)| *d == Decision::Approved && *by == Actor::Human));
    assert_eq!(api.state(&id).await.status, Some(Status::Finished));
    assert_eq!(api.post(&format!("/sessions/{id}/verdict"), json!({"success": false, "notes": ""})).await.0, 409);
}

async fn spawn_gated(reg: &Arc<Registry>, base: &str, dir: &Path, strategy: GroundingStrategy, script: Script, policy: SafetyPolicy) -> tokio::task::JoinHandle<Result<OnlineReport, OnlineError>> {
    let (reg, tasks, out) = (reg.clone(), fixture_tasks(base), dir.to_owned());
    tokio::spawn(async move {
        let agent = agent_with(strategy, script);
        run_online(&tasks, &agent, &policy, &LiteFactory, &reg, &opts(&out)).await
    })
}

#[tokio::test]
async fn denials_repropose_then_abort() {
    let base = serve_site().await;
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new();
    let _client = reg.attach_client();
    let api = Api::start(&reg).await;
    let step = pair("LINK", "Reserve a truck", "CLICK", "None");
    let script = Script::queue(step.iter().cycle().take(6).cloned());
    let run = spawn_gated(&reg, &base, dir.path(), GroundingStrategy::Attributes, script, SafetyPolicy::default()).await;

    for round in 1..=3 {
        let v = api.wait_for(|v| v.status == Some(Status::AwaitingApproval) && v.revision > 0).await;
        assert_eq!(api.post(&format!("/sessions/{}/decision", v.session_id), json!({"decision": "deny"})).await.0, 200);
        if round < 3 {
            api.wait_for(|w| w.revision > v.revision && w.status == Some(Status::AwaitingApproval)).await;
        }
    }
    let report = run.await.unwrap().unwrap();
    let out = &report.tasks[0];
    assert_eq!(out.status, Status::Aborted);
    assert_eq!(out.actions_executed, 0);
    let recs = records(out);
    let ds = decisions(&recs);
    assert_eq!(ds.len(), 3);
    assert!(ds.iter().all(|(d, by, _)| *d == Decision::Denied && *by == Actor::Human));
    assert!(replay(&recs).is_ok());
}

#[tokio::test]
async fn unanswered_approval_times_out_as_denial() {
    let base = serve_site().await;
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new();
    let _client = reg.attach_client();
    let step = pair("LINK", "Reserve a truck", "CLICK", "None");
    let script = Script::queue(step.iter().cycle().take(6).cloned());
    let policy = SafetyPolicy {
        approval_timeout: Duration::from_millis(50),
        ..Default::default()
    };
    let report = spawn_gated(&reg, &base, dir.path(), GroundingStrategy::Attributes, script, policy).await.await.unwrap().unwrap();
    let out = &report.tasks[0];
    assert_eq!(out.status, Status::Aborted);
    let ds = decisions(&records(out));
    assert_eq!(ds.len(), 3);
    assert!(ds.iter().all(|(d, by, note)| *d == Decision::Denied && *by == Actor::Policy && note.as_deref() == Some("approval timeout")));
}

#[tokio::test]
async fn human_dismissal_withdraws_the_proposal() {
    let base = serve_site().await;
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new();
    let _client = reg.attach_client();
    let api = Api::start(&reg).await;
    let step = pair("LINK", "Reserve a truck", "CLICK", "None");
    let script = Script::queue(step.iter().chain(step.iter()).chain(terminate().iter()).cloned());
    let run = spawn_gated(&reg, &base, dir.path(), GroundingStrategy::Attributes, script, SafetyPolicy::default()).await;

    let v = api.wait_for(is(Status::AwaitingApproval)).await;
    let id = v.session_id.clone();
    assert_eq!(api.post(&format!("/sessions/{id}/dismiss"), json!({"selectors": []})).await.0, 422);
    assert_eq!(api.post(&format!("/sessions/{id}/dismiss"), json!({"selectors": [".cookie-banner"]})).await.0, 200);
    let v2 = api.wait_for(|w| w.status == Some(Status::AwaitingApproval) && w.step_count == 2).await;
    assert_ne!(v2.screenshot_digest, v.screenshot_digest);
    assert_eq!(api.post(&format!("/sessions/{id}/decision"), json!({"decision": "approve"})).await.0, 200);
    api.wait_for(is(Status::AwaitingVerdict)).await;
    assert_eq!(api.post(&format!("/sessions/{id}/verdict"), json!({"success": false, "notes": "stopped early"})).await.0, 200);

    let report = run.await.unwrap().unwrap();
    let out = &report.tasks[0];
    assert_eq!(out.status, Status::Finished);
    assert!(!out.success());
    let recs = records(out);
    assert!(recs.iter().any(|r| matches!(r, TraceRecord::OverlayDismissed { count: 1, by: Actor::Human, .. })));
    let ds = decisions(&recs);
    assert_eq!(ds[0], (Decision::Denied, Actor::Human, Some("withdrawn after overlay dismissal".into())));
    assert_eq!(ds[1].0, Decision::Approved);
    let rep = replay(&recs).unwrap();
    assert_eq!(rep.approved_and_executed(), 1);
}

#[tokio::test]
async fn oracle_grounding_through_control_api() {
    let base = serve_site().await;
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new();
    let _client = reg.attach_client();
    let api = Api::start(&reg).await;
    let script = Script::queue(["Open the reservation form.", "The form is open; stop here."]);
    let run = spawn_gated(&reg, &base, dir.path(), GroundingStrategy::Oracle, script, SafetyPolicy::default()).await;

    let v = api.wait_for(|v| v.awaiting_oracle).await;
    let id = v.session_id.clone();
    let link = v.candidates.iter().find(|c| c.repr.contains("Reserve a truck")).unwrap().element_id.clone();
    assert_eq!(api.post(&format!("/sessions/{id}/oracle"), json!({"element_id": "missing", "operation": "Click"})).await.0, 422);
    assert_eq!(api.post(&format!("/sessions/{id}/oracle"), json!({"element_id": link, "operation": "Click"})).await.0, 200);
    let v = api.wait_for(is(Status::AwaitingApproval)).await;
    assert_eq!(v.proposed_action.as_ref().unwrap().element_id.as_ref(), Some(&link));
    assert_eq!(api.post(&format!("/sessions/{id}/decision"), json!({"decision": "approve"})).await.0, 200);

    api.wait_for(|v| v.awaiting_oracle && v.step_count == 2).await;
    assert_eq!(api.post(&format!("/sessions/{id}/oracle"), json!({"operation": "Terminate"})).await.0, 200);
    api.wait_for(is(Status::AwaitingVerdict)).await;
    assert_eq!(api.post(&format!("/sessions/{id}/verdict"), json!({"success": true, "notes": ""})).await.0, 200);

    let out = &run.await.unwrap().unwrap().tasks[0];
    assert_eq!(out.status, Status::Finished);
    assert_eq!(out.actions_executed, 1);
    let rep = replay(&records(out)).unwrap();
    assert!(rep.events[0].url_after.as_deref().unwrap().ends_with("/form.html"));
}
