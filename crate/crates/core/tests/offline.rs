use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use webground_core::agent::{Agent, AgentConfig, GroundingFailure, GroundingStrategy};
use webground_core::gateway::{Gateway, Script, ScriptedBackend};
use webground_core::offline::*;

fn corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/offline")
}

fn agent_with(strategy: GroundingStrategy, script: Script) -> Agent {
    let gw = Gateway::new(Arc::new(ScriptedBackend::new(script)));
    Agent::new(AgentConfig { strategy, ..Default::default() }, gw)
}

async fn gold_run(strategy: GroundingStrategy) -> EvalReport {
    let tasks = load_dataset(&corpus()).unwrap();
    let probe = agent_with(strategy, Script::default());
    let script = gold_script(&tasks, &probe).unwrap();
    let agent = agent_with(strategy, script);
    let results = run_offline(&tasks, &agent, &OfflineOptions::default()).await.unwrap();
    EvalReport::build(ReportHeader::new(serde_json::to_value(&agent.config).unwrap()), results)
}

#[test]
fn fixture_corpus_shape() {
    let tasks = load_dataset(&corpus()).unwrap();
    assert_eq!(tasks.len(), 5);
    assert_eq!(tasks.iter().map(|t| t.steps.len()).sum::<usize>(), 15);
    let splits: Vec<Split> = tasks.iter().map(|t| t.split).collect();
    assert_eq!(splits.iter().filter(|s| **s == Split::CrossTask).count(), 2);
    assert!(tasks[3].steps.iter().all(|s| s.candidate_ranking.is_some()));
}

#[tokio::test]
async fn scripted_oracle_is_perfect_for_each_strategy() {
    for strategy in [GroundingStrategy::Choices, GroundingStrategy::Annotation, GroundingStrategy::Attributes] {
        let started = Instant::now();
        let report = gold_run(strategy).await;
        let all = report.overall();
        for (name, v) in [("ele_acc", all.ele_acc), ("op_f1", all.op_f1), ("step_sr", all.step_sr), ("sr0", all.sr0), ("sr1", all.sr1)] {
            assert_eq!(v, 1.0, "{strategy} {name}: {:#?}", report.tasks);
        }
        assert_eq!((all.tasks, all.steps), (5, 15));
        assert!(started.elapsed().as_secs_f64() < 10.0);
    }
}

#[tokio::test]
async fn always_none_scores_zero() {
    let tasks = load_dataset(&corpus()).unwrap();
    let script = Script::default().with_fallback("ELEMENT: NA\nACTION: CLICK\nVALUE: None");
    let agent = agent_with(GroundingStrategy::Annotation, script);
    let results = run_offline(&tasks, &agent, &OfflineOptions::default()).await.unwrap();
    let report = EvalReport::build(ReportHeader::new(serde_json::Value::Null), results);
    assert_eq!(report.overall().ele_acc, 0.0);
    assert_eq!(report.overall().step_sr, 0.0);
    assert!(report.tasks.iter().flat_map(|t| &t.steps).all(|s| s.grounding_failure == Some(GroundingFailure::NoneSelected)));
}

#[tokio::test]
async fn made_up_label_fails_one_step_only() {
    let tasks = load_dataset(&corpus()).unwrap();
    let probe = agent_with(GroundingStrategy::Annotation, Script::default());
    let mut script = gold_script(&tasks, &probe).unwrap();
    // Second entry answers the first grounding turn.
    script.entries[1].response = "ELEMENT: 99\nACTION: CLICK\nVALUE: None".into();
    let agent = agent_with(GroundingStrategy::Annotation, script);
    let results = run_offline(&tasks, &agent, &OfflineOptions::default()).await.unwrap();
    let report = EvalReport::build(ReportHeader::new(serde_json::Value::Null), results);
    let first = &report.tasks[0].steps[0];
    assert_eq!(first.grounding_failure, Some(GroundingFailure::MadeUpLabel));
    let failed = report.tasks.iter().flat_map(|t| &t.steps).filter(|s| !s.step_success).count();
    assert_eq!(failed, 1);
    assert_eq!(report.overall().sr0, 0.8);
    assert_eq!(report.overall().sr1, 1.0);
}

#[tokio::test]
async fn report_is_reproducible_and_round_trips() {
    let a = gold_run(GroundingStrategy::Choices).await;
    let b = gold_run(GroundingStrategy::Choices).await;
    let ja = serde_json::to_string_pretty(&a).unwrap();
    assert_eq!(ja, serde_json::to_string_pretty(&b).unwrap());

    let dir = tempfile::tempdir().unwrap();
    a.write(dir.path()).unwrap();
    let back = EvalReport::read(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, a);
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(csv.starts_with("split,ele_acc,op_f1,step_sr,sr0,sr1,tasks,steps\n"));
    assert!(csv.contains("all,1.000,1.000,1.000,1.000,1.000,5,15"));
    assert_eq!(a.difficulty[&Difficulty::Easy], 5);
}

#[test]
fn missing_screenshot_is_missing_asset() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&corpus(), dir.path());
    std::fs::remove_file(dir.path().join("screenshots/jobs-1-2.png")).unwrap();
    match load_dataset(dir.path()) {
        Err(DatasetError::MissingAsset(p)) => assert!(p.ends_with("screenshots/jobs-1-2.png")),
        other => panic!("expected MissingAsset, got {other:?}"),
    }
}

#[test]
fn schema_violations_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&corpus(), dir.path());
    let path = dir.path().join(TASKS_FILE);
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v[0]["actions"][1]["operation"]["value"] = "".into();
    std::fs::write(&path, v.to_string()).unwrap();
    match load_dataset(dir.path()) {
        Err(DatasetError::SchemaViolation { field, .. }) => assert_eq!(field, "tasks[0].actions[1].operation.value"),
        other => panic!("expected SchemaViolation, got {other:?}"),
    }
    assert!(matches!(load_dataset(&dir.path().join("nope")), Err(DatasetError::MissingAsset(_))));
}

#[test]
fn jsonl_export_is_imported() {
    let src = tempfile::tempdir().unwrap();
    let shot = std::fs::read(corpus().join("screenshots/truck-1-0.png")).unwrap();
    std::fs::create_dir(src.path().join("img")).unwrap();
    std::fs::write(src.path().join("img/a.png"), &shot).unwrap();
    let html = std::fs::read_to_string(corpus().join("html/truck-1-0.html")).unwrap();
    let b64 = base64_encode(&shot);
    let lines = [
        serde_json::json!({
            "annotation_id": "ann1", "action_uid": "u2", "target_action_index": "1", "confirmed_task": "Rent a truck",
            "website": "truckco", "domain": "Travel",
            "operation": "{\"op\": \"CLICK\", \"original_op\": \"CLICK\", \"value\": \"\"}",
            "pos_candidates": ["{\"tag\": \"a\", \"attributes\": \"{\\\"backend_node_id\\\": \\\"1701\\\"}\"}"],
            "cleaned_html": html, "screenshot": {"bytes": b64}
        }),
        serde_json::json!({
            "annotation_id": "ann1", "action_uid": "u1", "target_action_index": 0, "confirmed_task": "Rent a truck",
            "website": "truckco", "domain": "Travel",
            "operation": {"op": "HOVER", "value": ""},
            "pos_candidates": [{"backend_node_id": "1700"}],
            "cleaned_html": html, "screenshot": "img/a.png"
        }),
    ];
    let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(src.path().join("test_website_0.jsonl"), body).unwrap();
    let out = tempfile::tempdir().unwrap();
    import_jsonl(src.path(), &out.path().join("imported")).unwrap();
    let tasks = load_canonical(&out.path().join("imported")).unwrap();
    assert_eq!(tasks.len(), 1);
    assert_eq!(tasks[0].split, Split::CrossWebsite);
    let uids: Vec<&str> = tasks[0].steps.iter().map(|s| s.action_uid.as_str()).collect();
    assert_eq!(uids, ["u1", "u2"]);
    assert_eq!(tasks[0].steps[1].gold_element_ids, vec!["1701".to_owned()]);
}

fn base64_encode(bytes: &[u8]) -> String {
    use base64::Engine as _;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn copy_dir(from: &std::path::Path, to: &std::path::Path) {
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dst = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            std::fs::create_dir_all(&dst).unwrap();
            copy_dir(&entry.path(), &dst);
        } else {
            std::fs::copy(entry.path(), dst).unwrap();
        }
    }
}

/// Only runs when a real Multimodal Mind2Web export is available.
#[test]
fn real_dataset_split_counts() {
    let Ok(root) = std::env::var("MM2W_ROOT") else {
        eprintln!("MM2W_ROOT not set; skipping");
        return;
    };
    let tasks = load_dataset(std::path::Path::new(&root)).unwrap();
    let count = |s: Split| tasks.iter().filter(|t| t.split == s).count();
    assert_eq!(count(Split::CrossTask), 177);
    assert_eq!(count(Split::CrossWebsite), 142);
    assert_eq!(count(Split::CrossDomain), 694);
}
