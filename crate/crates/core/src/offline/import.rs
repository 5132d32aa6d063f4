//! Importer for Mind2Web-style JSON lines exports.
//!
//! Expected layout: one or more `<split>*.jsonl` files (split prefixes
//! `test_task`, `test_website`, `test_domain`, `train` or the canonical
//! names), one action per line with `annotation_id`, `action_uid`,
//! `confirmed_task`, `website`, `domain`, `operation`, `pos_candidates`,
//! `cleaned_html` or `raw_html`, and `screenshot` (a path relative to the
//! file, or `{"bytes": <base64>}`). Optional: `target_action_index`,
//! `candidate_ranking` (ordered id list).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use serde_json::Value;

use super::dataset::{schema, DatasetError, RawAction, RawOperation, RawTask, Split, TASKS_FILE};

const SPLIT_PREFIXES: &[(&str, Split)] = &[
    ("test_task", Split::CrossTask),
    ("cross-task", Split::CrossTask),
    ("test_website", Split::CrossWebsite),
    ("cross-website", Split::CrossWebsite),
    ("test_domain", Split::CrossDomain),
    ("cross-domain", Split::CrossDomain),
    ("train", Split::Train),
];

fn split_of(path: &Path) -> Option<Split> {
    let name = path.file_name()?.to_str()?;
    if !name.ends_with(".jsonl") {
        return None;
    }
    SPLIT_PREFIXES.iter().find(|(p, _)| name.starts_with(p)).map(|(_, s)| *s)
}

fn jsonl_files(root: &Path) -> Vec<(PathBuf, Split)> {
    let mut files: Vec<(PathBuf, Split)> = std::fs::read_dir(root)
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| split_of(&e.path()).map(|s| (e.path(), s)))
        .collect();
    files.sort();
    files
}

pub fn is_import_layout(root: &Path) -> bool {
    !jsonl_files(root).is_empty()
}

/// Per-source cache location under the system temp directory.
pub fn cache_dir(root: &Path) -> PathBuf {
    let abs = root.canonicalize().unwrap_or_else(|_| root.to_path_buf());
    let key = crate::gateway::text_key(&abs.display().to_string());
    std::env::temp_dir().join(format!("webground-import-{key}"))
}

fn as_object(v: &Value) -> Option<Value> {
    match v {
        Value::String(s) => serde_json::from_str(s).ok(),
        Value::Object(_) => Some(v.clone()),
        _ => None,
    }
}

fn candidate_id(v: &Value) -> Option<String> {
    let obj = as_object(v)?;
    let direct = obj.get("backend_node_id").or_else(|| obj.get("id"));
    if let Some(id) = direct {
        return id.as_str().map(str::to_owned).or_else(|| id.as_i64().map(|n| n.to_string()));
    }
    let attrs = as_object(obj.get("attributes")?)?;
    let id = attrs.get("backend_node_id")?;
    id.as_str().map(str::to_owned).or_else(|| id.as_i64().map(|n| n.to_string()))
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

struct Pending {
    raw: RawTask,
    order: Vec<i64>,
}

/// Converts the export under `root` into the canonical layout under `out`.
/// Reuses an existing import.
pub fn import_jsonl(root: &Path, out: &Path) -> Result<(), DatasetError> {
    if out.join(TASKS_FILE).is_file() {
        return Ok(());
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    let staging = out.with_extension("partial");
    let _ = std::fs::remove_dir_all(&staging);
    for sub in ["html", "screenshots", "rankings"] {
        std::fs::create_dir_all(staging.join(sub)).map_err(io(&staging))?;
    }

    let mut tasks: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (file, split) in jsonl_files(root) {
        let base = file.parent().unwrap_or(root).to_path_buf();
        let text = std::fs::read_to_string(&file).map_err(io(&file))?;
        let fname = file.display().to_string();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let at = |f: &str| format!("line {}: {f}", n + 1);
            let rec: Value = serde_json::from_str(line).map_err(|e| schema(&fname, at(&e.to_string())))?;
            let s = |k: &str| rec.get(k).and_then(Value::as_str).map(str::to_owned);
            let ann = s("annotation_id").ok_or_else(|| schema(&fname, at("annotation_id")))?;
            let uid = s("action_uid").ok_or_else(|| schema(&fname, at("action_uid")))?;
            let op = rec.get("operation").and_then(as_object).ok_or_else(|| schema(&fname, at("operation")))?;
            let op = RawOperation {
                op: op.get("op").and_then(Value::as_str).ok_or_else(|| schema(&fname, at("operation.op")))?.to_owned(),
                value: op.get("value").and_then(Value::as_str).map(str::to_owned),
            };
            let pos: Vec<String> = rec
                .get("pos_candidates")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(candidate_id).collect())
                .unwrap_or_default();
            let html = s("cleaned_html").or_else(|| s("raw_html")).ok_or_else(|| schema(&fname, at("cleaned_html")))?;
            let name = safe_name(&uid);

            let html_rel = format!("html/{name}.html");
            std::fs::write(staging.join(&html_rel), html).map_err(io(&staging))?;
            let shot_rel = format!("screenshots/{name}.png");
            let shot_dst = staging.join(&shot_rel);
            match rec.get("screenshot") {
                Some(Value::String(p)) => {
                    let src = base.join(p);
                    if !src.is_file() {
                        return Err(DatasetError::MissingAsset(src));
                    }
                    std::fs::copy(&src, &shot_dst).map_err(io(&src))?;
                }
                Some(Value::Object(o)) => {
                    let b64 = o.get("bytes").and_then(Value::as_str).ok_or_else(|| schema(&fname, at("screenshot.bytes")))?;
                    let bytes = base64::engine::general_purpose::STANDARD.decode(b64).map_err(|_| schema(&fname, at("screenshot.bytes")))?;
                    std::fs::write(&shot_dst, bytes).map_err(io(&shot_dst))?;
                }
                _ => return Err(schema(&fname, at("screenshot"))),
            }
            let ranking_rel = match rec.get("candidate_ranking").and_then(Value::as_array) {
                Some(ids) => {
                    let rel = format!("rankings/{name}.json");
                    let ids: Vec<String> = ids.iter().filter_map(candidate_id_or_str).collect();
                    std::fs::write(staging.join(&rel), serde_json::to_string(&ids).expect("strings")).map_err(io(&staging))?;
                    Some(rel)
                }
                None => None,
            };

            let slot = *index.entry(ann.clone()).or_insert_with(|| {
                tasks.push(Pending {
                    raw: RawTask {
                        task_id: ann.clone(),
                        website: s("website").unwrap_or_default(),
                        domain: s("domain").unwrap_or_default(),
                        split: split.name().to_owned(),
                        confirmed_task: s("confirmed_task").unwrap_or_default(),
                        actions: Vec::new(),
                    },
                    order: Vec::new(),
                });
                tasks.len() - 1
            });
            let p = &mut tasks[slot];
            p.order.push(rec.get("target_action_index").and_then(|v| v.as_i64().or_else(|| v.as_str()?.parse().ok())).unwrap_or(p.order.len() as i64));
            p.raw.actions.push(RawAction {
                action_uid: uid,
                html_path: html_rel,
                screenshot_path: shot_rel,
                pos_candidate_ids: pos,
                operation: op,
                candidate_ranking_path: ranking_rel,
            });
        }
    }

    let raw: Vec<RawTask> = tasks
        .into_iter()
        .map(|mut p| {
            let mut idx: Vec<usize> = (0..p.raw.actions.len()).collect();
            idx.sort_by_key(|&i| p.order[i]);
            let mut actions: Vec<Option<RawAction>> = p.raw.actions.into_iter().map(Some).collect();
            p.raw.actions = idx.into_iter().map(|i| actions[i].take().expect("each index once")).collect();
            p.raw
        })
        .collect();
    let json = serde_json::to_string_pretty(&raw).expect("serializable");
    std::fs::write(staging.join(TASKS_FILE), json).map_err(io(&staging))?;
    let _ = std::fs::remove_dir_all(out);
    std::fs::rename(&staging, out).map_err(io(out))?;
    Ok(())
}

fn candidate_id_or_str(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.trim_start().starts_with('{') => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => candidate_id(v),
    }
}
