use std::collections::BTreeMap;
use std::path::Path;

use reqwest::Url;
use serde::{Deserialize, Serialize};
use webground_core::agent::TaskSpec;
use webground_core::text::fold;

/// Final-page assertions used to auto-assert a verdict on fixture sites.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessCheck {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url_contains: Option<String>,
    /// Query parameters that must be present with these exact values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub query: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub text_contains: Vec<String>,
}

impl SuccessCheck {
    /// Returns pass/fail and a note naming the first failed assertion.
    pub fn evaluate(&self, url: &str, page_text: &str) -> (bool, String) {
        if let Some(part) = &self.url_contains {
            if !url.contains(part.as_str()) {
                return (false, format!("url {url} lacks {part:?}"));
            }
        }
        if !self.query.is_empty() {
            let pairs: BTreeMap<String, String> = Url::parse(url)
                .map(|u| u.query_pairs().map(|(k, v)| (k.into_owned(), v.into_owned())).collect())
                .unwrap_or_default();
            for (k, v) in &self.query {
                if pairs.get(k) != Some(v) {
                    return (false, format!("query {k}={:?}, want {v:?}", pairs.get(k)));
                }
            }
        }
        let text = fold(page_text);
        for needle in &self.text_contains {
            if !text.contains(&fold(needle)) {
                return (false, format!("page text lacks {needle:?}"));
            }
        }
        (true, "all checks passed".into())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineTask {
    #[serde(flatten)]
    pub task: TaskSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_check: Option<SuccessCheck>,
    /// Length of a reference solution; drives the difficulty bucket.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_actions: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TaskFile {
    Wrapped { tasks: Vec<OnlineTask> },
    Bare(Vec<OnlineTask>),
}

/// Loads a task file (`{"tasks": [...]}` or a bare array), substituting
/// `{SITE}` in start URLs with `site_base`.
pub fn load_tasks(path: &Path, site_base: Option<&str>) -> Result<Vec<OnlineTask>, String> {
    let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let parsed: TaskFile = serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut tasks = match parsed {
        TaskFile::Wrapped { tasks } | TaskFile::Bare(tasks) => tasks,
    };
    for t in &mut tasks {
        t.task.validate()?;
        if let Some(url) = &mut t.task.start_url {
            if url.contains("{SITE}") {
                let base = site_base.ok_or_else(|| format!("task {} uses {{SITE}} but no site is served", t.task.task_id))?;
                *url = url.replace("{SITE}", base.trim_end_matches('/'));
            }
        }
        if t.task.start_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
            return Err(format!("task {} has no start_url", t.task.task_id));
        }
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks() {
        let c = SuccessCheck {
            url_contains: Some("results.html".into()),
            query: [("city".to_string(), "SJD".to_string())].into(),
            text_contains: vec!["large truck".into()],
        };
        assert!(c.evaluate("http://h/results.html?city=SJD&size=large", "3 Large Truck offers").0);
        assert!(!c.evaluate("http://h/form.html?city=SJD", "Large truck").0);
        let (ok, note) = c.evaluate("http://h/results.html?city=LAX", "Large truck");
        assert!(!ok);
        assert!(note.contains("city"));
        assert!(!c.evaluate("http://h/results.html?city=SJD", "Small truck").0);
        assert!(SuccessCheck::default().evaluate("x", "").0);
    }

    #[test]
    fn task_file_forms_and_site_substitution() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        std::fs::write(&p, r#"{"tasks":[{"task_id":"a","instruction":"go","start_url":"{SITE}/index.html","success_check":{"url_contains":"x"}}]}"#).unwrap();
        let t = load_tasks(&p, Some("http://127.0.0.1:5/")).unwrap();
        assert_eq!(t[0].task.start_url.as_deref(), Some("http://127.0.0.1:5/index.html"));
        assert!(t[0].success_check.is_some());
        assert!(load_tasks(&p, None).is_err());
        std::fs::write(&p, r#"[{"task_id":"b","instruction":"go"}]"#).unwrap();
        assert!(load_tasks(&p, None).unwrap_err().contains("no start_url"));
    }
}
