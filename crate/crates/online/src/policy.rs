use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use glob::Pattern;
use serde::{Deserialize, Serialize};
use webground_core::agent::GroundedAction;
use webground_core::dom::Element;
use webground_core::text::fold;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    #[default]
    HumanGate,
    AutoApprove,
}

impl FromStr for PolicyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "human-gate" | "human" => Ok(PolicyMode::HumanGate),
            "auto-approve" | "auto" => Ok(PolicyMode::AutoApprove),
            other => Err(format!("unknown policy mode {other:?}")),
        }
    }
}

/// `url:<glob>` matches the page URL or a link target; anything else
/// (optionally prefixed `text:`) is a case-insensitive substring of the
/// element's text or the typed value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BlockedPattern {
    UrlGlob(String),
    ElementText(String),
}

impl FromStr for BlockedPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(g) = s.strip_prefix("url:") {
            Pattern::new(g.trim()).map_err(|e| format!("bad url glob {g:?}: {e}"))?;
            return Ok(BlockedPattern::UrlGlob(g.trim().to_owned()));
        }
        let t = s.strip_prefix("text:").unwrap_or(s).trim();
        if t.is_empty() {
            return Err("empty blocked pattern".into());
        }
        Ok(BlockedPattern::ElementText(t.to_owned()))
    }
}

impl TryFrom<String> for BlockedPattern {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BlockedPattern> for String {
    fn from(p: BlockedPattern) -> String {
        p.to_string()
    }
}

impl fmt::Display for BlockedPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockedPattern::UrlGlob(g) => write!(f, "url:{g}"),
            BlockedPattern::ElementText(t) => write!(f, "text:{t}"),
        }
    }
}

impl BlockedPattern {
    fn matches(&self, action: &GroundedAction, element: Option<&Element>, page_url: &str) -> bool {
        match self {
            BlockedPattern::UrlGlob(g) => {
                let Ok(p) = Pattern::new(g) else { return false };
                let target = element.and_then(|e| e.attr("href")).and_then(|h| reqwest::Url::parse(page_url).ok()?.join(h).ok());
                p.matches(page_url) || target.is_some_and(|t| p.matches(t.as_str()))
            }
            BlockedPattern::ElementText(t) => {
                let needle = fold(t);
                let hay = [element.map(|e| e.salient_text()), action.value.as_deref()];
                hay.into_iter().flatten().any(|h| fold(h).contains(&needle))
            }
        }
    }
}

pub fn default_blocked_patterns() -> Vec<BlockedPattern> {
    ["log in", "sign in", "place order", "submit application"]
        .into_iter()
        .map(|t| BlockedPattern::ElementText(t.into()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyPolicy {
    pub mode: PolicyMode,
    pub blocked_patterns: Vec<BlockedPattern>,
    /// Removed before each observation in auto-approve mode.
    pub overlay_selectors: Vec<String>,
    #[serde(with = "secs")]
    pub approval_timeout: Duration,
}

impl Default for SafetyPolicy {
    fn default() -> Self {
        Self {
            mode: PolicyMode::HumanGate,
            blocked_patterns: default_blocked_patterns(),
            overlay_selectors: Vec::new(),
            approval_timeout: Duration::from_secs(600),
        }
    }
}

impl SafetyPolicy {
    pub fn auto_approve() -> Self {
        Self {
            mode: PolicyMode::AutoApprove,
            ..Default::default()
        }
    }

    /// First blocked pattern the action hits.
    pub fn blocked(&self, action: &GroundedAction, element: Option<&Element>, page_url: &str) -> Option<&BlockedPattern> {
        self.blocked_patterns.iter().find(|p| p.matches(action, element, page_url))
    }
}

pub(crate) mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}
