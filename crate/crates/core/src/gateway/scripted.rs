use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{sha256_hex, Conversation, GatewayError, ModelBackend, PngImage, Role};

/// Key used to match a scripted response to the last user message.
pub fn text_key(text: &str) -> String {
    sha256_hex(text.as_bytes())[..16].to_owned()
}

/// Like [`text_key`] but also covers the images attached to the message.
pub fn turn_key(text: &str, images: &[PngImage]) -> String {
    if images.is_empty() {
        return text_key(text);
    }
    let mut s = text.to_owned();
    for img in images {
        s.push_str("\n#");
        s.push_str(&img.digest());
    }
    text_key(&s)
}

/// One line of a script file. Entries with `turns` and `user_key` only answer
/// conversations matching both; entries without them form the ordered queue.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turns: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_key: Option<String>,
    pub response: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
    /// Returned when neither a keyed entry nor the queue can answer.
    pub fallback: Option<String>,
}

impl Script {
    pub fn queue<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            entries: responses
                .into_iter()
                .map(|r| ScriptEntry {
                    turns: None,
                    user_key: None,
                    response: r.into(),
                })
                .collect(),
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, fallback: impl Into<String>) -> Self {
        self.fallback = Some(fallback.into());
        self
    }

    pub fn push_keyed(&mut self, turns: usize, user_text: &str, images: &[PngImage], response: impl Into<String>) {
        self.entries.push(ScriptEntry {
            turns: Some(turns),
            user_key: Some(turn_key(user_text, images)),
            response: response.into(),
        });
    }

    /// Reads JSON lines; a line `{"fallback": "..."}` sets the fallback.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let mut script = Script::default();
        for (n, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
            if let Some(fb) = v.get("fallback").and_then(|f| f.as_str()) {
                script.fallback = Some(fb.to_owned());
                continue;
            }
            let entry: ScriptEntry = serde_json::from_value(v)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1)))?;
            script.entries.push(entry);
        }
        Ok(script)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("serializable"));
            out.push('\n');
        }
        if let Some(fb) = &self.fallback {
            out.push_str(&serde_json::json!({ "fallback": fb }).to_string());
            out.push('\n');
        }
        std::fs::write(path, out)
    }
}

#[derive(Debug, Default)]
struct State {
    keyed: HashMap<(usize, String), VecDeque<String>>,
    queue: VecDeque<String>,
}

/// Replays canned responses; fully deterministic.
#[derive(Debug)]
pub struct ScriptedBackend {
    state: Mutex<State>,
    fallback: Option<String>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let mut state = State::default();
        for e in script.entries {
            match (e.turns, e.user_key) {
                (Some(t), Some(k)) => state.keyed.entry((t, k)).or_default().push_back(e.response),
                _ => state.queue.push_back(e.response),
            }
        }
        Self {
            state: Mutex::new(state),
            fallback: script.fallback,
        }
    }

    pub fn answer(&self, conv: &Conversation) -> Result<String, GatewayError> {
        let last = conv.turns.iter().rev().find(|t| t.role == Role::User);
        let key = (conv.turns.len(), last.map_or_else(|| text_key(""), |t| turn_key(&t.text, &t.images)));
        let mut st = self.state.lock().expect("script state poisoned");
        if let Some(r) = st.keyed.get_mut(&key).and_then(VecDeque::pop_front) {
            return Ok(r);
        }
        if let Some(r) = st.queue.pop_front() {
            return Ok(r);
        }
        self.fallback.clone().ok_or(GatewayError::ScriptExhausted)
    }
}

#[async_trait]
impl ModelBackend for ScriptedBackend {
    async fn complete(&self, conv: &Conversation) -> Result<String, GatewayError> {
        self.answer(conv)
    }
}
